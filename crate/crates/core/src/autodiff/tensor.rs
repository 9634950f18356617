use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn vector(data: Vec<T>) -> Self {
        let n = data.len().max(1);
        if data.is_empty() {
            return Self::zeros(&[1]);
        }
        Self::from_parts(vec![n], data)
    }

    /// Row-major 2-D tensor from rows of equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("from_rows needs non-empty rows of equal length".into()));
        }
        Ok(Self::from_parts(
            vec![rows.len(), cols],
            rows.iter().flatten().copied().collect(),
        ))
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensors have rank >= 1")
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.len(), other.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.last_dim())
    }

    /// Matrix product for `[m,k]x[k,n]`, `[.., m,k]x[k,n]` (shared right
    /// operand) and batched `[b,m,k]x[b,k,n]`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let plan = MatMulPlan::new(&self.shape, &rhs.shape)?;
        let mut out = vec![T::zero(); plan.out_len()];
        plan.forward(&self.data, &rhs.data, &mut out);
        Ok(Self::from_parts(plan.out_shape.clone(), out))
    }
}

/// Shape bookkeeping shared by the forward and backward matmul kernels.
#[derive(Clone, Debug)]
pub(crate) struct MatMulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Right operand is shared across the batch.
    pub shared_rhs: bool,
    pub out_shape: Vec<usize>,
}

impl MatMulPlan {
    pub fn new(lhs: &[usize], rhs: &[usize]) -> Result<Self> {
        let err = || Error::shape("matmul", lhs, rhs);
        if lhs.len() < 2 || rhs.len() < 2 {
            return Err(err());
        }
        let k = lhs[lhs.len() - 1];
        let m = lhs[lhs.len() - 2];
        if rhs.len() == 2 {
            if rhs[0] != k {
                return Err(err());
            }
            let n = rhs[1];
            let batch = lhs[..lhs.len() - 2].iter().product();
            let mut out_shape = lhs[..lhs.len() - 1].to_vec();
            out_shape.push(n);
            Ok(Self {
                batch,
                m,
                k,
                n,
                shared_rhs: true,
                out_shape,
            })
        } else if rhs.len() == lhs.len() && lhs.len() == 3 {
            if rhs[0] != lhs[0] || rhs[1] != k {
                return Err(err());
            }
            Ok(Self {
                batch: lhs[0],
                m,
                k,
                n: rhs[2],
                shared_rhs: false,
                out_shape: vec![lhs[0], m, rhs[2]],
            })
        } else {
            Err(err())
        }
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.m * self.n
    }

    pub fn forward<T: Scalar>(&self, a: &[T], b: &[T], c: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_rhs {
            gemm_nn(a, b, c, self.batch * m, k, n);
        } else {
            for bi in 0..self.batch {
                gemm_nn(
                    &a[bi * m * k..(bi + 1) * m * k],
                    &b[bi * k * n..(bi + 1) * k * n],
                    &mut c[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
    }

    /// Accumulates `dA += dC·Bᵀ` and `dB += Aᵀ·dC`.
    pub fn backward<T: Scalar>(
        &self,
        a: &[T],
        b: &[T],
        dc: &[T],
        da: Option<&mut [T]>,
        db: Option<&mut [T]>,
    ) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_rhs {
            let rows = self.batch * m;
            if let Some(da) = da {
                gemm_nt(dc, b, da, rows, n, k);
            }
            if let Some(db) = db {
                gemm_tn(a, dc, db, k, rows, n);
            }
        } else {
            let mut da = da;
            let mut db = db;
            for bi in 0..self.batch {
                let ab = &a[bi * m * k..(bi + 1) * m * k];
                let bb = &b[bi * k * n..(bi + 1) * k * n];
                let dcb = &dc[bi * m * n..(bi + 1) * m * n];
                if let Some(da) = da.as_deref_mut() {
                    gemm_nt(dcb, bb, &mut da[bi * m * k..(bi + 1) * m * k], m, n, k);
                }
                if let Some(db) = db.as_deref_mut() {
                    gemm_tn(ab, dcb, &mut db[bi * k * n..(bi + 1) * k * n], k, m, n);
                }
            }
        }
    }
}

/// `C[m×n] += A[m×k] · B[k×n]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `C[m×n] += A[m×k] · B[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut bt = vec![T::zero(); k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, c, m, k, n);
}

/// `C[m×n] += A[k×m]ᵀ · B[k×n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_pi * b_pj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_is_a_no_op() {
        let x = Tensor::<f64>::new(vec![3, 4], (0..12).map(|v| v as f64 * 0.5 - 2.0).collect())
            .unwrap();
        assert_eq!(Tensor::eye(3).matmul(&x).unwrap(), x);
    }

    #[test]
    fn batched_matmul_matches_per_batch() {
        let a = Tensor::<f64>::new(vec![2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::<f64>::new(vec![2, 3, 1], vec![1., 0., -1., 2., 2., 2.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 1]);
        assert_eq!(c.data(), &[-2., -2., 42., 60.]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        match a.matmul(&b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!((lhs, rhs), (vec![2, 3], vec![2, 3]));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generic_over_f32() {
        let x = Tensor::<f32>::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(Tensor::<f32>::eye(2).matmul(&x).unwrap(), x);
    }
}
