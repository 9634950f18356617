//! Gaussian quantiles, empirical quantiles and the Gaussian NLL.

// published coefficients are kept digit for digit
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn check_level<T: Scalar>(level: T) -> Result<()> {
    if level > T::zero() && level < T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level {level} outside (0, 1)")))
    }
}

fn poly<T: Scalar>(coeffs: &[f64], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + T::lit(c))
}

// Wichura (1988), algorithm AS 241 (PPND16); coefficients listed from the
// constant term upwards. Relative accuracy about 1e-16 in double precision.
const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_6,
    133.141_667_891_784_38,
    1_971.590_950_306_551_4,
    13_731.693_765_509_461,
    45_921.953_931_549_87,
    67_265.770_927_008_7,
    33_430.575_583_588_13,
    2_509.080_928_730_122_7,
];
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5_394.196_021_424_751,
    21_213.794_301_586_597,
    39_307.895_800_092_71,
    28_729.085_735_721_943,
    5_226.495_278_852_546,
];
const INNER_NUM: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_545,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
const INNER_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    0.689_767_334_985_1,
    0.148_103_976_427_480_08,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_8e-9,
];
const TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const TAIL_DEN: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_9,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_445_9e-7,
    2.044_263_103_389_939_7e-15,
];

/// Standard normal quantile Φ⁻¹(p) by the AS 241 rational approximation.
pub fn inverse_normal_cdf<T: Scalar>(p: T) -> Result<T> {
    check_level(p)?;
    let q = p - T::lit(0.5);
    if q.abs() <= T::lit(0.425) {
        let r = T::lit(0.180625) - q * q;
        return Ok(q * poly(&CENTRAL_NUM, r) / poly(&CENTRAL_DEN, r));
    }
    let tail = if q < T::zero() { p } else { T::one() - p };
    let r = (-tail.ln()).sqrt();
    let value = if r <= T::lit(5.0) {
        let r = r - T::lit(1.6);
        poly(&INNER_NUM, r) / poly(&INNER_DEN, r)
    } else {
        let r = r - T::lit(5.0);
        poly(&TAIL_NUM, r) / poly(&TAIL_DEN, r)
    };
    Ok(if q < T::zero() { -value } else { value })
}

/// Quantile of already sorted samples, interpolating linearly between order
/// statistics at rank `(n − 1)·level`.
pub fn empirical_quantile<T: Scalar>(sorted: &[T], level: T) -> Result<T> {
    check_level(level)?;
    match sorted.len() {
        0 => Err(Error::Contract("quantile of an empty sample".into())),
        1 => Ok(sorted[0]),
        n => {
            let h = T::from_usize(n - 1).expect("sample size fits scalar") * level;
            let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = h - T::from_usize(lo).expect("index fits scalar");
            // Clamping keeps rounding from breaking monotonicity in `level`.
            let v = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
            Ok(v.max(sorted[lo]).min(sorted[hi]))
        }
    }
}

/// `0.5·ln(2πσ²) + (z − μ)²/(2σ²)`
pub fn gaussian_nll<T: Scalar>(mu: T, sigma: T, z: T) -> T {
    let two = T::lit(2.0);
    let d = z - mu;
    T::lit(0.5) * (T::lit(std::f64::consts::TAU) * sigma * sigma).ln() + d * d / (two * sigma * sigma)
}
