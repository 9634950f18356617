use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use super::quantile::{check_level, empirical_quantile, inverse_normal_cdf};
use crate::error::{Error, Result};

/// Smallest admissible predictive standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < SIGMA_FLOOR {
            return Err(Error::Validation(format!(
                "gaussian parameters must be finite with sigma >= {SIGMA_FLOOR}, got ({mu}, {sigma})"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn quantile(&self, level: f64) -> Result<f64> {
        Ok(self.mu + self.sigma * inverse_normal_cdf(level)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointForecast {
    pub start: DateTime<Utc>,
    pub step_seconds: i64,
    pub values: Vec<f64>,
}

impl PointForecast {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn timestamp(&self, step: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_seconds * step as i64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// `S × N`, one row per path.
    SamplePaths(Vec<Vec<f64>>),
    Gaussian(Vec<GaussianParams>),
    /// A point forecast read as a distribution with all mass on one value.
    Degenerate(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub start: DateTime<Utc>,
    pub step_seconds: i64,
    representation: Representation,
}

impl ForecastDistribution {
    pub fn new(start: DateTime<Utc>, step_seconds: i64, representation: Representation) -> Result<Self> {
        let horizon = match &representation {
            Representation::SamplePaths(paths) => {
                if paths.len() < 2 {
                    return Err(Error::Validation("need at least 2 sample paths".into()));
                }
                let n = paths[0].len();
                if paths.iter().any(|p| p.len() != n || p.iter().any(|v| !v.is_finite())) {
                    return Err(Error::Validation("sample paths must be finite and equally long".into()));
                }
                n
            }
            Representation::Gaussian(params) => {
                for g in params {
                    GaussianParams::new(g.mu, g.sigma)?;
                }
                params.len()
            }
            Representation::Degenerate(values) => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("point values must be finite".into()));
                }
                values.len()
            }
        };
        if horizon == 0 {
            return Err(Error::Validation("forecast horizon must be positive".into()));
        }
        Ok(Self {
            start,
            step_seconds,
            representation,
        })
    }

    pub fn degenerate(point: &PointForecast) -> Result<Self> {
        Self::new(
            point.start,
            point.step_seconds,
            Representation::Degenerate(point.values.clone()),
        )
    }

    pub fn representation(&self) -> &Representation {
        &self.representation
    }

    pub fn horizon(&self) -> usize {
        match &self.representation {
            Representation::SamplePaths(p) => p[0].len(),
            Representation::Gaussian(g) => g.len(),
            Representation::Degenerate(v) => v.len(),
        }
    }

    pub fn timestamp(&self, step: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_seconds * step as i64)
    }

    /// One vector per level, each with one value per step.
    pub fn quantiles(&self, levels: &[f64]) -> Result<Vec<Vec<f64>>> {
        for &l in levels {
            check_level(l)?;
        }
        match &self.representation {
            Representation::Gaussian(params) => levels
                .iter()
                .map(|&l| {
                    let z = inverse_normal_cdf(l)?;
                    Ok(params.iter().map(|g| g.mu + g.sigma * z).collect())
                })
                .collect(),
            Representation::Degenerate(values) => Ok(levels.iter().map(|_| values.clone()).collect()),
            Representation::SamplePaths(paths) => {
                let horizon = paths[0].len();
                let mut out = vec![Vec::with_capacity(horizon); levels.len()];
                let mut column = Vec::with_capacity(paths.len());
                for t in 0..horizon {
                    column.clear();
                    column.extend(paths.iter().map(|p| p[t]));
                    column.sort_by(f64::total_cmp);
                    for (row, &l) in out.iter_mut().zip(levels) {
                        row.push(empirical_quantile(&column, l)?);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn median(&self) -> Result<Vec<f64>> {
        Ok(self.quantiles(&[0.5])?.remove(0))
    }

    /// `count` values per step: the stored paths, independent per-step
    /// Gaussian draws, or copies of the point value.
    pub fn sample_paths(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        match &self.representation {
            Representation::SamplePaths(p) => p.clone(),
            Representation::Degenerate(v) => vec![v.clone(); count],
            Representation::Gaussian(params) => {
                let mut rng = Pcg64::seed_from_u64(seed);
                (0..count)
                    .map(|_| {
                        params
                            .iter()
                            .map(|g| {
                                let z: f64 = rng.sample(StandardNormal);
                                g.mu + g.sigma * z
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// Output of a trained model: a single trajectory or a predictive
/// distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Forecast {
    Point(PointForecast),
    Distribution(ForecastDistribution),
}

impl Forecast {
    pub fn horizon(&self) -> usize {
        match self {
            Forecast::Point(p) => p.horizon(),
            Forecast::Distribution(d) => d.horizon(),
        }
    }

    pub fn start(&self) -> DateTime<Utc> {
        match self {
            Forecast::Point(p) => p.start,
            Forecast::Distribution(d) => d.start,
        }
    }

    /// Point values or the predictive median.
    pub fn central(&self) -> Result<Vec<f64>> {
        match self {
            Forecast::Point(p) => Ok(p.values.clone()),
            Forecast::Distribution(d) => d.median(),
        }
    }

    /// Quantiles; a point forecast answers every level with its values.
    pub fn quantiles(&self, levels: &[f64]) -> Result<Vec<Vec<f64>>> {
        match self {
            Forecast::Point(p) => {
                for &l in levels {
                    check_level(l)?;
                }
                Ok(levels.iter().map(|_| p.values.clone()).collect())
            }
            Forecast::Distribution(d) => d.quantiles(levels),
        }
    }
}
