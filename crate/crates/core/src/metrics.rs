//! Point and quantile accuracy metrics, and per-model evaluation reports.
//!
//! All metric functions are generic over [`Scalar`] and reject empty or
//! mismatched inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasters::{check_level, Forecast};
use crate::scalar::Scalar;

/// Quantile levels scored in every report: 0.1, 0.2, ..., 0.9.
pub const REPORT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn check_pair<T>(metric: &str, actual: &[T], forecast: &[T]) -> Result<()> {
    if actual.len() != forecast.len() {
        return Err(Error::shape(metric, &[actual.len()], &[forecast.len()]));
    }
    if actual.is_empty() {
        return Err(Error::Validation(format!("{metric}: no points to score")));
    }
    Ok(())
}

fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("length fits the scalar type")
}

fn abs_error_sum<T: Scalar>(actual: &[T], forecast: &[T]) -> T {
    actual
        .iter()
        .zip(forecast)
        .fold(T::zero(), |acc, (&y, &f)| acc + (y - f).abs())
}

/// Mean squared error.
pub fn mse<T: Scalar>(actual: &[T], forecast: &[T]) -> Result<T> {
    check_pair("mse", actual, forecast)?;
    let sum = actual
        .iter()
        .zip(forecast)
        .fold(T::zero(), |acc, (&y, &f)| acc + (y - f) * (y - f));
    Ok(sum / count(actual.len()))
}

/// Mean absolute error, with no scaling denominator.
pub fn mae_eq2<T: Scalar>(actual: &[T], forecast: &[T]) -> Result<T> {
    check_pair("mae", actual, forecast)?;
    Ok(abs_error_sum(actual, forecast) / count(actual.len()))
}

/// In-sample seasonal-naive MAE of `train`: the MASE denominator.
pub fn seasonal_naive_mae<T: Scalar>(train: &[T], season_length: usize) -> Result<T> {
    if season_length == 0 {
        return Err(Error::config("season_length", "must be positive"));
    }
    if train.len() <= season_length {
        return Err(Error::sizing("mase training history", season_length + 1, train.len()));
    }
    let diffs = &train[season_length..];
    let sum = diffs
        .iter()
        .zip(train)
        .fold(T::zero(), |acc, (&now, &then)| acc + (now - then).abs());
    Ok(sum / count(diffs.len()))
}

/// MAE scaled by the in-sample seasonal-naive MAE of `train`.
pub fn mase_scaled<T: Scalar>(actual: &[T], forecast: &[T], train: &[T], season_length: usize) -> Result<T> {
    let num = mae_eq2(actual, forecast)?;
    let den = seasonal_naive_mae(train, season_length)?;
    if den == T::zero() {
        return Err(Error::DegenerateScale(
            "training history is perfectly seasonal; MASE denominator is zero".into(),
        ));
    }
    Ok(num / den)
}

/// Mean absolute percentage error as a fraction (0.1 = 10 %).
pub fn mape<T: Scalar>(actual: &[T], forecast: &[T]) -> Result<T> {
    check_pair("mape", actual, forecast)?;
    let mut sum = T::zero();
    for (i, (&y, &f)) in actual.iter().zip(forecast).enumerate() {
        if y == T::zero() {
            return Err(Error::Domain(format!("mape: actual value at index {i} is zero")));
        }
        sum += (y - f).abs() / y.abs();
    }
    Ok(sum / count(actual.len()))
}

/// Normalized deviation `Σ|Y − Ŷ| / Σ|Y|`.
pub fn nd<T: Scalar>(actual: &[T], forecast: &[T]) -> Result<T> {
    check_pair("nd", actual, forecast)?;
    let den = actual.iter().fold(T::zero(), |acc, &y| acc + y.abs());
    if den == T::zero() {
        return Err(Error::DegenerateScale("nd: actual values are all zero".into()));
    }
    Ok(abs_error_sum(actual, forecast) / den)
}

/// Fraction of actual values strictly below the quantile forecast.
pub fn coverage<T: Scalar>(actual: &[T], quantile_forecast: &[T]) -> Result<T> {
    check_pair("coverage", actual, quantile_forecast)?;
    let hits = actual
        .iter()
        .zip(quantile_forecast)
        .filter(|(y, q)| y < q)
        .count();
    Ok(count::<T>(hits) / count(actual.len()))
}

/// Pinball loss of one point.
pub fn pinball<T: Scalar>(actual: T, forecast: T, level: T) -> T {
    if actual >= forecast {
        (actual - forecast) * level
    } else {
        (forecast - actual) * (T::one() - level)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

/// Pinball loss at `level`, summed or averaged over points.
pub fn quantile_loss<T: Scalar>(actual: &[T], quantile_forecast: &[T], level: T, agg: Aggregation) -> Result<T> {
    check_level(level)?;
    check_pair("quantile_loss", actual, quantile_forecast)?;
    let sum = actual
        .iter()
        .zip(quantile_forecast)
        .fold(T::zero(), |acc, (&y, &q)| acc + pinball(y, q, level));
    Ok(match agg {
        Aggregation::Sum => sum,
        Aggregation::Mean => sum / count(actual.len()),
    })
}

/// Quantile metrics at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub level: f64,
    pub quantile_loss: f64,
    pub quantile_loss_mean: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub n: usize,
    pub mse: f64,
    pub mae_eq2: f64,
    /// `None` when the training history is perfectly seasonal.
    pub mase_scaled: Option<f64>,
    pub mase_denominator: f64,
    pub mape: f64,
    /// Absent for point-only models.
    pub nd: Option<f64>,
    /// One entry per [`REPORT_LEVELS`] level; absent for point-only models.
    pub levels: Option<Vec<LevelScore>>,
}

impl EvaluationReport {
    pub fn level(&self, level: f64) -> Option<&LevelScore> {
        self.levels
            .as_ref()?
            .iter()
            .find(|s| (s.level - level).abs() < 1e-9)
    }
}

/// Score one forecast against the held-out `actual` values.
///
/// Point metrics use the point values or the predictive median. Quantile
/// metrics and ND are reported only for distributions; a point forecast
/// meant to be scored at every level (seasonal-naive) should be passed as
/// a degenerate distribution.
pub fn evaluate_model(
    model: &str,
    forecast: &Forecast,
    actual: &[f64],
    train: &[f64],
    season_length: usize,
) -> Result<EvaluationReport> {
    if forecast.horizon() != actual.len() {
        return Err(Error::shape("evaluate_model", &[forecast.horizon()], &[actual.len()]));
    }
    let levels = match forecast {
        Forecast::Point(_) => None,
        Forecast::Distribution(d) => Some(d.quantiles(&REPORT_LEVELS)?),
    };
    score(model, &forecast.central()?, levels.as_deref(), actual, train, season_length)
}

/// [`evaluate_model`] on pre-extracted values: `central` plus, optionally,
/// one quantile vector per [`REPORT_LEVELS`] level.
pub fn score(
    model: &str,
    central: &[f64],
    quantiles: Option<&[Vec<f64>]>,
    actual: &[f64],
    train: &[f64],
    season_length: usize,
) -> Result<EvaluationReport> {
    let mse_v = mse(actual, central)?;
    let mae_v = mae_eq2(actual, central)?;
    if mse_v < mae_v * mae_v * (1.0 - 1e-12) {
        return Err(Error::Contract(format!("mse {mse_v} below squared mae {mae_v}")));
    }
    let den = seasonal_naive_mae(train, season_length)?;
    let levels = match quantiles {
        None => None,
        Some(q) => {
            if q.len() != REPORT_LEVELS.len() {
                return Err(Error::shape("score levels", &[REPORT_LEVELS.len()], &[q.len()]));
            }
            let scores = REPORT_LEVELS
                .iter()
                .zip(q)
                .map(|(&level, qv)| {
                    Ok(LevelScore {
                        level,
                        quantile_loss: quantile_loss(actual, qv, level, Aggregation::Sum)?,
                        quantile_loss_mean: quantile_loss(actual, qv, level, Aggregation::Mean)?,
                        coverage: coverage(actual, qv)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(scores)
        }
    };
    Ok(EvaluationReport {
        model: model.to_string(),
        n: actual.len(),
        mse: mse_v,
        mae_eq2: mae_v,
        mase_scaled: (den > 0.0).then(|| mae_v / den),
        mase_denominator: den,
        mape: mape(actual, central)?,
        nd: match quantiles {
            Some(_) => Some(nd(actual, central)?),
            None => None,
        },
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecasters::{ForecastDistribution, PointForecast, Representation};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    const Y: [f64; 3] = [1.0, 2.0, 3.0];
    const ONES: [f64; 3] = [1.0, 1.0, 1.0];

    #[test]
    fn worked_examples() {
        assert_eq!(mse(&Y, &ONES).unwrap(), 5.0 / 3.0);
        assert_eq!(mse(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mae_eq2(&Y, &ONES).unwrap(), 1.0);
        assert_eq!(nd(&Y, &ONES).unwrap(), 0.5);
        assert_eq!(mape(&[100.0], &[90.0]).unwrap(), 0.1);
        assert_eq!(coverage(&Y, &[2.0, 2.0, 2.0]).unwrap(), 1.0 / 3.0);
        assert_eq!(coverage(&Y, &Y).unwrap(), 0.0);
        assert_eq!(coverage(&Y, &[f64::INFINITY; 3]).unwrap(), 1.0);
        assert_eq!(quantile_loss(&[10.0], &[8.0], 0.9, Aggregation::Sum).unwrap(), 1.8);
        // 1 - 0.9 is not exactly 0.1 in binary
        assert!((quantile_loss::<f64>(&[8.0], &[10.0], 0.9, Aggregation::Sum).unwrap() - 0.2).abs() < 1e-15);
        let train = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        assert_eq!(mase_scaled(&[1.0, 2.0], &[2.0, 2.0], &train, 1).unwrap(), 0.5);
    }

    #[test]
    fn identity_scores_zero() {
        assert_eq!(mse(&Y, &Y).unwrap(), 0.0);
        assert_eq!(mae_eq2(&Y, &Y).unwrap(), 0.0);
        assert_eq!(mape(&Y, &Y).unwrap(), 0.0);
        assert_eq!(nd(&Y, &Y).unwrap(), 0.0);
        assert_eq!(quantile_loss(&Y, &Y, 0.3, Aggregation::Mean).unwrap(), 0.0);
        assert_eq!(mase_scaled(&Y, &Y, &[1.0, 3.0, 2.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(mse(&Y, &[1.0]), Err(Error::Shape { op, .. }) if op == "mse"));
        assert!(mse::<f64>(&[], &[]).is_err());
        assert!(matches!(mape(&[0.0, 1.0], &[1.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(nd(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::DegenerateScale(_))));
        assert!(matches!(quantile_loss(&Y, &Y, 1.0, Aggregation::Sum), Err(Error::Domain(_))));
        let periodic = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        assert!(matches!(
            mase_scaled(&[1.0, 2.0], &[1.0, 2.0], &periodic, 2),
            Err(Error::DegenerateScale(_))
        ));
        assert!(matches!(mase_scaled(&Y, &Y, &[1.0, 2.0], 2), Err(Error::Sizing { .. })));
    }

    #[test]
    fn generic_over_f32() {
        assert_eq!(mse(&[1.0f32, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap(), 5.0f32 / 3.0);
        assert_eq!(nd(&[1.0f32, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap(), 0.5f32);
    }

    fn t0() -> chrono::DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn point_reports_omit_quantile_fields() {
        let f = Forecast::Point(PointForecast {
            start: t0(),
            step_seconds: 900,
            values: vec![1.0, 2.0, 4.0],
        });
        let r = evaluate_model("LSTM", &f, &Y, &[1.0, 2.0, 4.0, 3.0], 1).unwrap();
        assert!(r.nd.is_none() && r.levels.is_none());
        assert_eq!(r.mse, 1.0 / 3.0);
    }

    #[test]
    fn degenerate_reports_share_coverage_across_levels() {
        let point = PointForecast {
            start: t0(),
            step_seconds: 900,
            values: vec![1.5, 1.5, 3.5],
        };
        let f = Forecast::Distribution(ForecastDistribution::degenerate(&point).unwrap());
        let r = evaluate_model("SN", &f, &Y, &[1.0, 2.0, 4.0, 3.0], 1).unwrap();
        let cov: Vec<f64> = r.levels.as_ref().unwrap().iter().map(|s| s.coverage).collect();
        assert!(cov.iter().all(|&c| c == cov[0]));
        assert_eq!(cov[0], 2.0 / 3.0);
        assert!(r.nd.is_some());
    }

    #[test]
    fn perfect_median_scores_zero() {
        let paths = vec![vec![0.0, 1.0, 2.0], vec![2.0, 3.0, 4.0]];
        let f = Forecast::Distribution(
            ForecastDistribution::new(t0(), 900, Representation::SamplePaths(paths)).unwrap(),
        );
        let r = evaluate_model("m", &f, &Y, &[1.0, 2.0, 4.0], 1).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.mape, 0.0);
        assert_eq!(r.level(0.5).unwrap().quantile_loss, 0.0);
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let f = Forecast::Point(PointForecast {
            start: t0(),
            step_seconds: 900,
            values: vec![1.0, 2.0],
        });
        assert!(evaluate_model("m", &f, &Y, &[1.0, 2.0, 4.0], 1).is_err());
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(0.5f64..300.0, n),
                prop::collection::vec(0.0f64..300.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn median_loss_is_half_the_absolute_error((y, f) in pair()) {
            let ql = quantile_loss(&y, &f, 0.5, Aggregation::Sum).unwrap();
            let abs: f64 = y.iter().zip(&f).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!((ql - 0.5 * abs).abs() <= 1e-9 * abs.max(1.0));
        }

        #[test]
        fn jensen_and_ranges((y, f) in pair()) {
            let m = mse(&y, &f).unwrap();
            let a = mae_eq2(&y, &f).unwrap();
            prop_assert!(m >= a * a * (1.0 - 1e-12));
            let c = coverage(&y, &f).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(nd(&y, &f).unwrap() >= 0.0);
            prop_assert!(mape(&y, &f).unwrap() >= 0.0);
        }

        #[test]
        fn nd_is_scale_invariant((y, f) in pair(), c in 0.01f64..100.0) {
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let fs: Vec<f64> = f.iter().map(|v| v * c).collect();
            let a = nd(&y, &f).unwrap();
            prop_assert!((nd(&ys, &fs).unwrap() - a).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn mae_is_symmetric((y, f) in pair()) {
            prop_assert_eq!(mae_eq2(&y, &f).unwrap(), mae_eq2(&f, &y).unwrap());
        }

        #[test]
        fn coverage_monotone_in_level((y, f) in pair(), d1 in 0.0f64..50.0, d2 in 0.0f64..50.0) {
            let lo: Vec<f64> = f.iter().map(|v| v - d1).collect();
            let hi: Vec<f64> = f.iter().map(|v| v + d2).collect();
            let (a, b, c) = (coverage(&y, &lo).unwrap(), coverage(&y, &f).unwrap(), coverage(&y, &hi).unwrap());
            prop_assert!(a <= b && b <= c);
        }
    }
}
