use super::distribution::PointForecast;
use super::training::TrainingSummary;
use super::{ModelConfig, ModelKind, TrainedModel};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::series::TimeSeries;

/// Repeat the last `season_length` values of `context` for `horizon` steps.
pub fn seasonal_naive<T: Scalar>(context: &[T], season_length: usize, horizon: usize) -> Result<Vec<T>> {
    if season_length == 0 {
        return Err(Error::config("season_length", "must be positive"));
    }
    if context.len() < season_length {
        return Err(Error::sizing("seasonal-naive context", season_length, context.len()));
    }
    let base = context.len() - season_length;
    Ok((0..horizon).map(|t| context[base + t % season_length]).collect())
}

pub fn seasonal_naive_forecast(context: &TimeSeries, season_length: usize, horizon: usize) -> Result<PointForecast> {
    Ok(PointForecast {
        start: context.end(),
        step_seconds: context.step_seconds(),
        values: seasonal_naive(context.values(), season_length, horizon)?,
    })
}

/// Seasonal-naive has nothing to learn; "training" only checks sizing.
pub(crate) fn fit_seasonal_naive(train: &TimeSeries, config: &ModelConfig) -> Result<TrainedModel> {
    config.expect_kind(ModelKind::SeasonalNaive)?;
    if train.len() < config.season_length {
        return Err(Error::sizing("seasonal-naive training data", config.season_length, train.len()));
    }
    Ok(TrainedModel::from_parts(
        config.clone(),
        ParamStore::new(),
        TrainingSummary {
            final_loss: None,
            loss_history: Vec::new(),
            train_length: train.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_full_season_is_reproduced() {
        let ctx: Vec<f64> = (1..=96).map(f64::from).collect();
        assert_eq!(seasonal_naive(&ctx, 96, 96).unwrap(), ctx);
    }

    #[test]
    fn short_season_wraps() {
        assert_eq!(seasonal_naive(&[1.0, 3.0, 5.0, 7.0], 2, 3).unwrap(), vec![5.0, 7.0, 5.0]);
    }

    #[test]
    fn season_one_is_naive() {
        assert_eq!(seasonal_naive(&[4.0f32, 9.0], 1, 1).unwrap(), vec![9.0f32]);
    }

    #[test]
    fn short_context_is_a_sizing_error() {
        assert!(matches!(
            seasonal_naive(&[1.0; 5], 6, 2),
            Err(Error::Sizing { required: 6, available: 5, .. })
        ));
    }

    proptest! {
        #[test]
        fn scale_equivariant(values in prop::collection::vec(0.0f64..500.0, 8..40), c in 0.01f64..50.0, h in 1usize..30) {
            let base = seasonal_naive(&values, 7, h).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let out = seasonal_naive(&scaled, 7, h).unwrap();
            for (a, b) in base.iter().zip(&out) {
                prop_assert_eq!(a * c, *b);
            }
        }
    }
}
