use std::f64::consts::TAU;

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_distr::{Exp, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use super::{TimeSeries, DEFAULT_CAPACITY, DEFAULT_STEP_SECONDS, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// Every burst occupies this many consecutive samples.
pub const BURST_DURATION_STEPS: usize = 4;

/// Salt separating the burst stream from the noise stream so that toggling
/// bursts leaves the noise path untouched.
const BURST_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Parameters of the synthetic PRB trace: diurnal and weekly sinusoids,
/// AR(1) Gaussian noise and Poisson-placed rectangular bursts.
///
/// Randomness comes from PCG-64 (`Pcg64`, XSL-RR 128/64), seeded with
/// `seed` for the noise and `seed ^ BURST_STREAM_SALT` for the bursts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceGenConfig {
    pub series_id: String,
    pub start: DateTime<Utc>,
    pub step_seconds: i64,
    pub length: usize,
    pub base_load: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    pub noise_ar_coeff: f64,
    pub noise_sigma: f64,
    /// Expected bursts per day.
    pub burst_rate: f64,
    pub burst_height: f64,
    pub seed: u64,
    pub capacity: f64,
}

impl Default for TraceGenConfig {
    fn default() -> Self {
        Self {
            series_id: "cell-0".into(),
            start: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            step_seconds: DEFAULT_STEP_SECONDS,
            length: 4000,
            base_load: 120.0,
            daily_amplitude: 60.0,
            weekly_amplitude: 20.0,
            noise_ar_coeff: 0.8,
            noise_sigma: 6.0,
            burst_rate: 2.0,
            burst_height: 30.0,
            seed: 7,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

impl TraceGenConfig {
    /// Samples per day (96 at the default 15-minute step).
    pub fn day_steps(&self) -> usize {
        (SECONDS_PER_DAY / self.step_seconds.max(1)) as usize
    }

    pub fn week_steps(&self) -> usize {
        7 * self.day_steps()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.length == 0 {
            return fail("length", "must be positive");
        }
        if self.step_seconds <= 0 || SECONDS_PER_DAY % self.step_seconds != 0 {
            return fail("step_seconds", "must be positive and divide 86400");
        }
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return fail("capacity", "must be positive");
        }
        if !(self.base_load > 0.0 && self.base_load < self.capacity) {
            return fail("base_load", "must lie in (0, capacity)");
        }
        for (field, v) in [
            ("daily_amplitude", self.daily_amplitude),
            ("weekly_amplitude", self.weekly_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("burst_rate", self.burst_rate),
            ("burst_height", self.burst_height),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(field, "must be a finite non-negative number");
            }
        }
        if !(self.noise_ar_coeff >= 0.0 && self.noise_ar_coeff < 1.0) {
            return fail("noise_ar_coeff", "must lie in [0, 1)");
        }
        Ok(())
    }
}

pub fn generate_prb_trace(config: &TraceGenConfig) -> Result<TimeSeries> {
    config.validate()?;
    let n = config.length;
    let (day_steps, week_steps) = (config.day_steps(), config.week_steps());
    let day = day_steps as f64;
    let phi = config.noise_ar_coeff;

    let mut noise_rng = Pcg64::seed_from_u64(config.seed);
    let mut noise = Vec::with_capacity(n);
    // Start the AR(1) process in its stationary distribution.
    let mut e = if config.noise_sigma > 0.0 {
        let z: f64 = noise_rng.sample(StandardNormal);
        z * config.noise_sigma / (1.0 - phi * phi).sqrt()
    } else {
        0.0
    };
    for t in 0..n {
        if t > 0 {
            let z: f64 = noise_rng.sample(StandardNormal);
            e = phi * e + config.noise_sigma * z;
        }
        noise.push(e);
    }

    let mut bursts = vec![0.0; n];
    if config.burst_rate > 0.0 && config.burst_height > 0.0 {
        let mut burst_rng = Pcg64::seed_from_u64(config.seed ^ BURST_STREAM_SALT);
        let gap = Exp::new(config.burst_rate / day).map_err(|e| Error::config("burst_rate", e.to_string()))?;
        let mut t = 0.0f64;
        loop {
            t += burst_rng.sample(gap);
            if t >= n as f64 {
                break;
            }
            let s = t as usize;
            for b in bursts.iter_mut().skip(s).take(BURST_DURATION_STEPS) {
                *b += config.burst_height;
            }
        }
    }

    let values = (0..n)
        .map(|t| {
            // Phases from the remainder keep the sinusoids exactly periodic
            // in floating point.
            let v = config.base_load
                + config.daily_amplitude * (TAU * (t % day_steps) as f64 / day).sin()
                + config.weekly_amplitude * (TAU * (t % week_steps) as f64 / week_steps as f64).sin()
                + noise[t]
                + bursts[t];
            v.clamp(0.0, config.capacity)
        })
        .collect();
    TimeSeries::new(
        config.series_id.clone(),
        config.start,
        config.step_seconds,
        values,
        config.capacity,
    )
}
