//! Reproducible diesel-engine style telemetry.
//!
//! Samples come from `ChaCha8Rng::seed_from_u64(seed)`. For each row the
//! generator draws, in order: engine speed, load and oil temperature
//! (uniform over their ranges), then one standard-normal noise variate that
//! is scaled by `noise_sd`. The noise variate is drawn even when
//! `noise_sd == 0` so the input stream does not depend on the noise level.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MIN_SAMPLES};
use crate::error::{Error, Result};

pub const RPM_RANGE: (f64, f64) = (650.0, 2500.0);
pub const LOAD_RANGE: (f64, f64) = (0.0, 100.0);
pub const OIL_TEMP_RANGE: (f64, f64) = (60.0, 110.0);

pub const INPUT_NAMES: [&str; 3] = ["engine_speed_rpm", "load_pct", "oil_temp_c"];
pub const TARGET_NAME: &str = "oil_pressure_kpa";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineGenSpec {
    pub n: usize,
    pub seed: u64,
    /// Standard deviation of the additive noise, kPa.
    pub noise_sd: f64,
}

impl EngineGenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "synthetic n = {} is below the minimum of {MIN_SAMPLES}",
                self.n
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }
}

/// Noiseless oil pressure in kPa. Increasing in engine speed over the whole
/// speed range (the quadratic peaks near 3333 rpm).
pub fn oil_pressure(rpm: f64, load_pct: f64, oil_temp_c: f64) -> f64 {
    120.0 + 0.10 * rpm - 1.5e-5 * rpm * rpm + 0.8 * load_pct - 0.6 * (oil_temp_c - 90.0)
}

pub fn generate_engine_dataset(spec: &EngineGenSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut inputs = Vec::with_capacity(spec.n * 3);
    let mut targets = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let rpm = rng.random_range(RPM_RANGE.0..=RPM_RANGE.1);
        let load = rng.random_range(LOAD_RANGE.0..=LOAD_RANGE.1);
        let temp = rng.random_range(OIL_TEMP_RANGE.0..=OIL_TEMP_RANGE.1);
        let z: f64 = rng.sample(StandardNormal);
        inputs.extend([rpm, load, temp]);
        targets.push(oil_pressure(rpm, load, temp) + spec.noise_sd * z);
    }
    Dataset::new(
        INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        DMatrix::from_row_slice(spec.n, 3, &inputs),
        TARGET_NAME,
        DVector::from_vec(targets),
    )
}
