//! Fixtures shared by the benchmarks.

use sensorlab::dataset::{fit_apply_scaler, interleaved_split};
use sensorlab::synthetic::{generate_engine_dataset, EngineGenSpec};
use sensorlab::{Dataset, SplitIndices};

/// Scaled synthetic engine data with its split.
pub fn engine_fixture(n: usize) -> (Dataset, SplitIndices) {
    let raw = generate_engine_dataset(&EngineGenSpec {
        n,
        seed: 7,
        noise_sd: 0.5,
    })
    .expect("valid spec");
    let (_, scaled) = fit_apply_scaler(&raw).expect("scalable");
    let split = interleaved_split(n).expect("n >= 5");
    (scaled, split)
}
