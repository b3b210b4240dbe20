//! One training run scored on the full dataset, the unit of work shared by
//! the neuron search and the coefficient search.

use crate::dataset::{Dataset, SplitIndices};
use crate::error::Result;
use crate::metrics::{compute_metrics, Metrics};
use crate::net::{init_params, predict, WeightConfig};
use crate::train::{train, TrainOptions, TrainedModel, TrainerKind};

/// A scaled dataset, its division and the trainer settings.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub data: &'a Dataset,
    pub split: &'a SplitIndices,
    pub trainer: TrainerKind,
    pub opts: &'a TrainOptions,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: TrainedModel,
    pub predictions: Vec<f64>,
    pub metrics: Metrics,
}

impl Experiment<'_> {
    /// Initializes `neurons` hidden units from `cfg`, trains, and scores the
    /// predictions on every sample.
    pub fn fit(&self, neurons: usize, cfg: &WeightConfig) -> Result<Fitted> {
        cfg.validate()?;
        let init = init_params(self.data.n_inputs(), neurons, cfg);
        let model = train(self.trainer, &init, self.data, self.split, self.opts)?;
        let predictions: Vec<f64> = predict(&model.params, self.data.inputs()).iter().copied().collect();
        let metrics = compute_metrics(&predictions, self.data.targets().as_slice())?;
        Ok(Fitted {
            model,
            predictions,
            metrics,
        })
    }
}
