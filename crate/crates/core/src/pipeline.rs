//! End-to-end runs driven by a JSON run configuration.
//!
//! A [`RunConfig`] is what users write; every field is optional so command
//! line flags and the `quick` profile can fill gaps. [`RunConfig::resolve`]
//! turns it into a validated [`Plan`]. Precedence, highest first: explicit
//! value in the config (after flag overrides were merged into it), profile
//! value, built-in default.
//!
//! Artifacts are written without timestamps so repeated runs produce
//! identical files; wall-clock information goes to `run.log` only.

use std::fs;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::awb::{AwbResult, AwbSearch, NetworkEvaluator, Quantity, StepSchedule};
use crate::dataset::{fit_apply_scaler, interleaved_split, load_csv, rank_inputs, Dataset, InputRank, Scaler, SplitIndices};
use crate::error::{Error, Result};
use crate::experiment::{Experiment, Fitted};
use crate::metrics::{point_accuracy, Metrics};
use crate::net::{SavedModel, SetId, WeightConfig};
use crate::search::{choose_neurons_for_set, select_final, sweep_all, write_sweep_csv, FinalSelection, SweepTable, DEFAULT_NEURONS};
use crate::synthetic::{generate_engine_dataset, EngineGenSpec, TARGET_NAME};
use crate::train::{TrainOptions, TrainerKind};

pub const QUICK_MAX_EPOCHS: usize = 50;
pub const QUICK_NEURONS: RangeInclusive<usize> = 2..=12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(EngineGenSpec),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    /// 50 epochs, neurons 2..=12, coarse AWB steps.
    Quick,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "quick" => Ok(Profile::Quick),
            _ => Err(Error::Config(format!("unknown profile `{s}` (full, quick)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronRange {
    pub min: usize,
    pub max: usize,
}

/// Partial [`TrainOptions`]; unset fields come from the profile or defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub max_epochs: Option<usize>,
    pub mu0: Option<f64>,
    pub mu_inc: Option<f64>,
    pub mu_dec: Option<f64>,
    pub mu_max: Option<f64>,
    pub max_fail: Option<usize>,
    pub min_grad: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleChoice {
    /// Steps matching the trainer (the default outside the quick profile).
    Trainer,
    Lm,
    Br,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwbConfig {
    pub enabled: Option<bool>,
    pub quantities: Option<Vec<Quantity>>,
    pub schedule: Option<ScheduleChoice>,
}

/// Fixed network shape for the `train` and `awb` commands, skipping the
/// neuron search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelChoice {
    pub set: SetId,
    pub neurons: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSource>,
    pub target_column: Option<String>,
    pub trainer: Option<TrainerKind>,
    pub neurons: Option<NeuronRange>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub awb: AwbConfig,
    pub model: Option<ModelChoice>,
    pub output_dir: Option<PathBuf>,
    pub profile: Option<Profile>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(&self) -> Result<Plan> {
        let profile = self.profile.unwrap_or_default();
        let data = self
            .data
            .clone()
            .ok_or_else(|| Error::Config("no data source (set `data.csv` or `data.synthetic`)".into()))?;
        if let DataSource::Synthetic(spec) = &data {
            spec.validate()?;
        }
        let target_column = match (&self.target_column, &data) {
            (Some(t), _) => t.clone(),
            (None, DataSource::Synthetic(_)) => TARGET_NAME.to_string(),
            (None, DataSource::Csv(_)) => return Err(Error::Config("`target_column` is required for CSV data".into())),
        };
        let trainer = self.trainer.unwrap_or(TrainerKind::Lm);

        let neurons = match self.neurons {
            Some(r) => r.min..=r.max,
            None if profile == Profile::Quick => QUICK_NEURONS,
            None => DEFAULT_NEURONS,
        };
        if neurons.start() < &1 || neurons.is_empty() {
            return Err(Error::Config(format!(
                "neuron range {}..={} must be non-empty and start at 1 or more",
                neurons.start(),
                neurons.end()
            )));
        }

        let defaults = TrainOptions::default();
        let t = &self.train;
        let train = TrainOptions {
            max_epochs: t.max_epochs.unwrap_or(match profile {
                Profile::Quick => QUICK_MAX_EPOCHS,
                Profile::Full => defaults.max_epochs,
            }),
            mu0: t.mu0.unwrap_or(defaults.mu0),
            mu_inc: t.mu_inc.unwrap_or(defaults.mu_inc),
            mu_dec: t.mu_dec.unwrap_or(defaults.mu_dec),
            mu_max: t.mu_max.unwrap_or(defaults.mu_max),
            max_fail: t.max_fail.unwrap_or(defaults.max_fail),
            min_grad: t.min_grad.unwrap_or(defaults.min_grad),
        };
        train.validate()?;

        let schedule = match self.awb.schedule {
            Some(ScheduleChoice::Lm) => StepSchedule::LM,
            Some(ScheduleChoice::Br) => StepSchedule::BR,
            Some(ScheduleChoice::Trainer) => StepSchedule::for_trainer(trainer),
            None if profile == Profile::Quick => StepSchedule::BR,
            None => StepSchedule::for_trainer(trainer),
        };
        let quantities = self.awb.quantities.clone().unwrap_or_else(|| Quantity::ALL.to_vec());
        if let Some(m) = &self.model {
            if m.neurons == 0 {
                return Err(Error::Config("model.neurons must be at least 1".into()));
            }
        }

        Ok(Plan {
            data,
            target_column,
            trainer,
            neurons,
            train,
            awb_enabled: self.awb.enabled.unwrap_or(true),
            quantities,
            schedule,
            model: self.model,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            profile,
        })
    }
}

/// A validated, fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub data: DataSource,
    pub target_column: String,
    pub trainer: TrainerKind,
    pub neurons: RangeInclusive<usize>,
    pub train: TrainOptions,
    pub awb_enabled: bool,
    pub quantities: Vec<Quantity>,
    pub schedule: StepSchedule,
    pub model: Option<ModelChoice>,
    pub output_dir: PathBuf,
    pub profile: Profile,
}

/// Raw and scaled data with the division every stage shares.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub raw: Dataset,
    pub scaled: Dataset,
    pub scaler: Scaler,
    pub split: SplitIndices,
    pub ranking: Vec<InputRank>,
}

impl Prepared {
    pub fn experiment<'a>(&'a self, plan: &'a Plan) -> Experiment<'a> {
        Experiment {
            data: &self.scaled,
            split: &self.split,
            trainer: plan.trainer,
            opts: &plan.train,
        }
    }
}

pub fn load_data(plan: &Plan) -> Result<Dataset> {
    match &plan.data {
        DataSource::Csv(path) => load_csv(path, &plan.target_column),
        DataSource::Synthetic(spec) => {
            let data = generate_engine_dataset(spec)?;
            if plan.target_column != data.target_name() {
                return Err(Error::Config(format!(
                    "synthetic data has target `{}`, config asks for `{}`",
                    data.target_name(),
                    plan.target_column
                )));
            }
            Ok(data)
        }
    }
}

pub fn prepare(plan: &Plan) -> Result<Prepared> {
    let raw = load_data(plan)?;
    let split = interleaved_split(raw.len())?;
    let (scaler, scaled) = fit_apply_scaler(&raw)?;
    let ranking = rank_inputs(&raw);
    Ok(Prepared {
        raw,
        scaled,
        scaler,
        split,
        ranking,
    })
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub tables: Vec<SweepTable>,
    pub selection: FinalSelection,
}

pub fn neuron_search(plan: &Plan, prepared: &Prepared) -> Result<SearchOutcome> {
    let tables = sweep_all(&prepared.experiment(plan), plan.neurons.clone());
    let per_set: Vec<_> = tables.iter().filter_map(|t| choose_neurons_for_set(t).ok()).collect();
    let selection = select_final(&per_set)?;
    Ok(SearchOutcome { tables, selection })
}

/// Summary written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub trainer: TrainerKind,
    pub set: SetId,
    pub neurons: usize,
    pub initial_cfg: WeightConfig,
    pub cfg: WeightConfig,
    pub initial: Metrics,
    #[serde(rename = "final")]
    pub final_metrics: Metrics,
    pub stop_reason: crate::train::StopReason,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub prepared: Prepared,
    pub search: Option<SearchOutcome>,
    pub set: SetId,
    pub neurons: usize,
    pub initial: Fitted,
    pub awb: Option<AwbResult>,
    pub fitted: Fitted,
    pub report: MetricsReport,
}

/// Which stages a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    /// Neuron search only.
    Search,
    /// Train one network of the configured shape.
    Train,
    /// Coefficient tuning; searches neurons first unless `model` is set.
    Awb,
    /// Everything, with AWB when enabled.
    Full,
}

/// Runs the requested stages and returns everything in memory.
pub fn execute(plan: &Plan, stages: Stages) -> Result<RunOutcome> {
    let prepared = prepare(plan)?;
    let (search, set, neurons) = match (stages, plan.model) {
        (Stages::Train, None) => {
            return Err(Error::Config("`train` needs a model (set and neurons)".into()));
        }
        (Stages::Train | Stages::Awb, Some(m)) => (None, m.set, m.neurons),
        _ => {
            let s = neuron_search(plan, &prepared)?;
            let (set, n) = (s.selection.set, s.selection.neurons);
            (Some(s), set, n)
        }
    };

    let exp = prepared.experiment(plan);
    let initial_cfg = set.config();
    let initial = exp.fit(neurons, &initial_cfg)?;

    let run_awb = match stages {
        Stages::Awb => true,
        Stages::Full => plan.awb_enabled,
        _ => false,
    };
    let (awb, fitted) = if run_awb {
        let evaluator = NetworkEvaluator {
            experiment: exp,
            neurons,
        };
        let mut awb = AwbSearch::new(&evaluator, plan.schedule);
        let baseline = awb.evaluate(&initial_cfg)?;
        let result = awb.tune_all(&initial_cfg, &baseline, &plan.quantities)?;
        let fitted = if result.cfg == initial_cfg {
            initial.clone()
        } else {
            exp.fit(neurons, &result.cfg)?
        };
        (Some(result), fitted)
    } else {
        (None, initial.clone())
    };

    let report = MetricsReport {
        trainer: plan.trainer,
        set,
        neurons,
        initial_cfg,
        cfg: awb.as_ref().map_or(initial_cfg, |a| a.cfg),
        initial: initial.metrics,
        final_metrics: fitted.metrics,
        stop_reason: fitted.model.stop_reason,
        epochs_run: fitted.model.epochs_run,
    };
    Ok(RunOutcome {
        prepared,
        search,
        set,
        neurons,
        initial,
        awb,
        fitted,
        report,
    })
}

/// Artifact file names inside the output directory.
pub mod files {
    pub const METRICS: &str = "metrics.json";
    pub const MODEL: &str = "model.json";
    pub const SWEEP: &str = "sweep.csv";
    pub const SELECTION: &str = "selection.json";
    pub const AWB_TRACE: &str = "awb_trace.json";
    pub const AWB_TRACE_CSV: &str = "awb_trace.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const HISTORY: &str = "history.csv";
    pub const RANKING: &str = "ranking.json";
    pub const RUN_LOG: &str = "run.log";
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    let path = dir.join(name);
    fs::File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Data(format!("{name}: {e}")))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(dir.join(name), e))
}

/// `index,target,prediction,accuracy` for every sample.
pub fn write_predictions_csv<W: Write>(targets: &[f64], preds: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "index,target,prediction,accuracy")?;
    for (i, (t, p)) in targets.iter().zip(preds).enumerate() {
        writeln!(out, "{i},{t},{p},{}", point_accuracy(*p, *t))?;
    }
    Ok(())
}

/// Writes every artifact of `outcome` into `dir`.
pub fn write_artifacts(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(dir, files::RANKING, &outcome.prepared.ranking)?;
    if let Some(search) = &outcome.search {
        let out = create(dir, files::SWEEP)?;
        write_sweep_csv(&search.tables, out)?;
        write_json(dir, files::SELECTION, &search.selection)?;
    }
    if let Some(awb) = &outcome.awb {
        write_json(dir, files::AWB_TRACE, awb)?;
        let out = create(dir, files::AWB_TRACE_CSV)?;
        crate::awb::write_trace_csv(&awb.traces, out)?;
    }
    let model = SavedModel::new(&outcome.fitted.model.params, outcome.report.cfg, outcome.prepared.scaler.clone());
    write_json(dir, files::MODEL, &model)?;
    write_json(dir, files::METRICS, &outcome.report)?;

    let io = |name: &str| {
        let path = dir.join(name);
        move |e| Error::io(path, e)
    };
    let mut out = create(dir, files::PREDICTIONS)?;
    write_predictions_csv(outcome.prepared.raw.targets().as_slice(), &outcome.fitted.predictions, &mut out)
        .and_then(|_| out.flush())
        .map_err(io(files::PREDICTIONS))?;
    let mut out = create(dir, files::HISTORY)?;
    outcome
        .fitted
        .model
        .write_history_csv(&mut out)
        .and_then(|_| out.flush())
        .map_err(io(files::HISTORY))?;
    Ok(())
}

/// Appends one line to `run.log`; the only artifact carrying wall-clock time.
pub fn append_run_log(dir: &Path, command: &str, elapsed: std::time::Duration, status: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(files::RUN_LOG);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    writeln!(f, "unix={now} command={command} elapsed_s={:.3} status={status}", elapsed.as_secs_f64())
        .map_err(|e| Error::io(&path, e))
}

/// Executes `stages`, writes the artifacts and logs the run.
pub fn run_to_dir(plan: &Plan, stages: Stages, command: &str) -> Result<RunOutcome> {
    let started = Instant::now();
    let result = execute(plan, stages).and_then(|o| write_artifacts(&plan.output_dir, &o).map(|_| o));
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    append_run_log(&plan.output_dir, command, started.elapsed(), &status)?;
    result
}

/// Runs `f` on a dedicated pool of `jobs` threads (all cores when `None`).
/// Results do not depend on the thread count.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize) -> RunConfig {
        RunConfig {
            data: Some(DataSource::Synthetic(EngineGenSpec {
                n,
                seed: 1,
                noise_sd: 0.5,
            })),
            ..Default::default()
        }
    }

    #[test]
    fn quick_profile_resolution() {
        let mut cfg = synthetic(100);
        cfg.profile = Some(Profile::Quick);
        let plan = cfg.resolve().unwrap();
        assert_eq!(plan.train.max_epochs, QUICK_MAX_EPOCHS);
        assert_eq!(plan.neurons, QUICK_NEURONS);
        assert_eq!(plan.schedule, StepSchedule::BR);
        assert_eq!(plan.target_column, TARGET_NAME);

        cfg.train.max_epochs = Some(7);
        cfg.neurons = Some(NeuronRange { min: 3, max: 4 });
        cfg.awb.schedule = Some(ScheduleChoice::Trainer);
        let plan = cfg.resolve().unwrap();
        assert_eq!(plan.train.max_epochs, 7);
        assert_eq!(plan.neurons, 3..=4);
        assert_eq!(plan.schedule, StepSchedule::LM);
    }

    #[test]
    fn full_profile_defaults() {
        let plan = synthetic(100).resolve().unwrap();
        assert_eq!(plan.train, TrainOptions::default());
        assert_eq!(plan.neurons, DEFAULT_NEURONS);
        assert_eq!(plan.quantities, Quantity::ALL);
        assert!(plan.awb_enabled);
    }

    #[test]
    fn config_errors() {
        assert!(RunConfig::default().resolve().unwrap_err().is_config());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err().is_config());
        assert!(RunConfig::from_json(r#"{"train": {"epochs": 3}}"#).is_err());
        let csv = RunConfig {
            data: Some(DataSource::Csv("x.csv".into())),
            ..Default::default()
        };
        assert!(csv.resolve().unwrap_err().is_config());
        let mut bad = synthetic(100);
        bad.neurons = Some(NeuronRange { min: 5, max: 2 });
        assert!(bad.resolve().is_err());
        let mut bad = synthetic(100);
        bad.train.mu_dec = Some(3.0);
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn parses_documented_config() {
        let cfg = RunConfig::from_json(
            r#"{
                "data": {"synthetic": {"n": 2000, "seed": 7, "noise_sd": 0.5}},
                "trainer": "BR",
                "neurons": {"min": 2, "max": 50},
                "train": {"max_epochs": 100, "max_fail": 6},
                "awb": {"enabled": true, "quantities": ["IW", "LW"], "schedule": "br"},
                "model": {"set": 2, "neurons": 10},
                "output_dir": "out",
                "profile": "quick"
            }"#,
        )
        .unwrap();
        let plan = cfg.resolve().unwrap();
        assert_eq!(plan.trainer, TrainerKind::Br);
        assert_eq!(plan.quantities, [Quantity::Iw, Quantity::Lw]);
        assert_eq!(plan.model.unwrap().set.get(), 2);
        assert_eq!(plan.train.max_epochs, 100);
    }

    #[test]
    fn train_stage_needs_model() {
        let plan = synthetic(50).resolve().unwrap();
        assert!(execute(&plan, Stages::Train).unwrap_err().is_config());
    }

    #[test]
    fn zero_jobs_rejected() {
        assert!(with_jobs(Some(0), || ()).is_err());
        assert_eq!(with_jobs(Some(2), rayon::current_num_threads).unwrap(), 2);
    }
}
