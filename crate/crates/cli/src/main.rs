//! `sensorlab` command line.
//!
//! Every run-config key has a flag; flags win over the `--config` file,
//! which wins over the profile and built-in defaults. Failures print one
//! line on stderr, `error code=<n> kind=<kind> msg="<text>"`, and exit with
//! 2 (config), 3 (data or I/O) or 4 (numeric).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sensorlab::dataset::interleaved_split;
use sensorlab::pipeline::{
    self, files, AwbConfig, DataSource, MetricsReport, ModelChoice, NeuronRange, Plan, Profile, RunConfig,
    ScheduleChoice, Stages,
};
use sensorlab::search::FinalSelection;
use sensorlab::synthetic::{generate_engine_dataset, EngineGenSpec};
use sensorlab::{Error, Quantity, SetId, TrainerKind};

#[derive(Parser, Debug)]
#[command(name = "sensorlab", version, about = "Virtual-sensor network search and coefficient tuning")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for training runs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// `full` or `quick` (50 epochs, neurons 2-12, coarse AWB steps).
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// CSV input file.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Synthetic engine data: number of rows.
    #[arg(long, global = true)]
    synthetic_n: Option<usize>,
    #[arg(long, global = true)]
    synthetic_seed: Option<u64>,
    #[arg(long, global = true)]
    synthetic_noise: Option<f64>,
    #[arg(long = "target", global = true)]
    target_column: Option<String>,
    /// LM or BR.
    #[arg(long, global = true)]
    trainer: Option<TrainerKind>,
    #[arg(long, global = true)]
    neurons_min: Option<usize>,
    #[arg(long, global = true)]
    neurons_max: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    mu0: Option<f64>,
    #[arg(long, global = true)]
    mu_inc: Option<f64>,
    #[arg(long, global = true)]
    mu_dec: Option<f64>,
    #[arg(long, global = true)]
    mu_max: Option<f64>,
    #[arg(long, global = true)]
    max_fail: Option<usize>,
    #[arg(long, global = true)]
    min_grad: Option<f64>,
    /// Run the coefficient search in `run` (true/false).
    #[arg(long, global = true)]
    awb_enabled: Option<bool>,
    /// Coefficients to tune, e.g. `IW,LW`.
    #[arg(long, global = true, value_delimiter = ',')]
    quantities: Option<Vec<Quantity>>,
    /// AWB step sizes: trainer, lm or br.
    #[arg(long, global = true, value_parser = parse_schedule)]
    awb_schedule: Option<ScheduleChoice>,
    /// Weight set (1-6) for `train` and `awb`.
    #[arg(long, global = true)]
    set: Option<u8>,
    /// Hidden neurons for `train` and `awb`.
    #[arg(long, global = true)]
    neurons: Option<usize>,
    /// Output directory.
    #[arg(long = "out-dir", global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic engine dataset as CSV.
    Generate {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Noise standard deviation, kPa.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the train/validation/test indices to split.json.
    Split,
    /// Train one network (needs --set and --neurons).
    Train,
    /// Sweep neuron counts over all six weight sets and pick the final network.
    NeuronSearch,
    /// Tune starting coefficients; runs the neuron search first unless
    /// --set and --neurons are given.
    Awb,
    /// Full pipeline.
    Run,
    /// Summarize the artifacts in an output directory.
    Report {
        /// Defaults to the configured output directory.
        dir: Option<PathBuf>,
    },
}

fn parse_schedule(s: &str) -> Result<ScheduleChoice, String> {
    match s.to_ascii_lowercase().as_str() {
        "trainer" => Ok(ScheduleChoice::Trainer),
        "lm" => Ok(ScheduleChoice::Lm),
        "br" => Ok(ScheduleChoice::Br),
        _ => Err(format!("unknown schedule `{s}` (trainer, lm, br)")),
    }
}

impl Overrides {
    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig, Error> {
        if let Some(p) = &self.data {
            cfg.data = Some(DataSource::Csv(p.clone()));
        }
        if self.synthetic_n.is_some() || self.synthetic_seed.is_some() || self.synthetic_noise.is_some() {
            let base = match cfg.data {
                Some(DataSource::Synthetic(s)) => s,
                Some(DataSource::Csv(_)) if self.data.is_some() => {
                    return Err(Error::Config("--data and --synthetic-* are mutually exclusive".into()))
                }
                _ => EngineGenSpec {
                    n: 2000,
                    seed: 7,
                    noise_sd: 0.5,
                },
            };
            cfg.data = Some(DataSource::Synthetic(EngineGenSpec {
                n: self.synthetic_n.unwrap_or(base.n),
                seed: self.synthetic_seed.unwrap_or(base.seed),
                noise_sd: self.synthetic_noise.unwrap_or(base.noise_sd),
            }));
        }
        set(&mut cfg.target_column, self.target_column.clone());
        set(&mut cfg.trainer, self.trainer);
        set(&mut cfg.profile, self.profile);
        set(&mut cfg.output_dir, self.output_dir.clone());
        if self.neurons_min.is_some() || self.neurons_max.is_some() {
            let plan_default = cfg.neurons.unwrap_or(NeuronRange { min: 2, max: 50 });
            cfg.neurons = Some(NeuronRange {
                min: self.neurons_min.unwrap_or(plan_default.min),
                max: self.neurons_max.unwrap_or(plan_default.max),
            });
        }
        let t = &mut cfg.train;
        set(&mut t.max_epochs, self.max_epochs);
        set(&mut t.mu0, self.mu0);
        set(&mut t.mu_inc, self.mu_inc);
        set(&mut t.mu_dec, self.mu_dec);
        set(&mut t.mu_max, self.mu_max);
        set(&mut t.max_fail, self.max_fail);
        set(&mut t.min_grad, self.min_grad);
        let AwbConfig {
            enabled,
            quantities,
            schedule,
        } = &mut cfg.awb;
        set(enabled, self.awb_enabled);
        set(quantities, self.quantities.clone());
        set(schedule, self.awb_schedule);
        match (self.set, self.neurons, cfg.model) {
            (None, None, _) => {}
            (s, n, Some(m)) => {
                cfg.model = Some(ModelChoice {
                    set: s.map(SetId::new).transpose()?.unwrap_or(m.set),
                    neurons: n.unwrap_or(m.neurons),
                })
            }
            (Some(s), Some(n), None) => {
                cfg.model = Some(ModelChoice {
                    set: SetId::new(s)?,
                    neurons: n,
                })
            }
            _ => return Err(Error::Config("--set and --neurons must be given together".into())),
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn plan(cli: &Cli) -> Result<Plan, Error> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(base)?.resolve()
}

fn run_stage(cli: &Cli, stages: Stages, name: &str) -> Result<(), Error> {
    let plan = plan(cli)?;
    let outcome = pipeline::with_jobs(cli.jobs, || pipeline::run_to_dir(&plan, stages, name))??;
    let r = &outcome.report;
    println!(
        "set={} neurons={} perf={} countPercent={} range={} rsq={}",
        r.set, r.neurons, r.final_metrics.perf, r.final_metrics.count_percent, r.final_metrics.range, r.final_metrics.rsq
    );
    println!("artifacts in {}", plan.output_dir.display());
    Ok(())
}

fn generate(n: usize, seed: u64, noise: f64, out: &Path) -> Result<(), Error> {
    let data = generate_engine_dataset(&EngineGenSpec { n, seed, noise_sd: noise })?;
    data.save_csv(out)?;
    println!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn split(cli: &Cli) -> Result<(), Error> {
    let plan = plan(cli)?;
    let data = pipeline::load_data(&plan)?;
    let split = interleaved_split(data.len())?;
    fs::create_dir_all(&plan.output_dir).map_err(|e| Error::Data(format!("{}: {e}", plan.output_dir.display())))?;
    let path = plan.output_dir.join("split.json");
    let text = serde_json::to_string_pretty(&split).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    println!(
        "train={} val={} test={} -> {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        path.display()
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, Error> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::Data(format!("{}: {e}", path.display()))),
    }
}

fn report(cli: &Cli, dir: Option<&Path>) -> Result<(), Error> {
    let dir = match dir {
        Some(d) => d.to_path_buf(),
        None => cli
            .overrides
            .output_dir
            .clone()
            .or_else(|| cli.config.as_ref().and_then(|p| RunConfig::load(p).ok()?.output_dir))
            .unwrap_or_else(|| PathBuf::from("out")),
    };
    let metrics: MetricsReport = read_json(&dir.join(files::METRICS))?
        .ok_or_else(|| Error::Data(format!("no {} in {}", files::METRICS, dir.display())))?;
    println!("trainer {}  set {}  neurons {}", metrics.trainer, metrics.set, metrics.neurons);
    if let Some(sel) = read_json::<FinalSelection>(&dir.join(files::SELECTION))? {
        println!(
            "selection: perfCut {:.6}  countCut {:.6}  nA {:?}",
            sel.perf_cut, sel.count_cut, sel.arrays.neurons
        );
    }
    let (a, b) = (&metrics.initial, &metrics.final_metrics);
    println!("{:<14}{:>14}{:>14}{:>10}", "", "initial", "final", "change");
    let row = |name: &str, x: f64, y: f64| {
        let change = if x != 0.0 { format!("{:+.2}%", 100.0 * (y - x) / x.abs()) } else { "-".into() };
        println!("{name:<14}{x:>14.6}{y:>14.6}{change:>10}");
    };
    row("perf", a.perf, b.perf);
    row("sqrt(perf)", a.rmse(), b.rmse());
    row("countPercent", a.count_percent, b.count_percent);
    row("range", a.range, b.range);
    row("rsq", a.rsq, b.rsq);
    let c = |w: &sensorlab::WeightConfig| format!("IW={} B1={} B2={} LW={}", w.iw, w.b1, w.b2, w.lw);
    println!("coefficients: {} -> {}", c(&metrics.initial_cfg), c(&metrics.cfg));
    println!("stop: {:?} after {} epochs", metrics.stop_reason, metrics.epochs_run);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Generate { n, seed, noise, out } => generate(*n, *seed, *noise, out),
        Command::Split => split(cli),
        Command::Train => run_stage(cli, Stages::Train, "train"),
        Command::NeuronSearch => run_stage(cli, Stages::Search, "neuron-search"),
        Command::Awb => run_stage(cli, Stages::Awb, "awb"),
        Command::Run => run_stage(cli, Stages::Full, "run"),
        Command::Report { dir } => report(cli, dir.as_deref()),
    }
}

fn fail(code: u8, kind: &str, msg: &str) -> ExitCode {
    let msg: String = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error code={code} kind={kind} msg={msg:?}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(2, "config", &e.to_string()),
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = match &e {
                Error::Config(_) => (2, "config"),
                Error::Numeric(_) => (4, "numeric"),
                _ => (3, "data"),
            };
            fail(code, kind, &e.to_string())
        }
    }
}
