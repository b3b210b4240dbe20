//! Adaptive weights-and-biases (AWB) coefficient search.
//!
//! Each of the four initialization coefficients is tuned on its own, holding
//! the other three fixed, by three grid passes:
//!
//! 1. the whole admissible range `[-5, 5]`;
//! 2. the quarter-range the first result falls in, or, when that quarter
//!    holds nothing better, a window mirrored around zero;
//! 3. a narrow window `c +- 0.01` around the second result.
//!
//! Each pass keeps the best point under a fixed cascade of criteria (perf,
//! then range, countPercent, R-sq), counting only strict improvements over
//! the previous pass. The final coefficient replaces the original only if
//! perf did not get worse and no other parameter degraded. Every evaluated
//! configuration is memoized, so revisited points are never retrained.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::metrics::Metrics;
use crate::net::{WeightConfig, MAX_COEFFICIENT};
use crate::train::TrainerKind;

/// Slack when checking that non-perf parameters did not degrade.
pub const ACCEPT_TOLERANCE: f64 = 1e-9;

/// Half-width of the third-pass window.
pub const FINE_WINDOW: f64 = 0.01;

/// Offset applied to the mirrored second-pass fallback window.
pub const FALLBACK_OFFSET: f64 = 0.1;

/// Half-width of the fallback window when the first pass lands on zero.
pub const ZERO_FALLBACK_HALF_WIDTH: f64 = 0.5;

const QUARTER: f64 = MAX_COEFFICIENT / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "IW")]
    Iw,
    #[serde(rename = "B1")]
    B1,
    #[serde(rename = "B2")]
    B2,
    #[serde(rename = "LW")]
    Lw,
}

impl Quantity {
    /// Tuning order.
    pub const ALL: [Quantity; 4] = [Quantity::Iw, Quantity::B1, Quantity::B2, Quantity::Lw];
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Iw => "IW",
            Quantity::B1 => "B1",
            Quantity::B2 => "B2",
            Quantity::Lw => "LW",
        })
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IW" => Ok(Quantity::Iw),
            "B1" => Ok(Quantity::B1),
            "B2" => Ok(Quantity::B2),
            "LW" => Ok(Quantity::Lw),
            _ => Err(Error::Config(format!("unknown quantity `{s}` (IW, B1, B2, LW)"))),
        }
    }
}

impl WeightConfig {
    pub fn get(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Iw => self.iw,
            Quantity::B1 => self.b1,
            Quantity::B2 => self.b2,
            Quantity::Lw => self.lw,
        }
    }

    pub fn with(mut self, q: Quantity, value: f64) -> Self {
        match q {
            Quantity::Iw => self.iw = value,
            Quantity::B1 => self.b1 = value,
            Quantity::B2 => self.b2 = value,
            Quantity::Lw => self.lw = value,
        }
        self
    }
}

/// Grid step of each pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub first: f64,
    pub second: f64,
    pub third: f64,
}

impl StepSchedule {
    pub const LM: StepSchedule = StepSchedule {
        first: 0.1,
        second: 0.01,
        third: 0.0001,
    };

    /// Coarser steps used with the slower Bayesian trainer.
    pub const BR: StepSchedule = StepSchedule {
        first: 0.5,
        second: 0.05,
        third: 0.005,
    };

    pub fn for_trainer(kind: TrainerKind) -> Self {
        match kind {
            TrainerKind::Lm => Self::LM,
            TrainerKind::Br => Self::BR,
        }
    }
}

/// Evenly spaced points `m / scale` for `m` in `lo..=hi`.
///
/// Integer lattice coordinates keep grid values exact decimals, so a point
/// visited by a coarse pass has the same bits when a finer pass revisits it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    lo: i64,
    hi: i64,
    scale: i64,
}

impl Grid {
    /// Lattice points with spacing `step` inside `[lo, hi]`. `1 / step` must
    /// be an integer.
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let inv = 1.0 / step;
        let scale = inv.round();
        if step.is_nan() || step <= 0.0 || (inv - scale).abs() > 1e-6 * scale || scale < 1.0 {
            return Err(Error::Config(format!("grid step {step} is not 1/integer")));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Config(format!("empty search space [{lo}, {hi}]")));
        }
        let scale = scale as i64;
        let lo_m = (lo * scale as f64 - 1e-6).ceil() as i64;
        let hi_m = (hi * scale as f64 + 1e-6).floor() as i64;
        if lo_m > hi_m {
            return Err(Error::Config(format!("no grid point of step {step} in [{lo}, {hi}]")));
        }
        Ok(Self {
            lo: lo_m,
            hi: hi_m,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        1.0 / self.scale as f64
    }

    pub fn lo(&self) -> f64 {
        self.value(self.lo)
    }

    pub fn hi(&self) -> f64 {
        self.value(self.hi)
    }

    fn value(&self, m: i64) -> f64 {
        m as f64 / self.scale as f64
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (self.lo..=self.hi).map(|m| self.value(m))
    }

    pub fn contains(&self, v: f64) -> bool {
        let m = (v * self.scale as f64).round() as i64;
        (self.lo..=self.hi).contains(&m) && self.value(m) == v
    }
}

/// Search space of the first pass.
pub fn first_space(schedule: &StepSchedule) -> Result<Grid> {
    Grid::new(-MAX_COEFFICIENT, MAX_COEFFICIENT, schedule.first)
}

/// Quarter-range the first-pass coefficient falls in.
pub fn second_primary_space(c1: f64, schedule: &StepSchedule) -> Result<Grid> {
    let (lo, hi) = if (0.0..=QUARTER).contains(&c1) {
        (0.0, QUARTER)
    } else if (-QUARTER..0.0).contains(&c1) {
        (-QUARTER, 0.0)
    } else if c1 > QUARTER {
        (QUARTER, MAX_COEFFICIENT)
    } else {
        (-MAX_COEFFICIENT, -QUARTER)
    };
    Grid::new(lo, hi, schedule.second)
}

/// Window mirrored around zero, used when the quarter-range holds nothing
/// better than the first pass.
pub fn second_fallback_space(c1: f64, schedule: &StepSchedule) -> Result<Grid> {
    let (lo, hi) = if c1 > 0.0 {
        (-c1 + FALLBACK_OFFSET, c1 + FALLBACK_OFFSET)
    } else if c1 < 0.0 {
        (c1 - FALLBACK_OFFSET, -c1 - FALLBACK_OFFSET)
    } else {
        (-ZERO_FALLBACK_HALF_WIDTH, ZERO_FALLBACK_HALF_WIDTH)
    };
    Grid::new(
        lo.max(-MAX_COEFFICIENT),
        hi.min(MAX_COEFFICIENT),
        schedule.second,
    )
}

pub fn third_space(c2: f64, schedule: &StepSchedule) -> Result<Grid> {
    Grid::new(
        (c2 - FINE_WINDOW).max(-MAX_COEFFICIENT),
        (c2 + FINE_WINDOW).min(MAX_COEFFICIENT),
        schedule.third,
    )
}

/// Scores a full weight configuration.
pub trait Evaluator: Sync {
    fn evaluate(&self, cfg: &WeightConfig) -> Result<Metrics>;
}

/// Trains a real network of a fixed size for every configuration.
#[derive(Debug, Clone, Copy)]
pub struct NetworkEvaluator<'a> {
    pub experiment: Experiment<'a>,
    pub neurons: usize,
}

impl Evaluator for NetworkEvaluator<'_> {
    fn evaluate(&self, cfg: &WeightConfig) -> Result<Metrics> {
        self.experiment.fit(self.neurons, cfg).map(|f| f.metrics)
    }
}

/// Stand-in objective `perf = (c - optimum)^2 + floor` in one coefficient,
/// with the other parameters held constant. Useful for checking the search
/// logic without training networks.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticSurrogate {
    pub quantity: Quantity,
    pub optimum: f64,
    pub floor: f64,
}

impl QuadraticSurrogate {
    pub fn objective(&self, c: f64) -> f64 {
        (c - self.optimum).powi(2) + self.floor
    }
}

impl Evaluator for QuadraticSurrogate {
    fn evaluate(&self, cfg: &WeightConfig) -> Result<Metrics> {
        Ok(Metrics {
            perf: self.objective(cfg.get(self.quantity)),
            count_percent: 50.0,
            range: 10.0,
            rsq: 0.5,
        })
    }
}

/// Which rule of the cascade selected a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "perf")]
    Perf,
    #[serde(rename = "range")]
    Range,
    #[serde(rename = "countPercent")]
    CountPercent,
    #[serde(rename = "rsq")]
    Rsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pick {
    pub index: usize,
    pub criterion: Criterion,
}

/// Chooses a point of `sweep` that strictly beats `baseline`.
///
/// Rules are tried in order: lowest perf, lowest range, highest
/// countPercent, highest R-sq. The first rule whose extreme improves on the
/// baseline wins; ties go to the earliest (smallest coefficient) point.
/// Returns `None` when no rule finds an improvement.
pub fn pick_index(sweep: &[Metrics], baseline: &Metrics) -> Option<Pick> {
    fn first_extreme(sweep: &[Metrics], key: impl Fn(&Metrics) -> f64) -> Option<(usize, f64)> {
        sweep.iter().enumerate().fold(None, |best, (i, m)| {
            let v = key(m);
            match best {
                Some((_, b)) if v >= b => best,
                _ => Some((i, v)),
            }
        })
    }
    type Rule = (Criterion, fn(&Metrics) -> f64);
    let rules: [Rule; 4] = [
        (Criterion::Perf, |m| m.perf),
        (Criterion::Range, |m| m.range),
        (Criterion::CountPercent, |m| -m.count_percent),
        (Criterion::Rsq, |m| -m.rsq),
    ];
    rules.into_iter().find_map(|(criterion, key)| {
        let (index, v) = first_extreme(sweep, key)?;
        (v < key(baseline)).then_some(Pick { index, criterion })
    })
}

/// Whether `adapted` may replace `original`: perf no worse, and no other
/// parameter worse by more than [`ACCEPT_TOLERANCE`].
pub fn no_degradation(adapted: &Metrics, original: &Metrics) -> bool {
    adapted.perf <= original.perf
        && adapted.range <= original.range + ACCEPT_TOLERANCE
        && adapted.count_percent >= original.count_percent - ACCEPT_TOLERANCE
        && adapted.rsq >= original.rsq - ACCEPT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    pub coefficient: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    /// Reason the point was excluded, if training failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTrace {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub points: Vec<EvaluatedPoint>,
    pub pick: Option<Pick>,
}

impl SpaceTrace {
    fn picked(&self) -> Option<(f64, Metrics)> {
        let pick = self.pick?;
        let p = &self.points[pick.index];
        Some((p.coefficient, p.metrics.expect("picked points have metrics")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: u8,
    pub primary: SpaceTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<SpaceTrace>,
    pub fallback_taken: bool,
    /// Coefficient carried into the next pass.
    pub coefficient: f64,
    pub metrics: Metrics,
}

impl IterationTrace {
    pub fn spaces(&self) -> impl Iterator<Item = &SpaceTrace> {
        std::iter::once(&self.primary).chain(self.fallback.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwbTrace {
    pub quantity: Quantity,
    pub original_coefficient: f64,
    pub original: Metrics,
    pub iterations: Vec<IterationTrace>,
    /// Result of the third pass, before the acceptance check.
    pub adapted_coefficient: f64,
    pub adapted: Metrics,
    pub accepted: bool,
    /// Coefficient in effect after tuning.
    pub coefficient: f64,
}

impl AwbTrace {
    /// Every evaluated coefficient with its metrics, in search order.
    pub fn explored(&self) -> impl Iterator<Item = &EvaluatedPoint> {
        self.iterations
            .iter()
            .flat_map(|it| it.spaces())
            .flat_map(|s| s.points.iter())
    }

    /// Metrics now in effect: adapted if accepted, original otherwise.
    pub fn outcome(&self) -> Metrics {
        if self.accepted {
            self.adapted
        } else {
            self.original
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwbResult {
    pub initial_cfg: WeightConfig,
    pub cfg: WeightConfig,
    pub initial: Metrics,
    pub metrics: Metrics,
    pub traces: Vec<AwbTrace>,
}

/// Runs the search against one evaluator, memoizing every configuration.
pub struct AwbSearch<'e, E: Evaluator> {
    evaluator: &'e E,
    schedule: StepSchedule,
    cache: HashMap<[u64; 4], std::result::Result<Metrics, String>>,
    trainings: usize,
}

impl<'e, E: Evaluator> AwbSearch<'e, E> {
    pub fn new(evaluator: &'e E, schedule: StepSchedule) -> Self {
        Self {
            evaluator,
            schedule,
            cache: HashMap::new(),
            trainings: 0,
        }
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    /// Number of evaluator calls made so far (cache misses).
    pub fn evaluations(&self) -> usize {
        self.trainings
    }

    /// Evaluates every configuration not yet cached, in parallel, then
    /// answers from the cache in input order.
    fn evaluate_all(&mut self, cfgs: &[WeightConfig]) -> Vec<std::result::Result<Metrics, String>> {
        let mut missing: Vec<WeightConfig> = Vec::new();
        for cfg in cfgs {
            if !self.cache.contains_key(&cfg.key()) && !missing.iter().any(|m| m.key() == cfg.key()) {
                missing.push(*cfg);
            }
        }
        let evaluator = self.evaluator;
        let fresh: Vec<_> = missing
            .par_iter()
            .map(|cfg| evaluator.evaluate(cfg).map_err(|e| e.to_string()))
            .collect();
        self.trainings += missing.len();
        for (cfg, outcome) in missing.iter().zip(fresh) {
            self.cache.insert(cfg.key(), outcome);
        }
        cfgs.iter().map(|c| self.cache[&c.key()].clone()).collect()
    }

    /// Metrics for one configuration, from the cache when possible.
    pub fn evaluate(&mut self, cfg: &WeightConfig) -> Result<Metrics> {
        self.evaluate_all(std::slice::from_ref(cfg))
            .pop()
            .expect("one result")
            .map_err(Error::Numeric)
    }

    fn search_space(&mut self, cfg: &WeightConfig, q: Quantity, grid: Grid, baseline: &Metrics) -> SpaceTrace {
        let cfgs: Vec<WeightConfig> = grid.values().map(|v| cfg.with(q, v)).collect();
        let outcomes = self.evaluate_all(&cfgs);
        let points: Vec<EvaluatedPoint> = cfgs
            .iter()
            .zip(outcomes)
            .map(|(c, o)| match o {
                Ok(m) => EvaluatedPoint {
                    coefficient: c.get(q),
                    metrics: Some(m),
                    excluded: None,
                },
                Err(e) => EvaluatedPoint {
                    coefficient: c.get(q),
                    metrics: None,
                    excluded: Some(e),
                },
            })
            .collect();
        let (positions, valid): (Vec<usize>, Vec<Metrics>) = points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.metrics.map(|m| (i, m)))
            .unzip();
        let pick = pick_index(&valid, baseline).map(|p| Pick {
            index: positions[p.index],
            criterion: p.criterion,
        });
        SpaceTrace {
            lo: grid.lo(),
            hi: grid.hi(),
            step: grid.step(),
            points,
            pick,
        }
    }

    /// Whole-range pass. Keeps the original coefficient when nothing beats
    /// `baseline`.
    pub fn iteration1(&mut self, cfg: &WeightConfig, q: Quantity, baseline: &Metrics) -> Result<IterationTrace> {
        let space = self.search_space(cfg, q, first_space(&self.schedule)?, baseline);
        let (coefficient, metrics) = space.picked().unwrap_or((cfg.get(q), *baseline));
        Ok(IterationTrace {
            iteration: 1,
            primary: space,
            fallback: None,
            fallback_taken: false,
            coefficient,
            metrics,
        })
    }

    /// Quarter-range pass around `c1`, with the mirrored fallback window when
    /// the quarter holds no improvement over `prev` (the first-pass metrics).
    pub fn iteration2(&mut self, cfg: &WeightConfig, q: Quantity, c1: f64, prev: &Metrics) -> Result<IterationTrace> {
        let at = cfg.with(q, c1);
        let primary = self.search_space(&at, q, second_primary_space(c1, &self.schedule)?, prev);
        if let Some((coefficient, metrics)) = primary.picked() {
            return Ok(IterationTrace {
                iteration: 2,
                primary,
                fallback: None,
                fallback_taken: false,
                coefficient,
                metrics,
            });
        }
        let fallback = self.search_space(&at, q, second_fallback_space(c1, &self.schedule)?, prev);
        let (coefficient, metrics) = fallback.picked().unwrap_or((c1, *prev));
        Ok(IterationTrace {
            iteration: 2,
            primary,
            fallback: Some(fallback),
            fallback_taken: true,
            coefficient,
            metrics,
        })
    }

    /// Fine pass in `c2 +- 0.01`.
    pub fn iteration3(&mut self, cfg: &WeightConfig, q: Quantity, c2: f64, prev: &Metrics) -> Result<IterationTrace> {
        let at = cfg.with(q, c2);
        let space = self.search_space(&at, q, third_space(c2, &self.schedule)?, prev);
        let (coefficient, metrics) = space.picked().unwrap_or((c2, *prev));
        Ok(IterationTrace {
            iteration: 3,
            primary: space,
            fallback: None,
            fallback_taken: false,
            coefficient,
            metrics,
        })
    }

    /// Tunes one coefficient of `cfg`. `baseline` must be the metrics of
    /// `cfg` itself.
    pub fn tune_quantity(&mut self, cfg: &WeightConfig, q: Quantity, baseline: &Metrics) -> Result<AwbTrace> {
        cfg.validate()?;
        let original_coefficient = cfg.get(q);
        let it1 = self.iteration1(cfg, q, baseline)?;
        let it2 = self.iteration2(cfg, q, it1.coefficient, &it1.metrics)?;
        let it3 = self.iteration3(cfg, q, it2.coefficient, &it2.metrics)?;
        let adapted_coefficient = it3.coefficient;
        let adapted = it3.metrics;
        let accepted = adapted_coefficient != original_coefficient && no_degradation(&adapted, baseline);
        Ok(AwbTrace {
            quantity: q,
            original_coefficient,
            original: *baseline,
            iterations: vec![it1, it2, it3],
            adapted_coefficient,
            adapted,
            accepted,
            coefficient: if accepted {
                adapted_coefficient
            } else {
                original_coefficient
            },
        })
    }

    /// Tunes `quantities` one after another (in [`Quantity::ALL`] order),
    /// each against the configuration and metrics left by the previous one.
    pub fn tune_all(&mut self, cfg: &WeightConfig, baseline: &Metrics, quantities: &[Quantity]) -> Result<AwbResult> {
        let mut current = *cfg;
        let mut metrics = *baseline;
        let mut traces = Vec::new();
        for q in Quantity::ALL.into_iter().filter(|q| quantities.contains(q)) {
            let trace = self.tune_quantity(&current, q, &metrics)?;
            current = current.with(q, trace.coefficient);
            metrics = trace.outcome();
            traces.push(trace);
        }
        Ok(AwbResult {
            initial_cfg: *cfg,
            cfg: current,
            initial: *baseline,
            metrics,
            traces,
        })
    }
}

/// One row per evaluated point:
/// `quantity,iteration,space,coefficient,perf,range,countPercent,rsq,excluded`.
pub fn write_trace_csv<W: Write>(traces: &[AwbTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("csv write: {e}"));
    w.write_record([
        "quantity",
        "iteration",
        "space",
        "coefficient",
        "perf",
        "range",
        "countPercent",
        "rsq",
        "excluded",
    ])
    .map_err(err)?;
    for t in traces {
        for it in &t.iterations {
            for (kind, space) in [("primary", Some(&it.primary)), ("fallback", it.fallback.as_ref())] {
                let Some(space) = space else { continue };
                for p in &space.points {
                    let num = |f: fn(&Metrics) -> f64| p.metrics.as_ref().map(|m| f(m).to_string()).unwrap_or_default();
                    w.write_record([
                        t.quantity.to_string(),
                        it.iteration.to_string(),
                        kind.to_string(),
                        p.coefficient.to_string(),
                        num(|m| m.perf),
                        num(|m| m.range),
                        num(|m| m.count_percent),
                        num(|m| m.rsq),
                        p.excluded.clone().unwrap_or_default(),
                    ])
                    .map_err(err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Data(format!("csv write: {e}")))?;
    Ok(())
}
