//! Levenberg-Marquardt and Bayesian-regularization training.
//!
//! Both trainers solve damped Gauss-Newton normal equations on the training
//! subset of an interleaved split. LM stops early on validation failures and
//! returns the parameters of the best validation epoch; BR ignores the
//! validation subset for stopping and instead adapts the weight-decay
//! hyperparameters after every accepted step.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::net::{jacobian, predict, MlpParams};

/// Consecutive epochs with `|d gamma| < GAMMA_TOL` (and alpha, beta within
/// `HYPER_RTOL` relative change) before BR reports convergence.
const GAMMA_STABLE_EPOCHS: usize = 5;
const GAMMA_TOL: f64 = 1e-3;
const HYPER_RTOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainerKind {
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "BR")]
    Br,
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainerKind::Lm => "LM",
            TrainerKind::Br => "BR",
        })
    }
}

impl FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LM" | "TRAINLM" => Ok(TrainerKind::Lm),
            "BR" | "TRAINBR" => Ok(TrainerKind::Br),
            _ => Err(Error::Config(format!("unknown trainer `{s}` (expected LM or BR)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub mu0: f64,
    pub mu_inc: f64,
    pub mu_dec: f64,
    pub mu_max: f64,
    /// Validation patience; LM only.
    pub max_fail: usize,
    pub min_grad: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            mu0: 1e-3,
            mu_inc: 10.0,
            mu_dec: 0.1,
            mu_max: 1e10,
            max_fail: 6,
            min_grad: 1e-7,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu0", self.mu0),
            ("mu_inc", self.mu_inc),
            ("mu_dec", self.mu_dec),
            ("mu_max", self.mu_max),
            ("min_grad", self.min_grad),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("train option {name} must be positive, got {v}")));
            }
        }
        if self.max_epochs == 0 || self.max_fail == 0 {
            return Err(Error::Config("max_epochs and max_fail must be positive".into()));
        }
        if !(self.mu_dec < 1.0 && 1.0 < self.mu_inc) {
            return Err(Error::Config("need mu_dec < 1 < mu_inc".into()));
        }
        if self.mu0 > self.mu_max {
            return Err(Error::Config("mu0 exceeds mu_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    ValPatience,
    MinGrad,
    MuMax,
    Converged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_sse: f64,
    pub val_sse: f64,
    pub mu: f64,
    /// Bayesian hyperparameters, BR only.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: MlpParams,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub history: Vec<EpochRecord>,
    /// BR hyperparameter updates that had to be clamped to stay positive.
    pub clamped_updates: usize,
}

impl TrainedModel {
    /// Final effective parameter count, BR only.
    pub fn gamma(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.gamma)
    }

    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_sse,val_sse,mu,alpha,beta,gamma")?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.history {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.train_sse,
                r.val_sse,
                r.mu,
                opt(r.alpha),
                opt(r.beta),
                opt(r.gamma)
            )?;
        }
        Ok(())
    }
}

pub fn train(
    kind: TrainerKind,
    init: &MlpParams,
    data: &Dataset,
    split: &SplitIndices,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    match kind {
        TrainerKind::Lm => train_lm(init, data, split, opts),
        TrainerKind::Br => train_br(init, data, split, opts),
    }
}

/// Training and validation rows pulled out of a dataset.
struct Problem {
    d: usize,
    h: usize,
    x_train: DMatrix<f64>,
    t_train: DVector<f64>,
    x_val: DMatrix<f64>,
    t_val: DVector<f64>,
}

impl Problem {
    fn new(init: &MlpParams, data: &Dataset, split: &SplitIndices) -> Result<Self> {
        split.validate_for(data.len())?;
        if init.n_inputs() != data.n_inputs() {
            return Err(Error::Data(format!(
                "network expects {} inputs, dataset has {}",
                init.n_inputs(),
                data.n_inputs()
            )));
        }
        if !init.is_finite() {
            return Err(Error::Numeric("initial parameters are not finite".into()));
        }
        let x = data.inputs();
        let t = data.targets();
        Ok(Self {
            d: init.n_inputs(),
            h: init.n_hidden(),
            x_train: x.select_rows(&split.train),
            t_train: t.select_rows(&split.train),
            x_val: x.select_rows(&split.val),
            t_val: t.select_rows(&split.val),
        })
    }

    fn params(&self, theta: &[f64]) -> MlpParams {
        MlpParams::unflatten(self.d, self.h, theta).expect("theta length fixed by problem")
    }

    fn train_residuals(&self, p: &MlpParams) -> DVector<f64> {
        predict(p, &self.x_train) - &self.t_train
    }

    fn val_sse(&self, p: &MlpParams) -> f64 {
        if self.t_val.is_empty() {
            return 0.0;
        }
        (predict(p, &self.x_val) - &self.t_val).norm_squared()
    }
}

/// Solves `(a + damping I) x = rhs` through a Cholesky factorization.
fn solve_damped(a: &DMatrix<f64>, damping: f64, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += damping;
    }
    let chol = Cholesky::<f64, Dyn>::new(m)?;
    let x = chol.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn add(theta: &[f64], delta: &DVector<f64>) -> Vec<f64> {
    theta.iter().zip(delta.iter()).map(|(a, b)| a + b).collect()
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn train_lm(
    init: &MlpParams,
    data: &Dataset,
    split: &SplitIndices,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    opts.validate()?;
    let prob = Problem::new(init, data, split)?;

    let mut theta = init.flatten();
    let mut params = init.clone();
    let mut e = prob.train_residuals(&params);
    let mut sse = e.norm_squared();
    if !sse.is_finite() {
        return Err(Error::Numeric("initial training error is not finite".into()));
    }
    let mut val_sse = prob.val_sse(&params);
    let mut best_theta = theta.clone();
    let mut best_val = val_sse;
    let mut fails = 0usize;
    let mut mu = opts.mu0;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=opts.max_epochs {
        let record = |sse: f64, val_sse: f64, mu: f64| EpochRecord {
            epoch,
            train_sse: sse,
            val_sse,
            mu,
            alpha: None,
            beta: None,
            gamma: None,
        };
        if sse == 0.0 {
            history.push(record(sse, val_sse, mu));
            stop = StopReason::Converged;
            break;
        }
        let jac = jacobian(&params, &prob.x_train);
        let grad = jac.tr_mul(&e);
        if grad.norm() < opts.min_grad {
            history.push(record(sse, val_sse, mu));
            stop = StopReason::MinGrad;
            break;
        }
        let jtj = jac.tr_mul(&jac);
        let neg_grad = -grad;

        let mut accepted = false;
        while mu <= opts.mu_max {
            if let Some(delta) = solve_damped(&jtj, mu, &neg_grad) {
                let cand = add(&theta, &delta);
                let cand_params = prob.params(&cand);
                let cand_e = prob.train_residuals(&cand_params);
                let cand_sse = cand_e.norm_squared();
                if cand_sse.is_finite() && cand_sse < sse {
                    theta = cand;
                    params = cand_params;
                    e = cand_e;
                    sse = cand_sse;
                    mu *= opts.mu_dec;
                    accepted = true;
                    break;
                }
            }
            mu *= opts.mu_inc;
        }
        if !accepted {
            history.push(record(sse, val_sse, mu));
            stop = StopReason::MuMax;
            break;
        }

        val_sse = prob.val_sse(&params);
        history.push(record(sse, val_sse, mu));
        if val_sse < best_val {
            best_val = val_sse;
            best_theta.clone_from(&theta);
            fails = 0;
        } else {
            fails += 1;
            if fails >= opts.max_fail {
                stop = StopReason::ValPatience;
                break;
            }
        }
    }

    let params = prob.params(&best_theta);
    if !params.is_finite() {
        return Err(Error::Numeric("trained parameters are not finite".into()));
    }
    Ok(TrainedModel {
        params,
        epochs_run: history.len(),
        stop_reason: stop,
        history,
        clamped_updates: 0,
    })
}

/// Bayesian hyperparameters of the regularized objective
/// `F = beta * E_D + alpha * E_W`.
#[derive(Debug, Clone, Copy)]
struct Hyper {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Hyper {
    fn is_stable_since(&self, previous: &Hyper) -> bool {
        let rel = |a: f64, b: f64| (a - b).abs() <= HYPER_RTOL * b.abs();
        (self.gamma - previous.gamma).abs() < GAMMA_TOL
            && rel(self.alpha, previous.alpha)
            && rel(self.beta, previous.beta)
    }

    fn objective(&self, ed: f64, ew: f64) -> f64 {
        self.beta * ed + self.alpha * ew
    }

    /// `alpha = gamma / 2 E_W`, `beta = (N - gamma) / 2 E_D`. An update that
    /// would not be finite and positive keeps the previous value; returns the
    /// number of such clamps.
    fn update(&mut self, gamma: f64, ed: f64, ew: f64, n_err: f64) -> usize {
        let mut clamps = 0;
        self.gamma = gamma;
        let alpha = gamma / (2.0 * ew);
        if alpha.is_finite() && alpha > 0.0 {
            self.alpha = alpha;
        } else {
            clamps += 1;
        }
        let beta = (n_err - gamma) / (2.0 * ed);
        if beta.is_finite() && beta > 0.0 {
            self.beta = beta;
        } else {
            clamps += 1;
        }
        clamps
    }
}

/// Effective number of parameters `P - alpha tr((beta JtJ + alpha I)^-1)`,
/// kept inside `(0, P]`.
fn effective_params(jtj: &DMatrix<f64>, hyper: &Hyper) -> Option<f64> {
    let p = jtj.nrows();
    let mut h = jtj * hyper.beta;
    for i in 0..p {
        h[(i, i)] += hyper.alpha;
    }
    let inv = Cholesky::<f64, Dyn>::new(h)?.inverse();
    let gamma = p as f64 - hyper.alpha * inv.trace();
    gamma
        .is_finite()
        .then(|| gamma.clamp(f64::MIN_POSITIVE, p as f64))
}

pub fn train_br(
    init: &MlpParams,
    data: &Dataset,
    split: &SplitIndices,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    opts.validate()?;
    let prob = Problem::new(init, data, split)?;
    let n_params = init.n_params() as f64;
    let n_err = prob.t_train.len() as f64;

    let mut theta = init.flatten();
    let mut params = init.clone();
    let mut e = prob.train_residuals(&params);
    let mut ed = e.norm_squared();
    let mut ew = sum_sq(&theta);
    if !ed.is_finite() || !ew.is_finite() {
        return Err(Error::Numeric("initial training error is not finite".into()));
    }

    let mut clamped_updates = 0;
    let mut hyper = Hyper {
        alpha: 1.0,
        beta: 1.0,
        gamma: n_params,
    };
    clamped_updates += hyper.update(n_params, ed, ew, n_err);
    let mut f = hyper.objective(ed, ew);

    let mut mu = opts.mu0;
    let mut stable = 0usize;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=opts.max_epochs {
        let record = |ed: f64, mu: f64, hyper: &Hyper, params: &MlpParams| EpochRecord {
            epoch,
            train_sse: ed,
            val_sse: prob.val_sse(params),
            mu,
            alpha: Some(hyper.alpha),
            beta: Some(hyper.beta),
            gamma: Some(hyper.gamma),
        };
        if ed == 0.0 {
            history.push(record(ed, mu, &hyper, &params));
            stop = StopReason::Converged;
            break;
        }
        let jac = jacobian(&params, &prob.x_train);
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&e) * hyper.beta + DVector::from_column_slice(&theta) * hyper.alpha;
        if grad.norm() < opts.min_grad {
            history.push(record(ed, mu, &hyper, &params));
            stop = StopReason::MinGrad;
            break;
        }
        let hess = &jtj * hyper.beta;
        let neg_grad = -grad;

        let mut accepted = false;
        while mu <= opts.mu_max {
            if let Some(delta) = solve_damped(&hess, hyper.alpha + mu, &neg_grad) {
                let cand = add(&theta, &delta);
                let cand_params = prob.params(&cand);
                let cand_e = prob.train_residuals(&cand_params);
                let cand_ed = cand_e.norm_squared();
                let cand_ew = sum_sq(&cand);
                let cand_f = hyper.objective(cand_ed, cand_ew);
                if cand_f.is_finite() && cand_f < f {
                    theta = cand;
                    params = cand_params;
                    e = cand_e;
                    ed = cand_ed;
                    ew = cand_ew;
                    mu *= opts.mu_dec;
                    accepted = true;
                    break;
                }
            }
            mu *= opts.mu_inc;
        }
        if !accepted {
            history.push(record(ed, mu, &hyper, &params));
            stop = StopReason::MuMax;
            break;
        }

        let previous = hyper;
        match effective_params(&jtj, &hyper) {
            Some(gamma) => clamped_updates += hyper.update(gamma, ed, ew, n_err),
            None => clamped_updates += 1,
        }
        f = hyper.objective(ed, ew);
        history.push(record(ed, mu, &hyper, &params));

        if hyper.is_stable_since(&previous) {
            stable += 1;
            if stable >= GAMMA_STABLE_EPOCHS {
                stop = StopReason::Converged;
                break;
            }
        } else {
            stable = 0;
        }
    }

    if !params.is_finite() {
        return Err(Error::Numeric("trained parameters are not finite".into()));
    }
    Ok(TrainedModel {
        params,
        epochs_run: history.len(),
        stop_reason: stop,
        history,
        clamped_updates,
    })
}
