//! Single-hidden-layer regression network: configured initialization,
//! forward pass and the analytic error Jacobian.
//!
//! Parameters flatten to one vector in the fixed order `iw` (row-major,
//! `h x d`), `b1` (`h`), `lw` (`h`), `b2` (1). Traces, Jacobian columns and
//! saved models all use this order.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Scaler;
use crate::error::{Error, Result};

/// Largest coefficient magnitude accepted in a [`WeightConfig`].
pub const MAX_COEFFICIENT: f64 = 5.0;

/// Multiplicative step of the fixed symmetry-breaking perturbation.
pub const PERTURBATION: f64 = 1e-3;

/// The four scalar coefficients that expand into the initial weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub iw: f64,
    pub b1: f64,
    pub b2: f64,
    pub lw: f64,
}

impl WeightConfig {
    pub const fn new(iw: f64, b1: f64, b2: f64, lw: f64) -> Self {
        Self { iw, b1, b2, lw }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("IW", self.iw), ("B1", self.b1), ("B2", self.b2), ("LW", self.lw)] {
            if !c.is_finite() || c.abs() > MAX_COEFFICIENT {
                return Err(Error::Config(format!(
                    "{name} coefficient {c} outside [-{MAX_COEFFICIENT}, {MAX_COEFFICIENT}]"
                )));
            }
        }
        Ok(())
    }

    /// Bit pattern of the four coefficients, usable as an exact map key.
    pub fn key(&self) -> [u64; 4] {
        [
            self.iw.to_bits(),
            self.b1.to_bits(),
            self.b2.to_bits(),
            self.lw.to_bits(),
        ]
    }
}

/// One of the six hard-coded starting configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SetId(u8);

impl SetId {
    pub const ALL: [SetId; 6] = [SetId(1), SetId(2), SetId(3), SetId(4), SetId(5), SetId(6)];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=6).contains(&id) {
            Ok(SetId(id))
        } else {
            Err(Error::Config(format!("weight set {id} does not exist (1..=6)")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn config(self) -> WeightConfig {
        match self.0 {
            1 => WeightConfig::new(1.0, 1.0, 1.0, 0.0),
            2 => WeightConfig::new(1.0, 1.0, 1.0, 1.0),
            3 => WeightConfig::new(1.0, 0.0, 0.0, 1.0),
            4 => WeightConfig::new(1.0, 1.0, 0.0, 1.0),
            5 => WeightConfig::new(1.0, 0.0, 1.0, 1.0),
            6 => WeightConfig::new(0.0, 1.0, 1.0, 1.0),
            _ => unreachable!("SetId is validated on construction"),
        }
    }
}

impl TryFrom<u8> for SetId {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        SetId::new(id)
    }
}

impl From<SetId> for u8 {
    fn from(s: SetId) -> u8 {
        s.0
    }
}

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Live network parameters in scaled-input space.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Input weights, `h x d`.
    pub iw: DMatrix<f64>,
    /// Hidden bias.
    pub b1: DVector<f64>,
    /// Hidden-to-output weights.
    pub lw: DVector<f64>,
    /// Output bias.
    pub b2: f64,
}

/// Number of flattened parameters for `d` inputs and `h` hidden neurons.
pub fn param_count(d: usize, h: usize) -> usize {
    h * d + 2 * h + 1
}

impl MlpParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            iw: DMatrix::zeros(h, d),
            b1: DVector::zeros(h),
            lw: DVector::zeros(h),
            b2: 0.0,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.iw.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.iw.nrows()
    }

    pub fn n_params(&self) -> usize {
        param_count(self.n_inputs(), self.n_hidden())
    }

    pub fn is_finite(&self) -> bool {
        self.iw.iter().chain(self.b1.iter()).chain(self.lw.iter()).all(|v| v.is_finite())
            && self.b2.is_finite()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let (h, d) = (self.n_hidden(), self.n_inputs());
        let mut theta = Vec::with_capacity(param_count(d, h));
        for j in 0..h {
            theta.extend(self.iw.row(j).iter());
        }
        theta.extend(self.b1.iter());
        theta.extend(self.lw.iter());
        theta.push(self.b2);
        theta
    }

    pub fn unflatten(d: usize, h: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != param_count(d, h) {
            return Err(Error::Data(format!(
                "expected {} parameters for d={d}, h={h}, got {}",
                param_count(d, h),
                theta.len()
            )));
        }
        let (iw, rest) = theta.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (lw, b2) = rest.split_at(h);
        Ok(Self {
            iw: DMatrix::from_row_slice(h, d, iw),
            b1: DVector::from_column_slice(b1),
            lw: DVector::from_column_slice(lw),
            b2: b2[0],
        })
    }

    /// Sum of squared parameters.
    pub fn sum_sq(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum()
    }
}

/// Expands `cfg` into full matrices for `d` inputs and `h` neurons.
///
/// Element `k` of each flattened matrix is scaled by `1 + PERTURBATION * k`
/// so hidden units are not exact copies of each other.
pub fn init_params(d: usize, h: usize, cfg: &WeightConfig) -> MlpParams {
    assert!(d >= 1 && h >= 1, "network needs d >= 1 and h >= 1");
    let bump = |k: usize| 1.0 + PERTURBATION * k as f64;
    MlpParams {
        iw: DMatrix::from_fn(h, d, |j, i| cfg.iw * bump(j * d + i)),
        b1: DVector::from_fn(h, |j, _| cfg.b1 * bump(j)),
        lw: DVector::from_fn(h, |j, _| cfg.lw * bump(j)),
        b2: cfg.b2,
    }
}

/// `b2 + lw . tanh(iw x + b1)`
pub fn forward(p: &MlpParams, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), p.n_inputs());
    let mut y = p.b2;
    for j in 0..p.n_hidden() {
        let mut z = p.b1[j];
        for (i, xi) in x.iter().enumerate() {
            z += p.iw[(j, i)] * xi;
        }
        y += p.lw[j] * z.tanh();
    }
    y
}

/// Predictions for every row of `x` (N x d).
pub fn predict(p: &MlpParams, x: &DMatrix<f64>) -> DVector<f64> {
    let mut row = vec![0.0; x.ncols()];
    DVector::from_fn(x.nrows(), |r, _| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = x[(r, c)];
        }
        forward(p, &row)
    })
}

/// Derivatives of the errors `e_i = y(x_i) - t_i` with respect to the
/// flattened parameters; row `i` belongs to sample `i`.
pub fn jacobian(p: &MlpParams, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (h, d) = (p.n_hidden(), p.n_inputs());
    let n = x.nrows();
    let b1_at = h * d;
    let lw_at = b1_at + h;
    let b2_at = lw_at + h;
    let mut jac = DMatrix::zeros(n, param_count(d, h));
    for r in 0..n {
        for j in 0..h {
            let mut z = p.b1[j];
            for i in 0..d {
                z += p.iw[(j, i)] * x[(r, i)];
            }
            let a = z.tanh();
            let delta = p.lw[j] * (1.0 - a * a);
            for i in 0..d {
                jac[(r, j * d + i)] = delta * x[(r, i)];
            }
            jac[(r, b1_at + j)] = delta;
            jac[(r, lw_at + j)] = a;
        }
        jac[(r, b2_at)] = 1.0;
    }
    jac
}

/// On-disk form of a trained network together with its input scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedModel {
    pub d: usize,
    pub h: usize,
    pub cfg: WeightConfig,
    pub iw: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub lw: Vec<f64>,
    pub b2: f64,
    pub scaler: Scaler,
}

impl SavedModel {
    pub fn new(params: &MlpParams, cfg: WeightConfig, scaler: Scaler) -> Self {
        Self {
            d: params.n_inputs(),
            h: params.n_hidden(),
            cfg,
            iw: params
                .iw
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            b1: params.b1.iter().copied().collect(),
            lw: params.lw.iter().copied().collect(),
            b2: params.b2,
            scaler,
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        if self.iw.len() != self.h || self.iw.iter().any(|r| r.len() != self.d) {
            return Err(Error::Data(format!("iw is not {}x{}", self.h, self.d)));
        }
        if self.b1.len() != self.h || self.lw.len() != self.h {
            return Err(Error::Data(format!("b1/lw must have {} entries", self.h)));
        }
        let mut theta: Vec<f64> = self.iw.iter().flatten().copied().collect();
        theta.extend(&self.b1);
        theta.extend(&self.lw);
        theta.push(self.b2);
        MlpParams::unflatten(self.d, self.h, &theta)
    }

    /// Prediction for one row of raw (unscaled) inputs.
    pub fn predict_raw(&self, row: &[f64]) -> Result<f64> {
        let scaled = self.scaler.apply_row(row)?;
        Ok(forward(&self.params()?, &scaled))
    }
}
