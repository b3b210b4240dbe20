//! The four performance parameters: perf, countPercent, range and R-sq.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point counts toward `count_percent` at or above this accuracy.
pub const ACCURACY_THRESHOLD: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean squared error over the full dataset, in squared target units.
    pub perf: f64,
    /// Share of points with accuracy of at least 99 %.
    #[serde(rename = "countPercent")]
    pub count_percent: f64,
    /// Best minus worst point accuracy, in percent.
    pub range: f64,
    /// Squared Pearson correlation between predictions and targets.
    pub rsq: f64,
}

impl Metrics {
    /// Root of `perf`, in target units.
    pub fn rmse(&self) -> f64 {
        self.perf.sqrt()
    }
}

/// Side information gathered while computing [`Metrics`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    /// Points whose target is exactly zero (accuracy is 100 or 0 there).
    pub zero_targets: usize,
    /// Set when predictions or targets have no variance; `rsq` is then 0.
    pub rsq_undefined: bool,
}

/// Percentage accuracy of a single prediction, `100 * (1 - |err| / |target|)`
/// floored at zero.
pub fn point_accuracy(pred: f64, target: f64) -> f64 {
    if target == 0.0 {
        return if pred == 0.0 { 100.0 } else { 0.0 };
    }
    (100.0 - 100.0 * (pred - target).abs() / target.abs()).max(0.0)
}

pub fn compute_metrics(preds: &[f64], targets: &[f64]) -> Result<Metrics> {
    compute_metrics_with_flags(preds, targets).map(|(m, _)| m)
}

pub fn compute_metrics_with_flags(preds: &[f64], targets: &[f64]) -> Result<(Metrics, MetricFlags)> {
    if preds.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len();
    if n < 2 {
        return Err(Error::Data(format!("metrics need at least 2 points, got {n}")));
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite prediction".into()));
    }

    let mut flags = MetricFlags::default();
    let mut sse = 0.0;
    let mut hits = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut worst = f64::INFINITY;
    for (&p, &t) in preds.iter().zip(targets) {
        let e = p - t;
        sse += e * e;
        if t == 0.0 {
            flags.zero_targets += 1;
        }
        let acc = point_accuracy(p, t);
        if acc >= ACCURACY_THRESHOLD {
            hits += 1;
        }
        best = best.max(acc);
        worst = worst.min(acc);
    }
    let rsq = match pearson(preds, targets) {
        Some(r) => r * r,
        None => {
            flags.rsq_undefined = true;
            0.0
        }
    };
    Ok((
        Metrics {
            perf: sse / n as f64,
            count_percent: 100.0 * hits as f64 / n as f64,
            range: best - worst,
            rsq,
        },
        flags,
    ))
}

/// Pearson correlation, or `None` when either side has zero variance.
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(point_accuracy(42.0, 42.0), 100.0);
        assert_eq!(point_accuracy(99.0, 100.0), 99.0);
        assert_eq!(point_accuracy(101.0, 100.0), 99.0);
        assert_eq!(point_accuracy(-5.0, 1.0), 0.0);
        assert_eq!(point_accuracy(0.0, 0.0), 100.0);
        assert_eq!(point_accuracy(0.1, 0.0), 0.0);
    }

    #[test]
    fn perfect_fit() {
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.perf, m.count_percent, m.range), (0.0, 100.0, 0.0));
        assert!((m.rsq - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_tables() {
        let t = [100.0, 200.0, 400.0];
        let m = compute_metrics(&[99.0, 202.0, 400.0], &t).unwrap();
        assert!((m.perf - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.count_percent, 100.0);
        assert_eq!(m.range, 1.0);

        let m = compute_metrics(&[96.0, 202.0, 400.0], &t).unwrap();
        assert!((m.count_percent - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.range, 4.0);
    }

    #[test]
    fn degenerate_inputs() {
        let (m, flags) = compute_metrics_with_flags(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.rsq, 0.0);
        assert!(flags.rsq_undefined);
        let (_, flags) = compute_metrics_with_flags(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(flags.zero_targets, 1);
        assert!(compute_metrics(&[1.0], &[1.0]).is_err());
        assert!(compute_metrics(&[1.0, 2.0], &[1.0]).is_err());
        assert!(compute_metrics(&[f64::NAN, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn serializes_with_camel_case_field_names() {
        let m = Metrics {
            perf: 1.5,
            count_percent: 100.0,
            range: 0.25,
            rsq: 0.5,
        };
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"perf":1.5,"countPercent":100.0,"range":0.25,"rsq":0.5}"#
        );
    }
}
