//! Hidden-layer size selection over the six starting weight sets.
//!
//! Every set is swept over a neuron range (2..=50 by default). Each set's
//! sweep is reduced to one row by the countPercent-versus-perf rule, and the
//! six survivors are compared with the neuronCut / perfCut / countCut bands.

use std::io::Write;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::metrics::Metrics;
use crate::net::SetId;

pub const DEFAULT_NEURONS: RangeInclusive<usize> = 2..=50;

/// Neuron slack allowed above the smallest per-set optimum.
pub const NEURON_CUT: usize = 5;

/// Per-set countPercent advantage needed to prefer the max-count row.
pub const COUNT_ADVANTAGE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    /// `Err` carries the reason a training run was excluded.
    pub outcome: std::result::Result<Metrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub set: SetId,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub set: SetId,
    pub best_n: usize,
    pub perf: f64,
    #[serde(rename = "countPercent")]
    pub count_percent: f64,
}

/// The neuron, perf and countPercent arrays, aligned by set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchArrays {
    pub sets: Vec<SetId>,
    #[serde(rename = "nA")]
    pub neurons: Vec<usize>,
    #[serde(rename = "pA")]
    pub perf: Vec<f64>,
    #[serde(rename = "cA")]
    pub count: Vec<f64>,
}

impl SearchArrays {
    pub fn from_results(results: &[SetResult]) -> Self {
        Self {
            sets: results.iter().map(|r| r.set).collect(),
            neurons: results.iter().map(|r| r.best_n).collect(),
            perf: results.iter().map(|r| r.perf).collect(),
            count: results.iter().map(|r| r.count_percent).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSelection {
    pub set: SetId,
    pub neurons: usize,
    #[serde(rename = "perfCut")]
    pub perf_cut: f64,
    #[serde(rename = "countCut")]
    pub count_cut: f64,
    #[serde(rename = "neuronCut")]
    pub neuron_cut: usize,
    pub arrays: SearchArrays,
    pub per_set: Vec<SetResult>,
    /// Sets inside both the perf and count bands, before the neuron filter.
    pub candidates: Vec<SetId>,
}

/// Trains one network per neuron count for `set`; rows come back ordered by
/// neuron count. Failed runs are kept as flagged rows.
pub fn sweep_set(exp: &Experiment<'_>, set: SetId, neurons: RangeInclusive<usize>) -> SweepTable {
    let cfg = set.config();
    let rows = neurons
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| SweepRow {
            n,
            outcome: exp.fit(n, &cfg).map(|f| f.metrics).map_err(|e| e.to_string()),
        })
        .collect();
    SweepTable { set, rows }
}

/// Sweeps every set. All (set, n) runs share one parallel pool; the result
/// is ordered by set then neuron count.
pub fn sweep_all(exp: &Experiment<'_>, neurons: RangeInclusive<usize>) -> Vec<SweepTable> {
    let tasks: Vec<(SetId, usize)> = SetId::ALL
        .iter()
        .flat_map(|&s| neurons.clone().map(move |n| (s, n)))
        .collect();
    let rows: Vec<(SetId, SweepRow)> = tasks
        .into_par_iter()
        .map(|(set, n)| {
            let outcome = exp
                .fit(n, &set.config())
                .map(|f| f.metrics)
                .map_err(|e| e.to_string());
            (set, SweepRow { n, outcome })
        })
        .collect();
    SetId::ALL
        .iter()
        .map(|&set| SweepTable {
            set,
            rows: rows
                .iter()
                .filter(|(s, _)| *s == set)
                .map(|(_, r)| r.clone())
                .collect(),
        })
        .collect()
}

/// Picks the neuron count for one set: the max-countPercent row when its
/// countPercent beats the min-perf row's by more than 2, else the min-perf
/// row. Ties go to the smaller neuron count.
pub fn choose_neurons_for_set(table: &SweepTable) -> Result<SetResult> {
    let valid: Vec<(usize, Metrics)> = table
        .rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|m| (r.n, *m)))
        .collect();
    let first = valid.first().ok_or_else(|| {
        Error::Numeric(format!("every training run failed for set {}", table.set))
    })?;

    let (mut by_perf, mut by_count) = (first, first);
    for row in &valid[1..] {
        if (row.1.perf, row.0) < (by_perf.1.perf, by_perf.0) {
            by_perf = row;
        }
        if row.1.count_percent > by_count.1.count_percent
            || (row.1.count_percent == by_count.1.count_percent && row.0 < by_count.0)
        {
            by_count = row;
        }
    }
    let pick = if by_count.1.count_percent - by_perf.1.count_percent > COUNT_ADVANTAGE {
        by_count
    } else {
        by_perf
    };
    Ok(SetResult {
        set: table.set,
        best_n: pick.0,
        perf: pick.1.perf,
        count_percent: pick.1.count_percent,
    })
}

/// Average of the sample standard deviation and the skew term
/// `max + min - 2 * mean`. Zero for fewer than two values.
fn threshold_cut(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (var.sqrt() + (max + min - 2.0 * mean)) / 2.0
}

pub fn perf_cut(perf: &[f64]) -> f64 {
    threshold_cut(perf)
}

pub fn count_cut(count: &[f64]) -> f64 {
    threshold_cut(count)
}

/// Compares the per-set optima and returns the final set and neuron count.
///
/// Candidates lie within `max(perfCut, 0)` of the best perf and within
/// `max(countCut, 0)` of the best countPercent. Candidates using at most
/// `min(nA) + neuronCut` neurons are preferred when any exist. The winner is
/// the lexicographic best of (perf, -countPercent, neurons, set id).
pub fn select_final(results: &[SetResult]) -> Result<FinalSelection> {
    if results.is_empty() {
        return Err(Error::Numeric("no weight set produced a valid network".into()));
    }
    let arrays = SearchArrays::from_results(results);
    let p_cut = perf_cut(&arrays.perf);
    let c_cut = count_cut(&arrays.count);
    let best_perf = arrays.perf.iter().copied().fold(f64::INFINITY, f64::min);
    let best_count = arrays.count.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fewest = *arrays.neurons.iter().min().expect("non-empty");

    let candidates: Vec<&SetResult> = results
        .iter()
        .filter(|r| r.perf <= best_perf + p_cut.max(0.0) && r.count_percent >= best_count - c_cut.max(0.0))
        .collect();
    let compact: Vec<&SetResult> = candidates
        .iter()
        .copied()
        .filter(|r| r.best_n <= fewest + NEURON_CUT)
        .collect();
    let pool = if compact.is_empty() { &candidates } else { &compact };

    let rank = |a: &SetResult, b: &SetResult| {
        a.perf
            .total_cmp(&b.perf)
            .then(b.count_percent.total_cmp(&a.count_percent))
            .then(a.best_n.cmp(&b.best_n))
            .then(a.set.cmp(&b.set))
    };
    let winner = match pool.iter().copied().min_by(|a, b| rank(a, b)) {
        Some(w) => w,
        None => results.iter().min_by(|a, b| rank(a, b)).expect("non-empty"),
    };
    Ok(FinalSelection {
        set: winner.set,
        neurons: winner.best_n,
        perf_cut: p_cut,
        count_cut: c_cut,
        neuron_cut: NEURON_CUT,
        arrays,
        per_set: results.to_vec(),
        candidates: candidates.iter().map(|r| r.set).collect(),
    })
}

/// Writes `set,n,perf,countPercent,range,rsq,flags` rows for every sweep.
pub fn write_sweep_csv<W: Write>(tables: &[SweepTable], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("csv write: {e}"));
    w.write_record(["set", "n", "perf", "countPercent", "range", "rsq", "flags"])
        .map_err(err)?;
    for t in tables {
        for r in &t.rows {
            let set = t.set.to_string();
            let n = r.n.to_string();
            match &r.outcome {
                Ok(m) => w.write_record([
                    set,
                    n,
                    m.perf.to_string(),
                    m.count_percent.to_string(),
                    m.range.to_string(),
                    m.rsq.to_string(),
                    String::new(),
                ]),
                Err(e) => w.write_record([
                    set,
                    n,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("excluded: {e}"),
                ]),
            }
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("csv write: {e}")))?;
    Ok(())
}
