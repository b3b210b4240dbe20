//! Acceptance checks, one PASS/FAIL line each.
//!
//! Run with `cargo test -p sensorlab-cli --test acceptance`. Positional
//! numbers select a subset, e.g. `-- 1 4 7`. Every oracle here is written
//! independently of the library code it checks.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensorlab::awb::{pick_index, Criterion, QuadraticSurrogate, StepSchedule};
use sensorlab::dataset::interleaved_split;
use sensorlab::metrics::Metrics;
use sensorlab::net::{init_params, jacobian, MlpParams};
use sensorlab::pipeline::{execute, DataSource, Profile, RunConfig, Stages};
use sensorlab::search::{choose_neurons_for_set, count_cut, perf_cut, SweepRow, SweepTable};
use sensorlab::synthetic::EngineGenSpec;
use sensorlab::train::train;
use sensorlab::{AwbSearch, Dataset, Quantity, SetId, TrainOptions, TrainerKind};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

// ---------------------------------------------------------------- 1

/// Network output from a flat parameter vector laid out as
/// `iw (h x d, row-major), b1 (h), lw (h), b2`.
fn flat_forward(theta: &[f64], d: usize, h: usize, x: &[f64]) -> f64 {
    let (iw, rest) = theta.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (lw, b2) = rest.split_at(h);
    let mut y = b2[0];
    for j in 0..h {
        let mut a = b1[j];
        for k in 0..d {
            a += iw[j * d + k] * x[k];
        }
        y += lw[j] * a.tanh();
    }
    y
}

fn jacobian_vs_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ac0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (d, h, n) = (rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=10));
        let theta: Vec<f64> = (0..h * d + 2 * h + 1).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let params = MlpParams::unflatten(d, h, &theta).map_err(|e| e.to_string())?;
        let jac = jacobian(&params, &x);
        ensure!(jac.shape() == (n, theta.len()), "shape {:?}", jac.shape());
        for i in 0..n {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            for p in 0..theta.len() {
                let step = 1e-6;
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[p] += step;
                down[p] -= step;
                let fd = (flat_forward(&up, d, h, &row) - flat_forward(&down, d, h, &row)) / (2.0 * step);
                let a = jac[(i, p)];
                let rel = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
                worst = worst.max(rel);
                ensure!(rel <= 1e-5, "d={d} h={h} sample {i} param {p}: analytic {a} vs fd {fd}");
            }
        }
    }
    Ok(format!("20 instances, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn lm_line_fixture() -> Outcome {
    let n = 50;
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let data = Dataset::new(
        vec!["x".into()],
        DMatrix::from_column_slice(n, 1, &xs),
        "y",
        xs.iter().map(|x| 2.0 * x + 1.0).collect::<Vec<_>>().into(),
    )
    .map_err(|e| e.to_string())?;
    let split = interleaved_split(n).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        max_epochs: 200,
        ..TrainOptions::default()
    };
    let init = init_params(1, 3, &SetId::new(2).unwrap().config());
    let model = train(TrainerKind::Lm, &init, &data, &split, &opts).map_err(|e| e.to_string())?;
    let mse = split
        .train
        .iter()
        .map(|&i| (flat_forward(&model.params.flatten(), 1, 3, &[xs[i]]) - (2.0 * xs[i] + 1.0)).powi(2))
        .sum::<f64>()
        / split.train.len() as f64;
    ensure!(model.epochs_run <= 200, "ran {} epochs", model.epochs_run);
    ensure!(mse < 1e-6, "train MSE {mse:e} after {} epochs", model.epochs_run);
    Ok(format!("train MSE {mse:.3e} after {} epochs ({:?})", model.epochs_run, model.stop_reason))
}

// ---------------------------------------------------------------- 3

fn interleaved_split_windows() -> Outcome {
    for n in 5..=200 {
        let s = interleaved_split(n).map_err(|e| e.to_string())?;
        let mut role = vec![None; n];
        for (tag, idx) in [('t', &s.train), ('v', &s.val), ('s', &s.test)] {
            for &i in idx {
                ensure!(i < n && role[i].is_none(), "n={n}: index {i} repeated or out of range");
                role[i] = Some(tag);
            }
        }
        ensure!(role.iter().all(Option::is_some), "n={n}: split does not cover every sample");
        for start in 0..=n - 5 {
            let w = &role[start..start + 5];
            let count = |t| w.iter().filter(|r| **r == Some(t)).count();
            ensure!(
                (count('t'), count('v'), count('s')) == (3, 1, 1),
                "n={n}: window at {start} is {w:?}"
            );
        }
        if n % 5 == 0 {
            ensure!(
                s.train.len() * 5 == 3 * n && s.val.len() * 5 == n && s.test.len() * 5 == n,
                "n={n}: ratio {}/{}/{}",
                s.train.len(),
                s.val.len(),
                s.test.len()
            );
        }
    }
    Ok("n = 5..=200, every window 3/1/1".into())
}

// ---------------------------------------------------------------- 4

fn cut_oracle(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mut sum = 0.0;
    let mut hi = v[0];
    let mut lo = v[0];
    for &x in v {
        sum += x;
        if x > hi {
            hi = x;
        }
        if x < lo {
            lo = x;
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for &x in v {
        ss += (x - mean) * (x - mean);
    }
    ((ss / (n - 1.0)).sqrt() + (hi + lo - 2.0 * mean)) / 2.0
}

fn threshold_cuts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..10.0)).collect();
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(80.0..=100.0)).collect();
        let (a, b) = (perf_cut(&p), cut_oracle(&p));
        ensure!((a - b).abs() <= 1e-12, "perf_cut {p:?}: {a} vs oracle {b}");
        let (a, b) = (count_cut(&c), cut_oracle(&c));
        ensure!((a - b).abs() <= 1e-12, "count_cut {c:?}: {a} vs oracle {b}");
    }
    // Worked values are quoted to four decimals.
    let worked = [
        ("perf_cut [1..6]", perf_cut(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 0.9354),
        ("count_cut [94,96,98,100,100,100]", count_cut(&[94.0, 96.0, 98.0, 100.0, 100.0, 100.0]), 0.2247),
    ];
    for (name, got, want) in worked {
        ensure!(
            (got - want).abs() < 5e-5,
            "random vectors agree with the oracle, but worked value {name} = {got:.10} does not round to {want}"
        );
    }
    Ok("100 random vectors within 1e-12; worked values reproduce".into())
}

// ---------------------------------------------------------------- 5

fn metrics_from(rng: &mut ChaCha8Rng) -> Metrics {
    Metrics {
        perf: rng.random_range(1..=8) as f64 * 0.125,
        count_percent: rng.random_range(90..=100) as f64,
        range: rng.random_range(1..=6) as f64,
        rsq: rng.random_range(0..=4) as f64 * 0.25,
    }
}

/// Row index, by the plain reading of the rule.
fn brute_choose(rows: &[(usize, Option<Metrics>)]) -> Option<usize> {
    let valid: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1.is_some()).collect();
    if valid.is_empty() {
        return None;
    }
    let m = |i: usize| rows[i].1.unwrap();
    let min_perf = valid.iter().map(|&i| m(i).perf).fold(f64::INFINITY, f64::min);
    let max_count = valid.iter().map(|&i| m(i).count_percent).fold(f64::NEG_INFINITY, f64::max);
    let ip = *valid.iter().filter(|&&i| m(i).perf == min_perf).min_by_key(|&&i| rows[i].0).unwrap();
    let ic = *valid
        .iter()
        .filter(|&&i| m(i).count_percent == max_count)
        .min_by_key(|&&i| rows[i].0)
        .unwrap();
    Some(if m(ic).count_percent - m(ip).count_percent > 2.0 { ic } else { ip })
}

fn brute_pick(sweep: &[Metrics], base: &Metrics) -> Option<(usize, Criterion)> {
    type Rule = (Criterion, fn(&Metrics) -> f64, bool);
    let keys: [Rule; 4] = [
        (Criterion::Perf, |m| m.perf, true),
        (Criterion::Range, |m| m.range, true),
        (Criterion::CountPercent, |m| m.count_percent, false),
        (Criterion::Rsq, |m| m.rsq, false),
    ];
    for (crit, key, lower_is_better) in keys {
        let mut best = 0;
        for i in 1..sweep.len() {
            let better = if lower_is_better {
                key(&sweep[i]) < key(&sweep[best])
            } else {
                key(&sweep[i]) > key(&sweep[best])
            };
            if better {
                best = i;
            }
        }
        let improves = if lower_is_better {
            key(&sweep[best]) < key(base)
        } else {
            key(&sweep[best]) > key(base)
        };
        if improves {
            return Some((best, crit));
        }
    }
    None
}

fn decision_rules() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut boundary = 0;
    for t in 0..1000 {
        let len = rng.random_range(1..=49);
        let rows: Vec<(usize, Option<Metrics>)> = (0..len)
            .map(|k| {
                let m = metrics_from(&mut rng);
                (k + 2, (rng.random_range(0..10) > 0).then_some(m))
            })
            .collect();
        let table = SweepTable {
            set: SetId::new(1 + (t % 6) as u8).unwrap(),
            rows: rows
                .iter()
                .map(|(n, m)| SweepRow {
                    n: *n,
                    outcome: m.ok_or_else(|| "excluded".to_string()),
                })
                .collect(),
        };
        let got = choose_neurons_for_set(&table);
        match brute_choose(&rows) {
            None => ensure!(got.is_err(), "table {t}: expected an error for an all-excluded table"),
            Some(i) => {
                let got = got.map_err(|e| format!("table {t}: {e}"))?;
                let m = rows[i].1.unwrap();
                ensure!(
                    got.best_n == rows[i].0 && got.perf == m.perf && got.count_percent == m.count_percent,
                    "table {t}: library picked n={}, oracle n={}",
                    got.best_n,
                    rows[i].0
                );
                let valid = rows.iter().filter_map(|r| r.1);
                let min_perf = valid.clone().map(|m| m.perf).fold(f64::INFINITY, f64::min);
                let max_count = valid.clone().map(|m| m.count_percent).fold(0.0, f64::max);
                let ip = rows.iter().find(|r| r.1.is_some_and(|m| m.perf == min_perf)).unwrap();
                if max_count - ip.1.unwrap().count_percent == 2.0 {
                    boundary += 1;
                }
            }
        }
    }
    ensure!(boundary > 0, "no diff-exactly-2 table was generated");

    let mut picks = [0usize; 5];
    for t in 0..1000 {
        let len = rng.random_range(1..=30);
        let sweep: Vec<Metrics> = (0..len).map(|_| metrics_from(&mut rng)).collect();
        let base = if rng.random_range(0..4) == 0 { sweep[rng.random_range(0..len)] } else { metrics_from(&mut rng) };
        let got = pick_index(&sweep, &base).map(|p| (p.index, p.criterion));
        let want = brute_pick(&sweep, &base);
        ensure!(got == want, "sweep {t}: library {got:?}, oracle {want:?}");
        picks[match want {
            Some((_, Criterion::Perf)) => 0,
            Some((_, Criterion::Range)) => 1,
            Some((_, Criterion::CountPercent)) => 2,
            Some((_, Criterion::Rsq)) => 3,
            None => 4,
        }] += 1;
    }
    ensure!(picks.iter().all(|&c| c > 0), "pick outcomes not all exercised: {picks:?}");
    Ok(format!(
        "1000 tables ({boundary} diff-exactly-2), 1000 sweeps (perf/range/count/rsq/none = {picks:?})"
    ))
}

// ---------------------------------------------------------------- 6

fn awb_non_degradation() -> Outcome {
    let mut lines = Vec::new();
    for k in 0..10u64 {
        let trainer = if k % 2 == 0 { TrainerKind::Lm } else { TrainerKind::Br };
        let cfg = RunConfig {
            data: Some(DataSource::Synthetic(EngineGenSpec {
                n: [300, 400, 500][k as usize % 3],
                seed: 100 + 7 * k,
                noise_sd: [0.5, 1.0, 2.0][k as usize % 3],
            })),
            trainer: Some(trainer),
            profile: Some(Profile::Quick),
            ..Default::default()
        };
        let plan = cfg.resolve().map_err(|e| e.to_string())?;
        let out = execute(&plan, Stages::Full).map_err(|e| format!("config {k}: {e}"))?;
        let awb = out.awb.as_ref().ok_or("AWB did not run")?;
        for t in &awb.traces {
            ensure!(
                t.outcome().perf <= t.original.perf,
                "config {k} {}: perf {} -> {}",
                t.quantity,
                t.original.perf,
                t.outcome().perf
            );
        }
        let (before, after) = (out.report.initial.perf, out.report.final_metrics.perf);
        ensure!(after <= before, "config {k} ({trainer}): perf {before} -> {after}");
        ensure!(after == awb.metrics.perf, "config {k}: retrained perf {after} differs from search {}", awb.metrics.perf);
        lines.push(format!("{:.1}%", 100.0 * (before - after) / before));
    }
    Ok(format!("10 configs, perf reductions {}", lines.join(" ")))
}

// ---------------------------------------------------------------- 7

fn awb_matches_exhaustive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut evaluated = 0;
    for (label, schedule) in [("LM", StepSchedule::LM), ("BR", StepSchedule::BR)] {
        for t in 0..50 {
            let optimum = rng.random_range(-4.9..=4.9);
            let floor = rng.random_range(0.0..1.0);
            let quantity = Quantity::ALL[t % 4];
            let objective = |c: f64| (c - optimum) * (c - optimum) + floor;
            let surrogate = QuadraticSurrogate {
                quantity,
                optimum,
                floor,
            };
            let cfg = SetId::new(1 + (t % 6) as u8).unwrap().config();
            let mut search = AwbSearch::new(&surrogate, schedule);
            let baseline = search.evaluate(&cfg).map_err(|e| e.to_string())?;
            let trace = search.tune_quantity(&cfg, quantity, &baseline).map_err(|e| e.to_string())?;
            let mut best = f64::INFINITY;
            let mut n = 0;
            for p in trace.explored() {
                best = best.min(objective(p.coefficient));
                n += 1;
            }
            evaluated += n;
            let got = objective(trace.coefficient);
            ensure!(
                got <= best + 1e-12,
                "{label} c*={optimum}: returned {} (objective {got}), exhaustive best {best}",
                trace.coefficient
            );
        }
    }
    Ok(format!("100 searches, {evaluated} explored points checked"))
}

// ---------------------------------------------------------------- 8, 9

const DESK_CONFIG: &str = r#"{
  "data": {"synthetic": {"n": 2000, "seed": 7, "noise_sd": 0.5}},
  "trainer": "LM",
  "profile": "quick"
}
"#;

const COMPARED: [&str; 4] = ["metrics.json", "sweep.csv", "awb_trace.json", "awb_trace.csv"];

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir")).path()
}

fn cli_run(name: &str, jobs: usize) -> Result<PathBuf, String> {
    let dir = scratch();
    let config = dir.join("run.json");
    std::fs::write(&config, DESK_CONFIG).map_err(|e| e.to_string())?;
    let out = dir.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_sensorlab"))
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out)
        .args(["--jobs", &jobs.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        status.status.success(),
        "sensorlab run exited with {}: {}",
        status.status,
        String::from_utf8_lossy(&status.stderr).trim()
    );
    Ok(out)
}

fn desk_run() -> Result<PathBuf, String> {
    static RUN: OnceLock<Result<PathBuf, String>> = OnceLock::new();
    RUN.get_or_init(|| cli_run("desk_jobs8", 8)).clone()
}

fn desk_scale_pipeline() -> Outcome {
    let dir = desk_run()?;
    let text = std::fs::read_to_string(dir.join("metrics.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let get = |stage: &str, key: &str| v[stage][key].as_f64().ok_or(format!("metrics.json lacks {stage}.{key}"));
    let (count, rsq) = (get("final", "countPercent")?, get("final", "rsq")?);
    let (range0, range1) = (get("initial", "range")?, get("final", "range")?);
    ensure!(count >= 95.0, "final countPercent {count} < 95");
    ensure!(rsq >= 0.99, "final rsq {rsq} < 0.99");
    ensure!(range1 <= range0, "range grew {range0} -> {range1}");
    Ok(format!(
        "set {} n={} countPercent {count} rsq {rsq:.6} range {range0:.4} -> {range1:.4}",
        v["set"], v["neurons"]
    ))
}

fn determinism() -> Outcome {
    let reference = desk_run()?;
    let single = cli_run("desk_jobs1", 1)?;
    let again = cli_run("desk_jobs8_again", 8)?;
    for other in [&single, &again] {
        for f in COMPARED {
            let a = std::fs::read(reference.join(f)).map_err(|e| format!("{f}: {e}"))?;
            let b = std::fs::read(other.join(f)).map_err(|e| format!("{f}: {e}"))?;
            ensure!(a == b, "{f} differs between {} and {}", reference.display(), other.display());
        }
    }
    Ok(format!("{} identical across --jobs 8, 1, 8", COMPARED.join(", ")))
}

// ----------------------------------------------------------------

struct Check {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let checks = [
        Check { id: 1, name: "jacobian matches central differences", budget: Duration::from_secs(5), run: jacobian_vs_finite_differences },
        Check { id: 2, name: "LM fits y = 2x + 1", budget: Duration::from_secs(5), run: lm_line_fixture },
        Check { id: 3, name: "interleaved split windows", budget: Duration::from_secs(1), run: interleaved_split_windows },
        Check { id: 4, name: "perfCut/countCut oracle and worked values", budget: Duration::from_secs(1), run: threshold_cuts },
        Check { id: 5, name: "neuron choice and pick_index oracles", budget: Duration::from_secs(5), run: decision_rules },
        Check { id: 6, name: "AWB never degrades perf", budget: Duration::from_secs(600), run: awb_non_degradation },
        Check { id: 7, name: "AWB matches exhaustive surrogate search", budget: Duration::from_secs(10), run: awb_matches_exhaustive },
        Check { id: 8, name: "desk-scale synthetic pipeline", budget: Duration::from_secs(900), run: desk_scale_pipeline },
        Check { id: 9, name: "byte-identical artifacts across --jobs", budget: Duration::from_secs(1800), run: determinism },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    let mut ran = 0;
    for c in checks.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > c.budget => Err(format!("took {:.1}s, budget {}s", elapsed.as_secs_f64(), c.budget.as_secs())),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("{tag} [{}] {} ({:.2}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
