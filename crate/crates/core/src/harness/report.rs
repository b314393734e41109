use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::RunResult;
use crate::harness::runlog::{RunLog, RunRow};
use crate::optim::Evaluation;

pub const BASELINE_METHOD: &str = "ce";

pub const PLOT_COLUMNS: [&str; 5] = ["update", "method", "seed", "metric", "value"];

pub const PLOT_METRICS: [&str; 6] = ["train_criterion", "valid_criterion", "valid_ser", "entropy", "step_norm", "cg_iterations"];

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Final metrics of one run, or of the CE-initialized model (`method = "ce"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub seed: u64,
    pub updates: usize,
    pub train_criterion: f64,
    pub valid_criterion: f64,
    pub valid_ser: f64,
    pub entropy: f64,
    pub status: String,
}

impl SummaryRow {
    pub fn baseline(seed: u64, e: &Evaluation) -> Self {
        Self {
            method: BASELINE_METHOD.into(),
            seed,
            updates: 0,
            train_criterion: e.train_criterion,
            valid_criterion: e.valid_criterion,
            valid_ser: e.valid_ser,
            entropy: e.entropy,
            status: "ok".into(),
        }
    }

    pub fn evaluation(&self) -> Evaluation {
        Evaluation { train_criterion: self.train_criterion, valid_criterion: self.valid_criterion, valid_ser: self.valid_ser, entropy: self.entropy }
    }

    /// CE rows first, then one row per run; a run with an empty log reports
    /// its starting point.
    pub fn collect(baselines: &[(u64, Evaluation)], runs: &[RunResult]) -> Vec<Self> {
        let mut rows: Vec<Self> = baselines.iter().map(|(s, e)| Self::baseline(*s, e)).collect();
        for r in runs {
            let base = baselines.iter().find(|(s, _)| *s == r.seed).map(|(_, e)| *e);
            let row = match (&r.outcome, base) {
                (Ok(s), _) if s.log.last().is_some() => Self::from_last(s.log.last().unwrap(), s.log.len()),
                (Ok(_), Some(b)) => Self { method: r.method.name().into(), ..Self::baseline(r.seed, &b) },
                (outcome, _) => Self {
                    method: r.method.name().into(),
                    seed: r.seed,
                    updates: 0,
                    train_criterion: f64::NAN,
                    valid_criterion: f64::NAN,
                    valid_ser: f64::NAN,
                    entropy: f64::NAN,
                    status: match outcome {
                        Err(e) => format!("failed: {e}"),
                        Ok(_) => "failed: no baseline".into(),
                    },
                },
            };
            rows.push(row);
        }
        rows
    }

    pub fn from_last(last: &RunRow, updates: usize) -> Self {
        Self {
            method: last.method.clone(),
            seed: last.seed,
            updates,
            train_criterion: last.train_criterion,
            valid_criterion: last.valid_criterion,
            valid_ser: last.valid_ser,
            entropy: last.entropy,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub method: String,
    pub runs: usize,
    pub failed: usize,
    pub train_criterion: f64,
    pub valid_criterion: f64,
    pub valid_ser: f64,
    pub entropy: f64,
}

/// Per-method medians over successful runs, in first-appearance order.
pub fn medians(rows: &[SummaryRow]) -> Vec<MedianRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let ok: Vec<&SummaryRow> = rows.iter().filter(|r| r.method == m && r.is_ok()).collect();
            let failed = rows.iter().filter(|r| r.method == m && !r.is_ok()).count();
            let med = |f: fn(&SummaryRow) -> f64| median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
            MedianRow {
                method: m.to_string(),
                runs: ok.len(),
                failed,
                train_criterion: med(|r| r.train_criterion),
                valid_criterion: med(|r| r.valid_criterion),
                valid_ser: med(|r| r.valid_ser),
                entropy: med(|r| r.entropy),
            }
        })
        .collect()
}

pub fn median_row<'a>(rows: &'a [MedianRow], method: &str) -> Option<&'a MedianRow> {
    rows.iter().find(|r| r.method == method)
}

/// Entropy drop of one run at the first update reaching the seed's shared
/// criterion gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub method: String,
    pub seed: u64,
    pub target_gain: f64,
    pub update: usize,
    pub criterion_gain: f64,
    pub entropy_drop: f64,
}

/// For each seed the window is the largest training-criterion gain that
/// every method reaches; each method is then read at its first update past
/// that gain. Seeds where some method never improves are left out.
pub fn entropy_diagnostic_from_logs(baselines: &[(u64, Evaluation)], logs: &[&RunLog]) -> Vec<EntropyRow> {
    let mut out = Vec::new();
    for (seed, base) in baselines {
        let runs: Vec<&RunLog> = logs.iter().copied().filter(|l| l.last().is_some_and(|r| r.seed == *seed)).collect();
        if runs.is_empty() {
            continue;
        }
        let best_gain = |l: &RunLog| l.rows.iter().map(|r| r.train_criterion - base.train_criterion).fold(f64::NEG_INFINITY, f64::max);
        let target = runs.iter().map(|l| best_gain(l)).fold(f64::INFINITY, f64::min);
        if !(target > 0.0) {
            continue;
        }
        for l in runs {
            if let Some(row) = l.rows.iter().find(|r| r.train_criterion - base.train_criterion >= target) {
                out.push(EntropyRow {
                    method: row.method.clone(),
                    seed: *seed,
                    target_gain: target,
                    update: row.update,
                    criterion_gain: row.train_criterion - base.train_criterion,
                    entropy_drop: base.entropy - row.entropy,
                });
            }
        }
    }
    out
}

pub fn entropy_diagnostic(baselines: &[(u64, Evaluation)], runs: &[RunResult]) -> Vec<EntropyRow> {
    let logs: Vec<&RunLog> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|s| &s.log).collect();
    entropy_diagnostic_from_logs(baselines, &logs)
}

pub fn median_entropy_drop(rows: &[EntropyRow], method: &str) -> Option<f64> {
    median(&rows.iter().filter(|r| r.method == method).map(|r| r.entropy_drop).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub update: usize,
    pub method: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

fn metric_value(row: &RunRow, metric: &str) -> Option<f64> {
    Some(match metric {
        "train_criterion" => row.train_criterion,
        "valid_criterion" => row.valid_criterion,
        "valid_ser" => row.valid_ser,
        "entropy" => row.entropy,
        "step_norm" => row.step_norm,
        "cg_iterations" => row.cg_iterations as f64,
        _ => return None,
    })
}

/// Long-format rows for one metric over all logs.
pub fn plot_rows(logs: &[RunLog], metric: &str) -> Result<Vec<PlotRow>> {
    let mut rows = Vec::new();
    for log in logs {
        for r in &log.rows {
            let value = metric_value(r, metric).ok_or_else(|| Error::Config(format!("unknown plot metric `{metric}`")))?;
            rows.push(PlotRow { update: r.update, method: r.method.clone(), seed: r.seed, metric: metric.into(), value });
        }
    }
    Ok(rows)
}

/// Writes `plot_<metric>.csv` for every plotted metric and returns the paths.
pub fn emit_plots_data(logs: &[RunLog], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for metric in PLOT_METRICS {
        let path = dir.join(format!("plot_{metric}.csv"));
        write_rows(&path, &plot_rows(logs, metric)?)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_plot_csv(path: &Path) -> Result<Vec<PlotRow>> {
    read_rows(path)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// `summary.csv`, `medians.csv` and `entropy.csv`.
pub fn write_summary(rows: &[SummaryRow], entropy: &[EntropyRow], dir: &Path) -> Result<()> {
    write_rows(&dir.join("summary.csv"), rows)?;
    write_rows(&dir.join("medians.csv"), &medians(rows))?;
    write_rows(&dir.join("entropy.csv"), entropy)
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(&dir.join("summary.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub seed: u64,
    pub seconds: f64,
    pub cg_seconds: f64,
    pub cg_fraction: f64,
}

pub fn timing_rows(runs: &[RunResult]) -> Vec<TimingRow> {
    runs.iter()
        .filter_map(|r| {
            let s = r.outcome.as_ref().ok()?;
            let seconds: f64 = s.records.iter().map(|u| u.seconds).sum();
            let cg_seconds: f64 = s.records.iter().map(|u| u.cg_seconds).sum();
            let cg_fraction = if seconds > 0.0 { cg_seconds / seconds } else { 0.0 };
            Some(TimingRow { method: r.method.name().into(), seed: r.seed, seconds, cg_seconds, cg_fraction })
        })
        .collect()
}

/// Wall-clock timings; kept apart from the run logs, which are deterministic.
pub fn write_timing(rows: &[TimingRow], dir: &Path) -> Result<()> {
    write_rows(&dir.join("timing.csv"), rows)
}

/// Reads every `runlog_*.csv` in `dir`, sorted by file name.
pub fn read_runlogs(dir: &Path) -> Result<Vec<RunLog>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("runlog_") && n.ends_with(".csv")))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| RunLog::read_csv(File::open(p)?)).collect()
}

/// Plain-text table of per-method medians.
pub fn format_medians(rows: &[MedianRow]) -> String {
    let mut s = format!("{:<8}{:>6}{:>8}{:>12}{:>12}{:>10}{:>10}\n", "method", "runs", "failed", "train", "valid", "ser", "entropy");
    for r in rows {
        s.push_str(&format!(
            "{:<8}{:>6}{:>8}{:>12.4}{:>12.4}{:>10.4}{:>10.4}\n",
            r.method, r.runs, r.failed, r.train_criterion, r.valid_criterion, r.valid_ser, r.entropy
        ));
    }
    s
}

pub fn format_entropy(rows: &[EntropyRow]) -> String {
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.method.as_str()).or_default().push(r.entropy_drop);
    }
    let mut s = String::from("median entropy drop at matched criterion gain\n");
    for (m, v) in by {
        s.push_str(&format!("{m:<8}{:>10.4}  ({} seeds)\n", median(&v).unwrap_or(f64::NAN), v.len()));
    }
    s
}
