//! Run-directory artifacts: atomically written JSON manifests, per-step
//! metrics, experiment reports, and text tables. Every run directory is
//! self-describing, so `report` can rebuild any table from disk alone.

use std::path::{Path, PathBuf};

use promptcl::sampling::SamplingStrategy;
use promptcl::trainer::{EvalRecord, StepRecord};
use promptcl::{Aggregate, ExperimentReport, GridPoint, Result, RunMetrics};
use serde::{Deserialize, Serialize};

/// Write a file atomically: to a sibling temp path first, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// One line of metrics.jsonl.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsLine {
    Step(StepRecord),
    Eval(EvalRecord),
}

/// Serialize a run's step and evaluation records as line-delimited JSON.
pub fn write_metrics_jsonl(path: &Path, metrics: &RunMetrics) -> Result<()> {
    let mut out = String::new();
    for step in &metrics.steps {
        out.push_str(&serde_json::to_string(&MetricsLine::Step(step.clone()))?);
        out.push('\n');
    }
    for eval in &metrics.evals {
        out.push_str(&serde_json::to_string(&MetricsLine::Eval(eval.clone()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Summary of one grid run inside a seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub dir: String,
    pub grid: GridPoint,
    pub dev_accuracy: f64,
    pub bc_skipped: usize,
    pub pc_skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub chosen: RunSummary,
    pub test_accuracy: f64,
    pub runs: Vec<RunSummary>,
}

/// The per-experiment report persisted as report.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub task: String,
    pub k: usize,
    pub strategy: SamplingStrategy,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedSummary>,
    pub test_accuracies: Vec<f64>,
    pub aggregate: Aggregate,
}

impl TrainReport {
    pub fn from_experiment(
        task: &str,
        k: usize,
        strategy: SamplingStrategy,
        report: &ExperimentReport,
        run_dirs: &[Vec<String>],
    ) -> Self {
        let per_seed: Vec<SeedSummary> = report
            .per_seed
            .iter()
            .zip(run_dirs)
            .map(|(seed_result, dirs)| {
                let runs: Vec<RunSummary> = seed_result
                    .runs
                    .iter()
                    .zip(dirs)
                    .map(|(run, dir)| RunSummary {
                        dir: dir.clone(),
                        grid: run.grid,
                        dev_accuracy: run.metrics.final_dev_accuracy,
                        bc_skipped: run.metrics.bc_skipped_total,
                        pc_skipped: run.metrics.pc_skipped_total,
                    })
                    .collect();
                SeedSummary {
                    seed: seed_result.seed,
                    chosen: runs[seed_result.chosen].clone(),
                    test_accuracy: seed_result.test_accuracy,
                    runs,
                }
            })
            .collect();
        TrainReport {
            task: task.to_string(),
            k,
            strategy,
            seeds: report.per_seed.iter().map(|s| s.seed).collect(),
            test_accuracies: report.per_seed.iter().map(|s| s.test_accuracy).collect(),
            aggregate: report.test_aggregate,
            per_seed,
        }
    }
}

/// What a sweep ran, pointing at the per-run directories.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepManifest {
    Ratio {
        values: Vec<f64>,
        run_dirs: Vec<String>,
    },
    Kshot {
        k_values: Vec<usize>,
        sim_dirs: Vec<String>,
        label_dirs: Vec<String>,
    },
}

/// One row of the ratio-sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioRow {
    pub value: f64,
    pub average: f64,
    pub variance: f64,
    pub median: f64,
    pub per_seed: Vec<f64>,
}

/// One row of the K-shot sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KshotRow {
    pub k: usize,
    pub sim: StrategyCell,
    pub label: StrategyCell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyCell {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub per_seed: Vec<f64>,
}

/// Accuracy as a percentage with one decimal, the reporting convention for
/// all tables.
pub fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// "mean (std)" in percent, e.g. "77.3 (3.6)".
pub fn mean_std(agg: &Aggregate) -> String {
    format!("{} ({})", pct(agg.mean), pct(agg.std))
}

/// Render an aligned text table.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            for _ in cell.len()..widths[i] {
                out.push(' ');
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    push_row(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for row in rows {
        push_row(row);
    }
    out
}

pub fn ratio_table(rows: &[RatioRow]) -> String {
    let headers = ["t,a", "Average", "Variance", "Median"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                trim_float(r.value),
                pct(r.average),
                pct(r.variance),
                pct(r.median),
            ]
        })
        .collect();
    render_table(&headers, &body)
}

pub fn kshot_table(rows: &[KshotRow]) -> String {
    let headers = [
        "K",
        "Sim Acc(+std)",
        "Sim Median",
        "Label Acc(+std)",
        "Label Median",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                format!("{} ({})", pct(r.sim.mean), pct(r.sim.std)),
                pct(r.sim.median),
                format!("{} ({})", pct(r.label.mean), pct(r.label.std)),
                pct(r.label.median),
            ]
        })
        .collect();
    render_table(&headers, &body)
}

/// Format a float without trailing zeros (20.0 -> "20", 0.1 -> "0.1").
pub fn trim_float(x: f64) -> String {
    let s = format!("{x}");
    s
}

/// Default output root: `$PROMPTCL_OUT_DIR` or `./runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os("PROMPTCL_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
