//! The two analysis sweeps: loss-ratio (t = a) and K-shot, each emitting a
//! machine-readable table.json and an aligned table.txt, plus the `report`
//! command that rebuilds those tables from the per-run artifacts.

use std::path::Path;

use promptcl::sampling::SamplingStrategy;
use promptcl::trainer::summarize;
use promptcl::{Error, Result};

use crate::args::{ReportArgs, SweepKshotArgs, SweepRatioArgs};
use crate::artifacts::{
    kshot_table, ratio_table, read_json, trim_float, write_atomic, write_json, KshotRow, RatioRow,
    StrategyCell, SweepManifest, TrainReport,
};
use crate::commands::{out_dir_for, print_train_report, run_training};
use crate::spec::RunSpec;

fn reject_duplicates<T: PartialEq + std::fmt::Display>(values: &[T], what: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(Error::Config(format!("duplicate {what} {v}")));
        }
    }
    Ok(())
}

pub fn cmd_sweep_ratio(args: &SweepRatioArgs) -> Result<()> {
    if args.values.is_empty() {
        return Err(Error::Config("sweep-ratio needs at least one value".into()));
    }
    reject_duplicates(&args.values, "sweep value")?;
    let base = RunSpec::from_train_args(&args.train);
    let out_dir = out_dir_for(&args.train.out_dir, &base.task, "sweep-ratio");
    std::fs::create_dir_all(&out_dir)?;

    let mut run_dirs = Vec::with_capacity(args.values.len());
    let mut reports = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let spec = RunSpec {
            t: value,
            a: value,
            ..base.clone()
        };
        let rel = format!("ratio-{}", trim_float(value));
        println!("== t,a = {} ==", trim_float(value));
        let report = run_training(&spec, &out_dir.join(&rel))?;
        print_train_report(&report);
        run_dirs.push(rel);
        reports.push(report);
    }
    write_json(
        &out_dir.join("sweep.json"),
        &SweepManifest::Ratio {
            values: args.values.clone(),
            run_dirs,
        },
    )?;
    let rows = ratio_rows(&args.values, &reports);
    emit_ratio_table(&out_dir, &rows)?;
    Ok(())
}

fn ratio_rows(values: &[f64], reports: &[TrainReport]) -> Vec<RatioRow> {
    values
        .iter()
        .zip(reports)
        .map(|(&value, report)| RatioRow {
            value,
            average: report.aggregate.mean,
            variance: report.aggregate.std,
            median: report.aggregate.median,
            per_seed: report.test_accuracies.clone(),
        })
        .collect()
}

fn emit_ratio_table(out_dir: &Path, rows: &[RatioRow]) -> Result<()> {
    write_json(&out_dir.join("table.json"), &rows)?;
    let table = ratio_table(rows);
    write_atomic(&out_dir.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn cmd_sweep_kshot(args: &SweepKshotArgs) -> Result<()> {
    if args.k_values.is_empty() {
        return Err(Error::Config("sweep-kshot needs at least one k".into()));
    }
    reject_duplicates(&args.k_values, "k value")?;
    let base = RunSpec::from_train_args(&args.train);
    let out_dir = out_dir_for(&args.train.out_dir, &base.task, "sweep-kshot");
    std::fs::create_dir_all(&out_dir)?;

    let mut sim_dirs = Vec::new();
    let mut label_dirs = Vec::new();
    let mut sim_reports = Vec::new();
    let mut label_reports = Vec::new();
    for &k in &args.k_values {
        for strategy in [SamplingStrategy::SimBased, SamplingStrategy::LabelBased] {
            let tag = match strategy {
                SamplingStrategy::SimBased => "sim",
                SamplingStrategy::LabelBased => "label",
            };
            let spec = RunSpec {
                k,
                strategy,
                ..base.clone()
            };
            let rel = format!("k{k}-{tag}");
            println!("== K = {k}, {tag}-based ==");
            let report = run_training(&spec, &out_dir.join(&rel))?;
            print_train_report(&report);
            match strategy {
                SamplingStrategy::SimBased => {
                    sim_dirs.push(rel);
                    sim_reports.push(report);
                }
                SamplingStrategy::LabelBased => {
                    label_dirs.push(rel);
                    label_reports.push(report);
                }
            }
        }
    }
    write_json(
        &out_dir.join("sweep.json"),
        &SweepManifest::Kshot {
            k_values: args.k_values.clone(),
            sim_dirs,
            label_dirs,
        },
    )?;
    let rows = kshot_rows(&args.k_values, &sim_reports, &label_reports);
    emit_kshot_table(&out_dir, &rows)?;
    Ok(())
}

fn strategy_cell(report: &TrainReport) -> StrategyCell {
    StrategyCell {
        mean: report.aggregate.mean,
        std: report.aggregate.std,
        median: report.aggregate.median,
        per_seed: report.test_accuracies.clone(),
    }
}

fn kshot_rows(
    k_values: &[usize],
    sim_reports: &[TrainReport],
    label_reports: &[TrainReport],
) -> Vec<KshotRow> {
    k_values
        .iter()
        .zip(sim_reports.iter().zip(label_reports))
        .map(|(&k, (sim, label))| KshotRow {
            k,
            sim: strategy_cell(sim),
            label: strategy_cell(label),
        })
        .collect()
}

fn emit_kshot_table(out_dir: &Path, rows: &[KshotRow]) -> Result<()> {
    write_json(&out_dir.join("table.json"), &rows)?;
    let table = kshot_table(rows);
    write_atomic(&out_dir.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// `report`: rebuild tables and summaries from what the runs left on disk.
/// Aggregates are recomputed from the per-run report.json files, not copied
/// from table.json.
pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let sweep_path = args.out_dir.join("sweep.json");
    if sweep_path.exists() {
        match read_json(&sweep_path)? {
            SweepManifest::Ratio { values, run_dirs } => {
                let reports = load_reports(&args.out_dir, &run_dirs)?;
                let rows = recompute_ratio_rows(&values, &reports)?;
                emit_ratio_table(&args.out_dir, &rows)?;
            }
            SweepManifest::Kshot {
                k_values,
                sim_dirs,
                label_dirs,
            } => {
                let sim = load_reports(&args.out_dir, &sim_dirs)?;
                let label = load_reports(&args.out_dir, &label_dirs)?;
                let sim_rows = recompute_cells(&sim)?;
                let label_rows = recompute_cells(&label)?;
                let rows: Vec<KshotRow> = k_values
                    .iter()
                    .zip(sim_rows.into_iter().zip(label_rows))
                    .map(|(&k, (sim, label))| KshotRow { k, sim, label })
                    .collect();
                emit_kshot_table(&args.out_dir, &rows)?;
            }
        }
        return Ok(());
    }
    let report_path = args.out_dir.join("report.json");
    if report_path.exists() {
        let report: TrainReport = read_json(&report_path)?;
        print_train_report(&report);
        return Ok(());
    }
    Err(Error::Config(format!(
        "{} contains neither sweep.json nor report.json",
        args.out_dir.display()
    )))
}

fn load_reports(root: &Path, dirs: &[String]) -> Result<Vec<TrainReport>> {
    dirs.iter()
        .map(|d| read_json(&root.join(d).join("report.json")))
        .collect()
}

fn recompute_ratio_rows(values: &[f64], reports: &[TrainReport]) -> Result<Vec<RatioRow>> {
    values
        .iter()
        .zip(reports)
        .map(|(&value, report)| {
            let agg = summarize(&report.test_accuracies)?;
            Ok(RatioRow {
                value,
                average: agg.mean,
                variance: agg.std,
                median: agg.median,
                per_seed: report.test_accuracies.clone(),
            })
        })
        .collect()
}

fn recompute_cells(reports: &[TrainReport]) -> Result<Vec<StrategyCell>> {
    reports
        .iter()
        .map(|report| {
            let agg = summarize(&report.test_accuracies)?;
            Ok(StrategyCell {
                mean: agg.mean,
                std: agg.std,
                median: agg.median,
                per_seed: report.test_accuracies.clone(),
            })
        })
        .collect()
}
