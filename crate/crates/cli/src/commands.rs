//! The split, train, and eval commands.

use std::path::{Path, PathBuf};

use promptcl::data::{make_kshot, SplitManifest};
use promptcl::{evaluate, run_experiment, Error, Result, Verbalizer};

use crate::args::{EvalArgs, SplitArgs, TrainArgs};
use crate::artifacts::{
    default_out_root, mean_std, pct, read_json, write_json, write_metrics_jsonl, TrainReport,
};
use crate::spec::{task_kind_for, RunSpec};

pub fn out_dir_for(explicit: &Option<PathBuf>, task: &str, command: &str) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| default_out_root().join(task).join(command))
}

/// `split`: one manifest per seed, byte-identical across reruns.
pub fn cmd_split(args: &SplitArgs) -> Result<()> {
    let kind = task_kind_for(&args.data.task);
    let corpus = promptcl::data::load_tsv(args.data.data_dir.join("train.tsv"), kind)?;
    let out_dir = out_dir_for(&args.out_dir, &args.data.task, "split");
    std::fs::create_dir_all(&out_dir)?;

    #[derive(serde::Serialize)]
    struct SplitConfig<'a> {
        task: &'a str,
        data_dir: &'a Path,
        k: usize,
        seeds: &'a [u64],
    }
    write_json(
        &out_dir.join("config.json"),
        &SplitConfig {
            task: &args.data.task,
            data_dir: &args.data.data_dir,
            k: args.k,
            seeds: &args.seeds,
        },
    )?;

    for &seed in &args.seeds {
        let split = make_kshot(&corpus, &corpus, args.k, seed)?;
        let manifest = SplitManifest::from(&split);
        write_json(&out_dir.join(format!("split-seed{seed}.json")), &manifest)?;
    }
    println!(
        "wrote {} split manifest(s) for k={} to {}",
        args.seeds.len(),
        args.k,
        out_dir.display()
    );
    Ok(())
}

/// `train`: the full experiment protocol for one configuration. Also the
/// engine behind both sweeps.
pub fn run_training(spec: &RunSpec, out_dir: &Path) -> Result<TrainReport> {
    let corpus = spec.load_corpus()?;
    let test = spec.load_test()?;
    let templates = spec.load_templates()?;
    let pairs = spec.load_verbalizer_pairs()?;
    let encoder = spec.encoder();
    let base = spec.train_config();
    let grid = spec.grid();

    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("config.json"), spec)?;

    let factory = |seed: u64| spec.make_backend(&corpus, &templates, &pairs, seed);
    let report = run_experiment(
        &corpus,
        &test,
        &templates,
        &pairs,
        &encoder,
        &factory,
        spec.k,
        &spec.seeds,
        &grid,
        &base,
    )?;

    // Persist everything a re-run or re-evaluation needs.
    let mut run_dirs: Vec<Vec<String>> = Vec::with_capacity(report.per_seed.len());
    for seed_result in &report.per_seed {
        write_json(
            &out_dir.join(format!("split-seed{}.json", seed_result.seed)),
            &seed_result.split,
        )?;
        let mut dirs = Vec::with_capacity(seed_result.runs.len());
        for (gi, run) in seed_result.runs.iter().enumerate() {
            let rel = format!(
                "runs/seed{}/grid{gi}-lr{}-bs{}",
                seed_result.seed, run.grid.learning_rate, run.grid.batch_size
            );
            let dir = out_dir.join(&rel);
            write_metrics_jsonl(&dir.join("metrics.jsonl"), &run.metrics)?;
            write_json(&dir.join("params.json"), &run.params)?;
            dirs.push(rel);
        }
        run_dirs.push(dirs);
    }
    let train_report =
        TrainReport::from_experiment(&spec.task, spec.k, spec.strategy, &report, &run_dirs);
    write_json(&out_dir.join("report.json"), &train_report)?;
    Ok(train_report)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let spec = RunSpec::from_train_args(args);
    let out_dir = out_dir_for(&args.out_dir, &spec.task, "train");
    let report = run_training(&spec, &out_dir)?;
    print_train_report(&report);
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

pub fn print_train_report(report: &TrainReport) {
    for seed in &report.per_seed {
        println!(
            "seed {:>3}: dev {} test {}  (lr {}, bs {}; skipped anchors bc={} pc={})",
            seed.seed,
            pct(seed.chosen.dev_accuracy),
            pct(seed.test_accuracy),
            seed.chosen.grid.learning_rate,
            seed.chosen.grid.batch_size,
            seed.chosen.bc_skipped,
            seed.chosen.pc_skipped,
        );
    }
    println!(
        "test accuracy over {} seed(s): {}  median {}",
        report.seeds.len(),
        mean_std(&report.aggregate),
        pct(report.aggregate.median)
    );
}

/// `eval`: reload a finished run's chosen parameters and score the test set.
pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let spec: RunSpec = read_json(&args.run_dir.join("config.json"))?;
    let report: TrainReport = read_json(&args.run_dir.join("report.json"))?;
    let seed = args.seed.unwrap_or_else(|| report.seeds[0]);
    let seed_summary = report
        .per_seed
        .iter()
        .find(|s| s.seed == seed)
        .ok_or_else(|| Error::Config(format!("seed {seed} not present in this run")))?;

    let corpus = spec.load_corpus()?;
    let test = spec.load_test()?;
    let templates = spec.load_templates()?;
    let pairs = spec.load_verbalizer_pairs()?;
    let mut backend = spec.make_backend(&corpus, &templates, &pairs, seed)?;
    let verbalizer = Verbalizer::build(&pairs, corpus.label_set(), backend.as_ref())?;

    let params: Vec<f64> = read_json(&args.run_dir.join(&seed_summary.chosen.dir).join("params.json"))?;
    if params.len() != backend.params().len() {
        return Err(Error::Contract(format!(
            "saved parameters have length {}, backend expects {}",
            params.len(),
            backend.params().len()
        )));
    }
    backend.params_mut().copy_from_slice(&params);
    let accuracy = evaluate(backend.as_ref(), &test, templates.main(), &verbalizer)?;

    #[derive(serde::Serialize)]
    struct EvalOut {
        seed: u64,
        test_accuracy: f64,
    }
    write_json(
        &args.run_dir.join(format!("eval-seed{seed}.json")),
        &EvalOut {
            seed,
            test_accuracy: accuracy,
        },
    )?;
    println!("seed {seed}: test accuracy {}", pct(accuracy));
    Ok(())
}
