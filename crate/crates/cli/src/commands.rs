use std::fs;
use std::path::{Path, PathBuf};

use patternnet::cloning::clone_partition;
use patternnet::geometry::{load_cloud, PointCloud};
use patternnet::neighbors::knn_with;
use patternnet::patternnet::{count_params, PatternNet};
use patternnet::training::{
    evaluate, fit, metrics_jsonl, subset_consistency, write_synthetic, Checkpoint, Dataset, EvalReport,
};
use patternnet::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{
    Command, EvalArgs, GenDataArgs, KnnArgs, ModelOverrides, ParamsArgs, PartitionArgs, RobustnessArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Robustness(a) => robustness(a),
        Command::Partition(a) => partition(a),
        Command::Knn(a) => knn(a),
        Command::Params(a) => params(a),
    }
}

/// Sizes the global worker pool once per process; later calls keep the
/// first setting.
fn set_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
}

fn resolve(overrides: &ModelOverrides) -> Result<RunConfig> {
    let mut cfg = match &overrides.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let m = &mut cfg.model;
    if let Some(v) = overrides.levels {
        m.levels = v;
    }
    if let Some(v) = overrides.neighbors {
        m.k = v;
    }
    if let Some(v) = overrides.lambda {
        m.lambda = v;
    }
    if let Some(v) = overrides.classes {
        m.num_classes = v;
    }
    if let Some(v) = overrides.parts {
        m.num_parts = v;
    }
    if let Some(v) = overrides.task {
        m.task = v;
    }
    Ok(cfg)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let (train, test) = write_synthetic(&a.out, a.per_class, a.points, a.seed)?;
    println!("wrote {} and {}", train.display(), test.display());
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.model)?;
    if let Some(p) = a.train {
        cfg.train_manifest = Some(p);
    }
    if let Some(p) = a.test {
        cfg.test_manifest = Some(p);
    }
    if let Some(p) = a.out {
        cfg.output_dir = Some(p);
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.threads {
        cfg.threads = Some(v);
    }
    set_threads(cfg.threads);
    let train_path = cfg.train_manifest.clone().ok_or_else(|| Error::Config("no training manifest given".into()))?;
    let out = cfg.output_dir.clone().ok_or_else(|| Error::Config("no output directory given".into()))?;
    let data = Dataset::<f32>::from_manifest(&train_path)?;
    let test = cfg.test_manifest.as_ref().map(Dataset::<f32>::from_manifest).transpose()?;
    if a.model.classes.is_none() {
        cfg.model.num_classes = data.num_classes();
    }
    if a.model.parts.is_none() && cfg.model.task == patternnet::patternnet::Task::Segmentation {
        cfg.model.num_parts = data.num_parts();
    }
    if cfg.train.diagnostic_path.is_none() {
        cfg.train.diagnostic_path = Some(out.join("diverged.pnet"));
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("run.toml"), cfg.to_toml()?)?;
    let result = fit(&data, test.as_ref(), &cfg.model, &cfg.train)?;
    let ckpt = result.checkpoint(&cfg.train);
    ckpt.save(out.join("checkpoint.pnet"))?;
    fs::write(out.join("metrics.jsonl"), metrics_jsonl(&result.history)?)?;
    if let Some(test) = &test {
        let report = full_report(test, &result.model, 0.0, cfg.train.seed)?;
        write_json(&report, &out.join("eval.json"))?;
        println!("test accuracy {:.6}", report.overall_accuracy);
    }
    println!("wrote {}", out.join("checkpoint.pnet").display());
    Ok(())
}

/// Accuracy report plus subset consistency for classifiers.
fn full_report(data: &Dataset<f32>, model: &PatternNet<f32>, sigma: f64, seed: u64) -> Result<EvalReport> {
    let mut report = evaluate(data, model, sigma, seed)?;
    if model.config.task == patternnet::patternnet::Task::Classification {
        report.subset_consistency_rate = Some(subset_consistency(data, model, sigma, seed)?);
    }
    Ok(report)
}

fn eval(a: EvalArgs) -> Result<()> {
    set_threads(a.threads);
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model::<f32>()?;
    let data = Dataset::<f32>::from_manifest(&a.data)?;
    let report = full_report(&data, &model, a.sigma, a.seed.unwrap_or(ckpt.train.seed))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = a.out {
        write_json(&report, &out)?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn robustness(a: RobustnessArgs) -> Result<()> {
    set_threads(a.threads);
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut model = ckpt.model::<f32>()?;
    let data = Dataset::<f32>::from_manifest(&a.data)?;
    let seed = a.seed.unwrap_or(ckpt.train.seed);
    if a.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Parameter("noise levels must be non-negative".into()));
    }
    let mut w = csv_writer(&a.out)?;
    w.write_record(["sigma", "overall_acc", "macro_acc", "subset_consistency"]).map_err(csv_err)?;
    for &sigma in &a.sigmas {
        let r = full_report(&data, &model, sigma, seed)?;
        let consistency = r.subset_consistency_rate.map_or(String::new(), |c| format!("{c:.6}"));
        w.write_record([
            format!("{sigma:.6}"),
            format!("{:.6}", r.overall_accuracy),
            format!("{:.6}", r.per_class_accuracy),
            consistency,
        ])
        .map_err(csv_err)?;
        println!("sigma {sigma}: accuracy {:.6}", r.overall_accuracy);
    }
    w.flush()?;
    if !a.neighbors.is_empty() {
        let path = a.k_out.clone().unwrap_or_else(|| a.out.with_extension("k.csv"));
        let mut w = csv_writer(&path)?;
        w.write_record(["k", "overall_acc", "macro_acc"]).map_err(csv_err)?;
        for &k in &a.neighbors {
            model.config.k = k;
            let r = evaluate(&data, &model, 0.0, seed)?;
            w.write_record([k.to_string(), format!("{:.6}", r.overall_accuracy), format!("{:.6}", r.per_class_accuracy)])
                .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PartitionSummary {
    levels: usize,
    seed: u64,
    attempts: usize,
    within_tolerance: bool,
    subset_sizes: Vec<usize>,
    subset_entropies: Vec<f64>,
    max_entropy_gap: f64,
}

fn partition(a: PartitionArgs) -> Result<()> {
    let cloud: PointCloud<f64> = load_cloud(&a.input)?;
    let p = clone_partition(&cloud, a.levels, a.seed, a.tol, a.max_retries)?;
    let mut w = csv_writer(&a.out)?;
    w.write_record(["point", "subset"]).map_err(csv_err)?;
    for (i, s) in p.assignment.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    let summary = PartitionSummary {
        levels: p.levels,
        seed: p.seed,
        attempts: p.attempts,
        within_tolerance: p.within_tolerance,
        subset_sizes: p.sizes(),
        max_entropy_gap: p.max_entropy_gap(),
        subset_entropies: p.subset_entropies,
    };
    let json: PathBuf = a.entropies_out.unwrap_or_else(|| a.out.with_extension("json"));
    write_json(&summary, &json)?;
    if !summary.within_tolerance {
        log::warn!("entropy gap {:.4} nats exceeds the tolerance", summary.max_entropy_gap);
    }
    Ok(())
}

fn knn(a: KnnArgs) -> Result<()> {
    set_threads(a.threads);
    let cloud: PointCloud<f64> = load_cloud(&a.input)?;
    let graph = knn_with(&cloud.to_tensor(), a.neighbors, a.metric, a.method)?;
    fs::write(&a.out, graph.to_csv())?;
    Ok(())
}

fn params(a: ParamsArgs) -> Result<()> {
    let cfg = resolve(&a.model)?;
    let c = count_params(&cfg.model)?;
    println!("branch {}", c.branch);
    if c.psi_mlp > 0 {
        println!("psi_mlp {}", c.psi_mlp);
    }
    println!("global {}", c.global);
    if c.seg_branch > 0 {
        println!("seg_branch {}", c.seg_branch);
    }
    println!("head {}", c.head);
    println!("total {}", c.total);
    if let Some(budget) = a.budget {
        if c.total > budget {
            return Err(Error::Data(format!("{} parameters exceed the budget of {budget}", c.total)));
        }
    }
    Ok(())
}
