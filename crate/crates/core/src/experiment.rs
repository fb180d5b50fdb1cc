//! End-to-end runs: load data, split, preprocess, train one model per seed,
//! evaluate, and write artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::config::{plan_sources, resolve_sources, RunConfig};
use crate::data::io::{load_dataset, LoadedDataset};
use crate::data::{class_weights, generate_synthetic, split, Dataset, PreprocessState, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{FusionModel, Sample, SourceInput, SourceSpec};
use crate::seed::substream;
use crate::train::{train, EpochRecord};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Loads the configured dataset. Synthetic data is hashed by its config.
pub fn load_data(cfg: &RunConfig) -> Result<LoadedDataset> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(path), None) => load_dataset(path),
        (None, Some(synth)) => {
            let dataset = generate_synthetic(synth)?;
            let hash = hex::encode(Sha256::digest(serde_json::to_vec(synth)?));
            Ok(LoadedDataset { dataset, manifest: None, hash })
        }
        _ => Err(Error::Config("set exactly one of data.path or data.synthetic".into())),
    }
}

/// Model inputs of one record, given its preprocessed structured row.
fn sample_inputs(dataset: &Dataset, row: &[f64], record: usize, sources: &[(SourceSpec, usize)]) -> Result<Vec<Vec<f64>>> {
    let r = &dataset.records()[record];
    sources
        .iter()
        .map(|(spec, _)| match &spec.input {
            SourceInput::Columns(cols) => cols
                .iter()
                .map(|&c| row.get(c).copied().ok_or_else(|| Error::dims("preprocessed row", c + 1, row.len())))
                .collect(),
            SourceInput::Embedding(name) => {
                let idx = dataset
                    .schema()
                    .embedding_index(name)
                    .ok_or_else(|| Error::Data(format!("dataset has no embedding {name:?}")))?;
                Ok(r.embeddings[idx].clone())
            }
        })
        .collect()
}

pub fn build_samples(
    dataset: &Dataset,
    state: &PreprocessState,
    sources: &[(SourceSpec, usize)],
    indices: &[usize],
) -> Result<Vec<Sample<f64>>> {
    let rows = state.apply_all(&dataset.subset(indices))?;
    indices
        .iter()
        .zip(rows)
        .map(|(&i, row)| {
            Ok(Sample {
                inputs: sample_inputs(dataset, &row, i, sources)?,
                label: dataset.records()[i].label,
            })
        })
        .collect()
}

/// Everything derived from the data for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: Split,
    pub state: PreprocessState,
    pub sources: Vec<(SourceSpec, usize)>,
    pub class_weights: Vec<f64>,
    pub train: Vec<Sample<f64>>,
    pub val: Vec<Sample<f64>>,
    pub test: Vec<Sample<f64>>,
}

pub fn prepare(cfg: &RunConfig, dataset: &Dataset, seed: u64) -> Result<Prepared> {
    let split = split(dataset.len(), seed)?;
    let state = PreprocessState::fit(dataset.schema(), &dataset.subset(&split.train))?;
    let plans = plan_sources(&cfg.fusion, dataset.schema())?;
    let sources = resolve_sources(&plans, dataset.schema(), &state)?;
    let train_labels: Vec<usize> = split.train.iter().map(|&i| dataset.records()[i].label).collect();
    let class_weights = class_weights(&train_labels, dataset.schema().classes.len())?;
    let build = |idx: &[usize]| build_samples(dataset, &state, &sources, idx);
    Ok(Prepared {
        train: build(&split.train)?,
        val: build(&split.val)?,
        test: build(&split.test)?,
        split,
        state,
        sources,
        class_weights,
    })
}

/// Binary metrics with class 1 as the positive class.
pub fn evaluate_model(model: &FusionModel<f64>, samples: &[Sample<f64>]) -> Result<MetricsReport> {
    if model.frame().len() != 2 {
        return Err(Error::Config(format!(
            "metrics are defined for binary tasks; the frame has {} classes",
            model.frame().len()
        )));
    }
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        scores.push(model.forward(&s.inputs, crate::encoders::Mode::Eval)?.probs[1]);
    }
    let labels: Vec<bool> = samples.iter().map(|s| s.label == 1).collect();
    evaluate(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub split: String,
    pub samples: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub report: RunReport,
    pub stopped_early: bool,
}

/// A failed run, with the last good checkpoint when training had started.
#[derive(Debug)]
pub struct RunFailure {
    pub seed: u64,
    pub error: Error,
    pub checkpoint: Option<Checkpoint>,
    pub history: Vec<EpochRecord>,
}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Error {
        f.error
    }
}

fn checkpoint_of(cfg: &RunConfig, data: &LoadedDataset, seed: u64, prepared: &Prepared, model: &FusionModel<f64>, best_epoch: usize) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        task: cfg.task.clone(),
        config_hash: cfg.hash(),
        dataset_hash: data.hash.clone(),
        seed,
        data: cfg.data.clone(),
        frame: model.frame().clone(),
        model: model.config().clone(),
        sources: Checkpoint::stored_sources(model),
        class_weights: model.class_weights().to_vec(),
        params: model.params().clone(),
        preprocess: prepared.state.clone(),
        best_epoch,
    }
}

/// Prepares the data for `seed` and builds the untrained model: random
/// encoder weights, then prototypes placed on the training features.
pub fn initial_model(cfg: &RunConfig, dataset: &Dataset, seed: u64) -> Result<(Prepared, FusionModel<f64>)> {
    let prepared = prepare(cfg, dataset, seed)?;
    let mut rng = substream(seed, "init");
    let mut model = FusionModel::new(
        dataset.schema().classes.clone(),
        cfg.model.clone(),
        prepared.sources.clone(),
        prepared.class_weights.clone(),
        &mut rng,
    )?;
    model.init_prototypes(&prepared.train, &mut rng)?;
    Ok((prepared, model))
}

/// Trains and evaluates one seed.
pub fn run_seed(cfg: &RunConfig, data: &LoadedDataset, seed: u64) -> Result<RunArtifacts, Box<RunFailure>> {
    let early = |error| Box::new(RunFailure { seed, error, checkpoint: None, history: Vec::new() });
    let (prepared, model) = initial_model(cfg, &data.dataset, seed).map_err(early)?;

    let outcome = train(model, &prepared.train, &prepared.val, &cfg.train, seed).map_err(|f| {
        let f = *f;
        Box::new(RunFailure {
            seed,
            checkpoint: Some(checkpoint_of(cfg, data, seed, &prepared, &f.last_good, 0)),
            error: f.error,
            history: f.history,
        })
    })?;
    let metrics = evaluate_model(&outcome.model, &prepared.test).map_err(early)?;
    let checkpoint = checkpoint_of(cfg, data, seed, &prepared, &outcome.model, outcome.best_epoch);
    Ok(RunArtifacts {
        report: RunReport {
            task: cfg.task.clone(),
            seed,
            config_hash: checkpoint.config_hash.clone(),
            dataset_hash: data.hash.clone(),
            split: "test".into(),
            samples: prepared.test.len(),
            metrics,
        },
        checkpoint,
        history: outcome.history,
        stopped_early: outcome.stopped_early,
    })
}

/// Re-evaluates a checkpoint on one partition (`train`, `val`, `test`) of
/// the split its seed produces, or on `all` records.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &LoadedDataset, part: &str) -> Result<RunReport> {
    if data.hash != ckpt.dataset_hash {
        log::warn!("dataset hash differs from the one the checkpoint was trained on");
    }
    let dataset = &data.dataset;
    if dataset.schema().classes != ckpt.frame {
        return Err(Error::FrameMismatch { expected: ckpt.frame.len(), found: dataset.schema().classes.len() });
    }
    let indices: Vec<usize> = if part == "all" {
        (0..dataset.len()).collect()
    } else {
        let s = split(dataset.len(), ckpt.seed)?;
        s.part(part)
            .ok_or_else(|| Error::Config(format!("unknown split {part:?}; use train, val, test or all")))?
            .to_vec()
    };
    let model = ckpt.to_model()?;
    let samples = build_samples(dataset, &ckpt.preprocess, &ckpt.sources(), &indices)?;
    Ok(RunReport {
        task: ckpt.task.clone(),
        seed: ckpt.seed,
        config_hash: ckpt.config_hash.clone(),
        dataset_hash: data.hash.clone(),
        split: part.into(),
        samples: samples.len(),
        metrics: evaluate_model(&model, &samples)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Standard error of the mean across seeds.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub runs: Vec<RunReport>,
    pub aggregate: BTreeMap<String, MetricSummary>,
}

pub fn mean_stderr(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, stderr }
}

pub fn summarize(runs: Vec<RunReport>) -> Result<Summary> {
    let first = runs.first().ok_or_else(|| Error::Data("no runs to summarize".into()))?;
    let aggregate = MetricsReport::NAMES
        .iter()
        .map(|&name| {
            let values: Vec<f64> = runs.iter().map(|r| r.metrics.get(name).expect("known metric")).collect();
            (name.to_string(), mean_stderr(&values))
        })
        .collect();
    Ok(Summary {
        task: first.task.clone(),
        config_hash: first.config_hash.clone(),
        dataset_hash: first.dataset_hash.clone(),
        aggregate,
        runs,
    })
}

/// `<root>/<task>-<first 12 hex digits of the config hash>`
pub fn run_dir(cfg: &RunConfig, root: &Path) -> PathBuf {
    root.join(format!("{}-{}", cfg.task, &cfg.hash()[..12]))
}

pub fn history_csv(history: &[EpochRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes the per-seed artifacts into `dir`.
pub fn write_run(dir: &Path, run: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    run.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    fs::write(dir.join(HISTORY_FILE), history_csv(&run.history)?)?;
    fs::write(dir.join(REPORT_FILE), json_bytes(&run.report)?)?;
    Ok(())
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    fs::write(path, json_bytes(report)?)?;
    Ok(())
}

/// Trains every configured seed (in parallel when `parallel`) and writes
/// `<run dir>/seed-<s>/...` plus `summary.json`. Refuses to reuse an
/// existing run directory unless `force`.
pub fn train_all(cfg: &RunConfig, root: &Path, force: bool, parallel: bool) -> Result<(PathBuf, Summary)> {
    cfg.validate()?;
    let dir = run_dir(cfg, root);
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir)?;
    }
    let data = load_data(cfg)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?)?;

    let results: Vec<Result<RunArtifacts, Box<RunFailure>>> = if parallel && cfg.seeds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let data = &data;
                    scope.spawn(move || run_seed(cfg, data, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| run_seed(cfg, &data, seed)).collect()
    };

    let mut reports = Vec::new();
    for result in results {
        match result {
            Ok(run) => {
                let seed_dir = dir.join(format!("seed-{}", run.report.seed));
                write_run(&seed_dir, &run)?;
                log::info!(
                    "seed {}: AUROC {:.4} BACC {:.4} ({} epochs)",
                    run.report.seed,
                    run.report.metrics.auroc,
                    run.report.metrics.bacc,
                    run.history.len() - 1
                );
                reports.push(run.report);
            }
            Err(failure) => {
                let seed_dir = dir.join(format!("seed-{}", failure.seed));
                fs::create_dir_all(&seed_dir)?;
                if let Some(ckpt) = &failure.checkpoint {
                    ckpt.save(&seed_dir.join(CHECKPOINT_FILE))?;
                }
                fs::write(seed_dir.join(HISTORY_FILE), history_csv(&failure.history)?)?;
                return Err((*failure).into());
            }
        }
    }
    let summary = summarize(reports)?;
    fs::write(dir.join(SUMMARY_FILE), json_bytes(&summary)?)?;
    Ok((dir, summary))
}

/// Rebuilds a summary from the `seed-*/report.json` files of a run directory.
pub fn collect_reports(dir: &Path) -> Result<Summary> {
    let mut reports = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .collect();
    entries.sort();
    for seed_dir in entries {
        let path = seed_dir.join(REPORT_FILE);
        if path.exists() {
            reports.push(serde_json::from_slice::<RunReport>(&fs::read(&path)?)?);
        }
    }
    reports.sort_by_key(|r| r.seed);
    summarize(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_standard_error() {
        let s = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample std sqrt(5/3), divided by sqrt(4)
        assert!((s.stderr - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[0.7]).stderr, 0.0);
    }
}
