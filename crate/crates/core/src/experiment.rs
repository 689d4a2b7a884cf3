//! Split → preprocess → graph → train → evaluate, per seed.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{fit_preprocessor, split, Dataset, EncodingMode, Preprocessor};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::{compute_edge_weights, ColumnGraphSpec};
use crate::metrics::{auc_from_probs, summarize, Summary};
use crate::train::{predict, train, EpochRecord, Mode, PreparedSplit, TrainConfig};

/// Everything produced by one seeded run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub preprocessor: Preprocessor,
    pub spec: ColumnGraphSpec,
    pub checkpoint: Checkpoint,
    pub report: RunReport,
    pub test: PreparedSplit,
}

/// Per-seed metrics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    /// Test AUC of the best-validation checkpoint.
    pub auc_roc: f64,
    pub val_auc: f64,
    pub best_epoch: usize,
    pub num_nodes: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dataset: String,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunReport>,
    pub mean: f64,
    pub std: f64,
    pub val: Summary,
}

pub fn prepare(p: &Preprocessor, d: &Dataset) -> Result<PreparedSplit> {
    let m = p.transform(d)?;
    Ok(PreparedSplit {
        features: m.values,
        labels: d.labels.clone(),
        row_ids: d.row_ids.clone(),
    })
}

/// One full run with `config.seed` driving the split, initialization and
/// shuffling. `store` holds frozen embeddings for every row of `data`.
pub fn run_seed(
    name: &str,
    data: &Dataset,
    encoding: EncodingMode,
    store: Option<&EmbeddingStore>,
    config: &TrainConfig,
) -> Result<SeedRun> {
    let (train_set, val_set, test_set) = split(data, config.seed, config.fractions)?;
    let preprocessor = fit_preprocessor(&train_set, encoding)?;
    let train_m = preprocessor.transform(&train_set)?;
    let spec = compute_edge_weights(&train_m)?;
    let train_split = PreparedSplit {
        features: train_m.values,
        labels: train_set.labels.clone(),
        row_ids: train_set.row_ids.clone(),
    };
    let val_split = prepare(&preprocessor, &val_set)?;
    let test_split = prepare(&preprocessor, &test_set)?;

    let classes = data.schema.num_classes();
    let (checkpoint, metrics) = train(&train_split, &val_split, &spec, store, classes, config)?;
    let probs = predict(
        &checkpoint,
        &test_split.features,
        &test_split.row_ids,
        &spec,
        store,
    )?;
    let test_auc = auc_from_probs(&probs, &test_split.labels)?;

    Ok(SeedRun {
        report: RunReport {
            dataset: name.to_string(),
            mode: config.mode,
            seed: config.seed,
            auc_roc: test_auc,
            val_auc: metrics.auc_roc,
            best_epoch: metrics.best_epoch,
            num_nodes: spec.num_nodes(),
            history: metrics.history,
        },
        preprocessor,
        spec,
        checkpoint,
        test: test_split,
    })
}

/// Runs every seed and reports mean and population std of the test AUC.
pub fn run_seeds(
    name: &str,
    data: &Dataset,
    encoding: EncodingMode,
    store: Option<&EmbeddingStore>,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<AggregateReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("seed list is empty".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let run = run_seed(name, data, encoding, store, &cfg).map_err(|e| Error::Seed {
            seed,
            source: Box::new(e),
        })?;
        runs.push(run.report);
    }
    let test = summarize(&runs.iter().map(|r| r.auc_roc).collect::<Vec<_>>());
    let val = summarize(&runs.iter().map(|r| r.val_auc).collect::<Vec<_>>());
    Ok(AggregateReport {
        dataset: name.to_string(),
        mode: config.mode,
        seeds: seeds.to_vec(),
        runs,
        mean: test.mean,
        std: test.std,
        val,
    })
}
