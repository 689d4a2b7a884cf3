//! One function per subcommand, each a thin layer over the library.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use tabglm::checkpoint::Checkpoint;
use tabglm::data::{
    fit_preprocessor, load_dataset, read_csv, split, Dataset, Preprocessor, TableSchema,
};
use tabglm::embed::{build_store, load_embeddings, write_embeddings, EmbeddingStore, HashEncoder};
use tabglm::experiment::{prepare, run_seed, RunReport};
use tabglm::gradcheck::{check_full_objective, check_primitives, CheckResult};
use tabglm::graph::{compute_edge_weights, ColumnGraphSpec};
use tabglm::metrics::{auc_from_probs, summarize, Summary};
use tabglm::text::{
    check_token_budget, serialize_dataset, write_corpus, TokenBudget, DEFAULT_TOKEN_LIMIT,
};
use tabglm::train::{predict, select_mode, Mode, ModeDecision, TrainConfig};

use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::settings::{ModeRequest, Provider, Settings};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PREPROCESSOR_FILE: &str = "preprocessor.json";
pub const GRAPH_SPEC_FILE: &str = "graph_spec.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Primitive checks must stay below this relative error.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
/// The full objective must stay below this relative error.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-4;

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn load(settings: &Settings) -> Result<Dataset> {
    let path = settings.data()?;
    Ok(read_csv(path, settings.label()?)?)
}

/// Resolves the requested mode against the automatic decision.
pub fn decide_mode(request: ModeRequest, data: &Dataset) -> ModeDecision {
    let auto = select_mode(data);
    match request {
        ModeRequest::Auto => auto,
        ModeRequest::Fixed(mode) => ModeDecision {
            mode,
            reason: format!(
                "requested; automatic choice was {} ({})",
                auto.mode, auto.reason
            ),
        },
    }
}

/// Embeddings for every row of `data` from the configured provider.
pub fn embedding_store(settings: &Settings, data: &Dataset) -> Result<EmbeddingStore> {
    let store = match settings.provider {
        Provider::Hash => build_store(
            &HashEncoder {
                dim: settings.hash_dim,
            },
            &serialize_dataset(data),
        )?,
        Provider::File => {
            let path = settings
                .embeddings
                .as_deref()
                .ok_or_else(|| anyhow!("--provider file requires --embeddings"))?;
            load_embeddings(path)?
        }
    };
    store.check_covers(&data.row_ids)?;
    Ok(store)
}

fn run_config(settings: &Settings, mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        ..settings.train.clone()
    }
}

/// Trains one seed and, when `dir` is given, writes its artifacts there.
fn train_one(
    settings: &Settings,
    data: &Dataset,
    mode: Mode,
    store: &EmbeddingStore,
    seed: u64,
    dir: Option<&Path>,
) -> Result<RunReport> {
    let path = settings.data()?;
    let config = run_config(settings, mode, seed);
    let run = run_seed(
        &dataset_name(path),
        data,
        settings.encoding,
        Some(store),
        &config,
    )?;
    info!(
        "seed {seed}: test auc {:.4}, val auc {:.4}, best epoch {}",
        run.report.auc_roc, run.report.val_auc, run.report.best_epoch
    );
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        run.checkpoint.save(dir.join(CHECKPOINT_FILE))?;
        write_json(&dir.join(PREPROCESSOR_FILE), &run.preprocessor)?;
        write_json(&dir.join(GRAPH_SPEC_FILE), &run.spec)?;
        write_json(&dir.join(SCHEMA_FILE), &data.schema)?;
        write_json(&dir.join(METRICS_FILE), &run.report)?;
    }
    Ok(run.report)
}

/// `train` and `ablate`: one seed, metrics JSON on stdout.
pub fn train(command: &str, settings: &Settings) -> Result<()> {
    let data = load(settings)?;
    let decision = decide_mode(settings.mode, &data);
    info!("mode {}: {}", decision.mode, decision.reason);
    let store = embedding_store(settings, &data)?;
    let manifest = RunManifest::new(command, settings, decision.clone())?;
    if let Some(out) = &settings.out {
        manifest.write(out)?;
    }
    let report = train_one(
        settings,
        &data,
        decision.mode,
        &store,
        settings.seed(),
        settings.out.as_deref(),
    )?;
    print_json(&report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub auc_roc: f64,
    pub val_auc: f64,
    pub best_epoch: usize,
}

/// Aggregate over seeds: the per-seed reports plus mean and population std
/// of the test AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    pub val: Summary,
    pub runs: Vec<RunReport>,
}

/// `seeds`: one run per seed, one stdout line per seed, then the summary.
pub fn seeds(settings: &Settings) -> Result<()> {
    let data = load(settings)?;
    let decision = decide_mode(settings.mode, &data);
    info!("mode {}: {}", decision.mode, decision.reason);
    let store = embedding_store(settings, &data)?;
    let manifest = RunManifest::new("seeds", settings, decision.clone())?;
    if let Some(out) = &settings.out {
        manifest.write(out)?;
    }
    let mut runs = Vec::with_capacity(settings.seeds.len());
    for &seed in &settings.seeds {
        let dir = settings
            .out
            .as_ref()
            .map(|o| o.join(format!("seed-{seed}")));
        let report = train_one(settings, &data, decision.mode, &store, seed, dir.as_deref())
            .with_context(|| format!("seed {seed}"))?;
        print_json(&SeedRow {
            seed,
            auc_roc: report.auc_roc,
            val_auc: report.val_auc,
            best_epoch: report.best_epoch,
        })?;
        runs.push(report);
    }
    let test = summarize(&runs.iter().map(|r| r.auc_roc).collect::<Vec<_>>());
    let val = summarize(&runs.iter().map(|r| r.val_auc).collect::<Vec<_>>());
    let aggregate = Aggregate {
        dataset: dataset_name(settings.data()?),
        mode: decision.mode,
        seeds: settings.seeds.clone(),
        mean: test.mean,
        std: test.std,
        val,
        runs,
    };
    if let Some(out) = &settings.out {
        write_json(&out.join(AGGREGATE_FILE), &aggregate)?;
    }
    print_json(&serde_json::json!({ "mean": test.mean, "std": test.std }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    pub auc_roc: f64,
    pub rows: usize,
}

/// `eval`: scores a trained run directory on its own test split, or on
/// every row of `data` when given.
pub fn eval(run_dir: &Path, data: Option<&Path>) -> Result<()> {
    // Per-seed directories of a `seeds` run share their parent's manifest.
    let own = run_dir.join(MANIFEST_FILE);
    let manifest_path = match run_dir.parent() {
        Some(parent) if !own.exists() => parent.join(MANIFEST_FILE),
        _ => own,
    };
    let manifest = RunManifest::read(&manifest_path)?;
    let settings = &manifest.settings;
    let checkpoint = Checkpoint::load(run_dir.join(CHECKPOINT_FILE))?;
    let preprocessor: Preprocessor = read_json(&run_dir.join(PREPROCESSOR_FILE))?;
    let spec: ColumnGraphSpec = read_json(&run_dir.join(GRAPH_SPEC_FILE))?;
    let schema: TableSchema = read_json(&run_dir.join(SCHEMA_FILE))?;

    let (name, rows) = match data {
        Some(path) => (dataset_name(path), load_dataset(path, &schema)?),
        None => {
            let path = settings.data()?;
            let full = load_dataset(path, &schema)?;
            let (_, _, test) = split(&full, checkpoint.seed, settings.train.fractions)?;
            (dataset_name(path), test)
        }
    };
    let store = if checkpoint.mode == Mode::TextOnly {
        Some(embedding_store(settings, &rows)?)
    } else {
        None
    };
    let prepared = prepare(&preprocessor, &rows)?;
    let probs = predict(
        &checkpoint,
        &prepared.features,
        &prepared.row_ids,
        &spec,
        store.as_ref(),
    )?;
    print_json(&EvalReport {
        dataset: name,
        mode: checkpoint.mode,
        seed: checkpoint.seed,
        auc_roc: auc_from_probs(&probs, &prepared.labels)?,
        rows: rows.len(),
    })
}

/// `schema`: the inferred schema as JSON.
pub fn schema(path: &Path, label: &str) -> Result<()> {
    let schema = tabglm::data::infer_schema(path, label)?;
    print_json(&schema)
}

/// `serialize`: the JSON-lines corpus, to `--out` or stdout.
pub fn serialize(settings: &Settings) -> Result<()> {
    let data = load(settings)?;
    let rows = serialize_dataset(&data);
    for r in &rows {
        if let TokenBudget::Warn { excess } = check_token_budget(r, DEFAULT_TOKEN_LIMIT) {
            warn!(
                "row {} exceeds the token budget by about {excess} tokens",
                r.row_id
            );
        }
    }
    match &settings.out {
        Some(out) => {
            write_corpus(&rows, out)?;
            info!("wrote {} rows to {}", rows.len(), out.display());
        }
        None => {
            for r in &rows {
                print_json(&serde_json::json!({ "row_id": r.row_id, "text": r.text }))?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EmbedSummary {
    provider: String,
    rows: usize,
    dim: usize,
    out: Option<PathBuf>,
}

/// `embed`: builds (hash) or validates (file) an embedding store and
/// writes it as TGEM.
pub fn embed(settings: &Settings) -> Result<()> {
    let store = match (settings.provider, &settings.data) {
        (_, Some(_)) => embedding_store(settings, &load(settings)?)?,
        (Provider::File, None) => load_embeddings(
            settings
                .embeddings
                .as_deref()
                .ok_or_else(|| anyhow!("--provider file requires --embeddings"))?,
        )?,
        (Provider::Hash, None) => bail!("--data is required for the hash provider"),
    };
    if settings.provider == Provider::Hash && settings.out.is_none() {
        bail!("--out is required for the hash provider");
    }
    if let Some(out) = &settings.out {
        write_embeddings(&store, out)?;
    }
    print_json(&EmbedSummary {
        provider: settings.provider.to_string(),
        rows: store.len(),
        dim: store.dim(),
        out: settings.out.clone(),
    })
}

/// `graph-spec`: the column graph fitted on the seed's training split.
pub fn graph_spec(settings: &Settings) -> Result<()> {
    let data = load(settings)?;
    let (train, _, _) = split(&data, settings.seed(), settings.train.fractions)?;
    let pre = fit_preprocessor(&train, settings.encoding)?;
    let spec = compute_edge_weights(&pre.transform(&train)?)?;
    match &settings.out {
        Some(out) => write_json(out, &spec)?,
        None => print_json(&spec)?,
    }
    Ok(())
}

/// `gradcheck`: finite-difference checks, one JSON line each.
pub fn gradcheck(seed: u64) -> Result<()> {
    let mut failed: Vec<CheckResult> = Vec::new();
    let mut results = check_primitives(seed, 1e-5)?;
    results.retain(|r| {
        if r.max_rel_error >= PRIMITIVE_TOLERANCE {
            failed.push(r.clone());
        }
        true
    });
    let full = check_full_objective(seed, 1e-5)?;
    if full.max_rel_error >= OBJECTIVE_TOLERANCE {
        failed.push(full.clone());
    }
    results.push(full);
    for r in &results {
        print_json(r)?;
    }
    if !failed.is_empty() {
        let names: Vec<String> = failed
            .iter()
            .map(|r| format!("{} ({:e})", r.name, r.max_rel_error))
            .collect();
        bail!("gradient check failed: {}", names.join(", "));
    }
    Ok(())
}
