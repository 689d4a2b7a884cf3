//! Flag and config-file resolution. Flags win over `key=value` lines.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tabglm::data::EncodingMode;
use tabglm::embed::DEFAULT_HASH_DIM;
use tabglm::train::{Mode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Hash,
    File,
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provider::Hash => "hash",
            Provider::File => "file",
        })
    }
}

impl FromStr for Provider {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hash" => Ok(Provider::Hash),
            "file" => Ok(Provider::File),
            other => bail!("unknown provider `{other}` (expected hash or file)"),
        }
    }
}

/// `auto` defers to the dataset-driven mode decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModeRequest {
    Auto,
    Fixed(Mode),
}

impl fmt::Display for ModeRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeRequest::Auto => f.write_str("auto"),
            ModeRequest::Fixed(m) => m.fmt(f),
        }
    }
}

impl From<ModeRequest> for String {
    fn from(m: ModeRequest) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for ModeRequest {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ModeRequest {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ModeRequest::Auto);
        }
        Ok(ModeRequest::Fixed(s.parse::<Mode>()?))
    }
}

fn parse_encoding(s: &str) -> std::result::Result<EncodingMode, String> {
    s.parse::<EncodingMode>().map_err(|e| e.to_string())
}

/// Flags shared by every command that touches a dataset or a run.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the label column.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, alias = "list", value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// auto, full, graph or text.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub provider: Option<Provider>,
    /// TGEM file for the file provider.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// onehot or label.
    #[arg(long, value_parser = parse_encoding)]
    pub encoding: Option<EncodingMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dimension of hash-provider embeddings.
    #[arg(long)]
    pub hash_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub classifier_hidden: Option<usize>,
    /// File of `key=value` lines; keys are flag names without dashes.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const CONFIG_KEYS: &[&str] = &[
    "data",
    "label",
    "seed",
    "seeds",
    "lambda",
    "tau",
    "lr",
    "batch",
    "max-epochs",
    "patience",
    "mode",
    "provider",
    "embeddings",
    "encoding",
    "out",
    "hash-dim",
    "hidden",
    "layers",
    "classifier-hidden",
];

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), n + 1))?;
        let key = key.trim().replace('_', "-");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown key `{key}`", path.display(), n + 1);
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn pick<T: FromStr>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    file.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| anyhow!("config key `{key}`: {e}"))
        })
        .transpose()
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|e| anyhow!("seed `{p}`: {e}"))
        })
        .collect()
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub label: Option<String>,
    pub seeds: Vec<u64>,
    pub mode: ModeRequest,
    pub provider: Provider,
    pub embeddings: Option<PathBuf>,
    pub encoding: EncodingMode,
    pub hash_dim: usize,
    pub out: Option<PathBuf>,
    /// Training parameters; `seed` and `mode` are filled in per run.
    pub train: TrainConfig,
}

/// Seeds used by `seeds` when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [5, 108, 180, 234, 250];

impl Settings {
    /// Resolves flags over the config file; without any seed setting the
    /// run uses the single default seed.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        Self::resolve_with_seeds(args, &[TrainConfig::default().seed])
    }

    /// As [`Settings::resolve`], with `default_seeds` used when neither a
    /// seed nor a seed list is given.
    pub fn resolve_with_seeds(args: &RunArgs, default_seeds: &[u64]) -> Result<Self> {
        let file = match &args.config {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        };
        let d = TrainConfig::default();
        let seed: Option<u64> = pick(args.seed, &file, "seed")?;
        let seeds = match (&args.seeds, file.get("seeds")) {
            (Some(list), _) => list.clone(),
            (None, Some(s)) if args.seed.is_none() => parse_seed_list(s)?,
            _ => seed.map_or_else(|| default_seeds.to_vec(), |s| vec![s]),
        };
        if seeds.is_empty() {
            bail!("seed list is empty");
        }
        let mode = pick(args.mode.clone(), &file, "mode")?
            .map(|m| m.parse::<ModeRequest>())
            .transpose()?
            .unwrap_or(ModeRequest::Auto);
        let train = TrainConfig {
            learning_rate: pick(args.lr, &file, "lr")?.unwrap_or(d.learning_rate),
            batch_size: pick(args.batch, &file, "batch")?.unwrap_or(d.batch_size),
            max_epochs: pick(args.max_epochs, &file, "max-epochs")?.unwrap_or(d.max_epochs),
            patience: pick(args.patience, &file, "patience")?.unwrap_or(d.patience),
            lambda: pick(args.lambda, &file, "lambda")?.unwrap_or(d.lambda),
            tau: pick(args.tau, &file, "tau")?.unwrap_or(d.tau),
            hidden: pick(args.hidden, &file, "hidden")?.unwrap_or(d.hidden),
            layers: pick(args.layers, &file, "layers")?.unwrap_or(d.layers),
            classifier_hidden: pick(args.classifier_hidden, &file, "classifier-hidden")?
                .unwrap_or(d.classifier_hidden),
            seed: seeds[0],
            ..d
        };
        train.validate()?;
        let settings = Settings {
            data: pick(args.data.clone(), &file, "data")?,
            label: pick(args.label.clone(), &file, "label")?,
            seeds,
            mode,
            provider: pick(args.provider, &file, "provider")?.unwrap_or(Provider::Hash),
            embeddings: pick(args.embeddings.clone(), &file, "embeddings")?,
            encoding: pick(args.encoding, &file, "encoding")?.unwrap_or(EncodingMode::OneHot),
            hash_dim: pick(args.hash_dim, &file, "hash-dim")?.unwrap_or(DEFAULT_HASH_DIM),
            out: pick(args.out.clone(), &file, "out")?,
            train,
        };
        if settings.provider == Provider::File && settings.embeddings.is_none() {
            bail!("--provider file requires --embeddings");
        }
        if settings.hash_dim < 2 {
            bail!("--hash-dim must be at least 2");
        }
        Ok(settings)
    }

    pub fn data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| anyhow!("--data is required"))
    }

    pub fn label(&self) -> Result<&str> {
        self.label
            .as_deref()
            .ok_or_else(|| anyhow!("--label is required"))
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }
}
