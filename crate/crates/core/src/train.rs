//! Training loop, mode selection and inference.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, DEFAULT_FRACTIONS};
use crate::embed::{EmbeddingStore, DEFAULT_HASH_DIM};
use crate::error::{Error, Result};
use crate::graph::ColumnGraphSpec;
use crate::metrics::auc_from_probs;
use crate::model::{
    classify, encode_graph, init_params, neighbour_mix, softmax_rows, BoundParams, ModelDims,
    ModelParams, ParamScope,
};
use crate::mucosa::{consistency_loss, joint_loss, supervised_loss, LossConfig};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Matrix;

/// Share of rows above which a column's distinct-value count forces text-only mode.
pub const HIGH_CARDINALITY_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "graph")]
    GraphOnly,
    #[serde(rename = "text")]
    TextOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::GraphOnly => "graph",
            Mode::TextOnly => "text",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Mode::Full),
            "graph" | "graph-only" | "graphonly" => Ok(Mode::GraphOnly),
            "text" | "text-only" | "textonly" => Ok(Mode::TextOnly),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub tau: f64,
    pub mode: Mode,
    pub seed: u64,
    pub fractions: (f64, f64, f64),
    pub hidden: usize,
    pub layers: usize,
    pub classifier_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 240,
            patience: 16,
            lambda: 0.2,
            tau: 0.1,
            mode: Mode::Full,
            seed: 5,
            fractions: DEFAULT_FRACTIONS,
            hidden: 64,
            layers: 3,
            classifier_hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        self.loss().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            lambda: self.lambda,
        }
    }

    /// FNV-1a over the canonical JSON form, as 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub mode: Mode,
    pub reason: String,
}

/// Text-only when there are no numeric features or some column has more
/// distinct values than 60% of the rows; full otherwise.
pub fn select_mode(d: &Dataset) -> ModeDecision {
    let schema = &d.schema;
    if schema.numeric_count() == 0 {
        return ModeDecision {
            mode: Mode::TextOnly,
            reason: "no numeric feature columns".into(),
        };
    }
    let limit = HIGH_CARDINALITY_FRACTION * d.len() as f64;
    for (col, count) in schema.columns.iter().zip(d.distinct_counts()) {
        if count as f64 > limit {
            return ModeDecision {
                mode: Mode::TextOnly,
                reason: format!(
                    "column `{}` has {count} distinct values, more than 60% of {} rows",
                    col.name,
                    d.len()
                ),
            };
        }
    }
    ModeDecision {
        mode: Mode::Full,
        reason: format!(
            "{} numeric of {} feature columns",
            schema.numeric_count(),
            schema.num_features()
        ),
    }
}

/// Encoded rows of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    /// n × m′.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub row_ids: Vec<u64>,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub supervised: f64,
    pub consistency: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Validation AUC of the returned checkpoint.
    pub auc_roc: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn text_rows(store: &EmbeddingStore, ids: &[u64]) -> Result<Matrix> {
    let d = store.dim();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        data.extend(store.get(id)?.as_slice().iter().map(|&v| f64::from(v)));
    }
    Matrix::from_vec(ids.len(), d, data)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

struct StepLosses {
    total: f64,
    supervised: f64,
    consistency: f64,
}

/// Loss nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    /// What gets differentiated: the joint loss in full mode, the
    /// supervised loss otherwise.
    pub total: Var,
    pub supervised: Var,
    pub consistency: Option<Var>,
}

/// Builds the training objective for one minibatch on `tape`.
///
/// `text` holds the frozen embeddings of the batch rows; it is required in
/// full and text-only modes and ignored in graph-only mode, which skips the
/// consistency term entirely.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    tape: &mut Tape,
    bound: &BoundParams,
    mode: Mode,
    loss: LossConfig,
    features: &Matrix,
    text: Option<&Matrix>,
    labels: &[usize],
    mix: &Rc<Matrix>,
) -> Result<Objective> {
    let need_text = || {
        text.cloned()
            .ok_or_else(|| Error::InvalidConfig(format!("{mode} mode needs text embeddings")))
    };
    match mode {
        Mode::TextOnly => {
            let g = tape.constant(need_text()?);
            let logits = classify(tape, bound, g)?;
            let sup = supervised_loss(tape, logits, labels)?;
            Ok(Objective {
                total: sup,
                supervised: sup,
                consistency: None,
            })
        }
        Mode::GraphOnly => {
            let enc = encode_graph(tape, bound, features, mix)?;
            let logits = classify(tape, bound, enc.g_graph)?;
            let sup = supervised_loss(tape, logits, labels)?;
            Ok(Objective {
                total: sup,
                supervised: sup,
                consistency: None,
            })
        }
        Mode::Full => {
            let enc = encode_graph(tape, bound, features, mix)?;
            let logits = classify(tape, bound, enc.g_graph)?;
            let sup = supervised_loss(tape, logits, labels)?;
            let g_text = tape.constant(need_text()?);
            let cons = consistency_loss(tape, g_text, enc.g_graph, loss.tau)?;
            Ok(Objective {
                total: joint_loss(tape, sup, cons, loss.lambda)?,
                supervised: sup,
                consistency: Some(cons),
            })
        }
    }
}

/// Forward, backward and gradient collection for one minibatch.
#[allow(clippy::too_many_arguments)]
fn step_gradients(
    params: &ModelParams,
    scope: ParamScope,
    mode: Mode,
    loss: LossConfig,
    features: &Matrix,
    text: Option<&Matrix>,
    labels: &[usize],
    mix: &Rc<Matrix>,
) -> Result<(StepLosses, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, scope);
    let obj = objective(&mut tape, &bound, mode, loss, features, text, labels, mix)?;
    let losses = StepLosses {
        total: tape.value(obj.total).item(),
        supervised: tape.value(obj.supervised).item(),
        consistency: obj.consistency.map_or(0.0, |c| tape.value(c).item()),
    };
    if !losses.total.is_finite() {
        return Ok((losses, Vec::new()));
    }
    tape.backward(obj.total)?;
    let grads = bound
        .trainable()
        .into_iter()
        .map(|v| tape.grad(v))
        .collect();
    Ok((losses, grads))
}

pub fn model_dims(config: &TrainConfig, m: usize, embed_dim: usize, classes: usize) -> ModelDims {
    ModelDims {
        num_nodes: m,
        hidden: config.hidden,
        layers: config.layers,
        embed_dim,
        classifier_hidden: config.classifier_hidden,
        num_classes: classes,
    }
}

/// Trains with minibatch Adam and early stopping on validation AUC,
/// returning the best-validation checkpoint.
///
/// `store` must cover every train and validation row in full and
/// text-only modes. Graph-only mode ignores it apart from taking the
/// embedding dimension from it.
pub fn train(
    train: &PreparedSplit,
    val: &PreparedSplit,
    spec: &ColumnGraphSpec,
    store: Option<&EmbeddingStore>,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(Checkpoint, Metrics)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::TooFewRows(train.len().min(val.len())));
    }
    let m = spec.num_nodes();
    for split in [train, val] {
        if split.features.cols() != m {
            return Err(Error::ColumnMismatch {
                expected: m,
                found: split.features.cols(),
            });
        }
    }
    let needs_text = matches!(config.mode, Mode::Full | Mode::TextOnly);
    let store = match (needs_text, store) {
        (true, None) => {
            return Err(Error::InvalidConfig(format!(
                "{} mode needs an embedding store",
                config.mode
            )));
        }
        (true, Some(s)) => {
            s.check_covers(&train.row_ids)?;
            s.check_covers(&val.row_ids)?;
            Some(s)
        }
        (false, s) => s,
    };
    let embed_dim = store.map_or(DEFAULT_HASH_DIM, EmbeddingStore::dim);
    let dims = model_dims(config, m, embed_dim, num_classes);
    let scope = if config.mode == Mode::TextOnly {
        ParamScope::Classifier
    } else {
        ParamScope::All
    };

    let mix = neighbour_mix(spec);
    let mut params = init_params(config.seed, dims)?;
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate));
    let train_text = match store {
        Some(s) if needs_text => Some(text_rows(s, &train.row_ids)?),
        _ => None,
    };
    let config_hash = config.hash();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut epoch_rng(config.seed, epoch));

        let (mut sum_total, mut sum_sup, mut sum_cons) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let features = train.features.select_rows(batch);
            let text = train_text.as_ref().map(|t| t.select_rows(batch));
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (losses, grads) = step_gradients(
                &params,
                scope,
                config.mode,
                config.loss(),
                &features,
                text.as_ref(),
                &labels,
                &mix,
            )?;
            if !losses.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, batch {b}: total {}, supervised {}, consistency {}",
                    losses.total, losses.supervised, losses.consistency
                )));
            }
            adam.step(params.tensors_mut(scope), &grads);
            let w = batch.len() as f64;
            sum_total += w * losses.total;
            sum_sup += w * losses.supervised;
            sum_cons += w * losses.consistency;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }

        let probs = predict_params(
            &params,
            config.mode,
            &val.features,
            &val.row_ids,
            spec,
            store,
        )?;
        let val_auc = auc_from_probs(&probs, &val.labels)?;
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: sum_total / n,
            supervised: sum_sup / n,
            consistency: sum_cons / n,
            val_auc,
        };
        debug!(
            "epoch {epoch}: loss {:.5} (sup {:.5}, cons {:.5}) val auc {val_auc:.4}",
            record.loss, record.supervised, record.consistency
        );
        history.push(record);

        if best.as_ref().is_none_or(|(a, _, _)| val_auc > *a) {
            best = Some((val_auc, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                info!("early stop at epoch {epoch}");
                break;
            }
        }
    }

    let (auc_roc, best_epoch, best_params) = best.expect("at least one epoch");
    info!("best val auc {auc_roc:.4} at epoch {best_epoch}");
    Ok((
        Checkpoint {
            mode: config.mode,
            seed: config.seed,
            config_hash,
            params: best_params,
        },
        Metrics {
            auc_roc,
            best_epoch,
            history,
        },
    ))
}

const PREDICT_CHUNK: usize = 512;

fn predict_params(
    params: &ModelParams,
    mode: Mode,
    features: &Matrix,
    row_ids: &[u64],
    spec: &ColumnGraphSpec,
    store: Option<&EmbeddingStore>,
) -> Result<Matrix> {
    let n = features.rows();
    let mix = neighbour_mix(spec);
    let mut out = Matrix::zeros(n, params.dims.num_classes);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let g = match mode {
            Mode::TextOnly => {
                let store = store.ok_or_else(|| {
                    Error::InvalidConfig("text-only prediction needs an embedding store".into())
                })?;
                let ids: Vec<u64> = chunk.iter().map(|&i| row_ids[i]).collect();
                tape.constant(text_rows(store, &ids)?)
            }
            Mode::Full | Mode::GraphOnly => {
                encode_graph(&mut tape, &bound, &features.select_rows(chunk), &mix)?.g_graph
            }
        };
        let logits = classify(&mut tape, &bound, g)?;
        let probs = softmax_rows(tape.value(logits));
        for (k, &i) in chunk.iter().enumerate() {
            out.row_mut(i).copy_from_slice(probs.row(k));
        }
    }
    Ok(out)
}

/// Class probabilities (n × C).
///
/// Full and graph-only checkpoints run the graph encoder alone and never
/// read `store`; text-only checkpoints look rows up in `store`.
pub fn predict(
    checkpoint: &Checkpoint,
    features: &Matrix,
    row_ids: &[u64],
    spec: &ColumnGraphSpec,
    store: Option<&EmbeddingStore>,
) -> Result<Matrix> {
    let dims = checkpoint.dims();
    if features.cols() != dims.num_nodes || spec.num_nodes() != dims.num_nodes {
        return Err(Error::ColumnMismatch {
            expected: dims.num_nodes,
            found: features.cols(),
        });
    }
    if row_ids.len() != features.rows() {
        return Err(Error::Shape {
            op: "predict",
            lhs: features.shape(),
            rhs: (row_ids.len(), 1),
        });
    }
    let store = if checkpoint.mode == Mode::TextOnly {
        store
    } else {
        None
    };
    predict_params(
        &checkpoint.params,
        checkpoint.mode,
        features,
        row_ids,
        spec,
        store,
    )
}
