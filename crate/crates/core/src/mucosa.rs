//! Joint objective: supervised cross-entropy plus a symmetric, stop-gradient
//! contrastive consistency term between text and graph embeddings.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn check_pair(tape: &Tape, a: Var, b: Var) -> Result<usize> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb || sa.0 == 0 {
        return Err(Error::Shape {
            op: "consistency_loss",
            lhs: sa,
            rhs: sb,
        });
    }
    Ok(sa.0)
}

/// Per-row log-probability of the matching pair,
/// `log softmax_j(anchor_i · target_jᵀ / τ)` at `j = i`, as a B×1 column.
/// Both inputs must already be row-normalized; `target` is used as given,
/// so wrap it in a stop-gradient to block its flow.
fn matched_log_prob(tape: &mut Tape, anchor: Var, target: Var, tau: f64) -> Result<Var> {
    let b = tape.shape(anchor).0;
    let tt = tape.transpose(target);
    let sim = tape.matmul(anchor, tt)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let lp = tape.log_softmax(logits);
    tape.pick(lp, Rc::new((0..b).collect()))
}

/// One direction of the consistency loss: `anchor` is pulled towards its
/// own row of `target`, which enters only through a stop-gradient.
pub fn one_sided_consistency(tape: &mut Tape, anchor: Var, target: Var, tau: f64) -> Result<Var> {
    check_pair(tape, anchor, target)?;
    let a = tape.row_l2_normalize(anchor);
    let t = tape.row_l2_normalize(target);
    let t = tape.stop_gradient(t);
    let lp = matched_log_prob(tape, a, t, tau)?;
    let m = tape.mean(lp);
    Ok(tape.scale(m, -1.0))
}

/// Symmetric consistency loss over a batch of paired embeddings.
///
/// Rows are L2-normalized; each direction scores row i of one modality
/// against every row of the other modality at temperature `tau`, with the
/// other modality behind a stop-gradient. The loss is minus the mean of
/// the two matched log-probabilities.
pub fn consistency_loss(tape: &mut Tape, g_text: Var, g_graph: Var, tau: f64) -> Result<Var> {
    check_pair(tape, g_text, g_graph)?;
    let text = tape.row_l2_normalize(g_text);
    let graph = tape.row_l2_normalize(g_graph);
    let text_sg = tape.stop_gradient(text);
    let graph_sg = tape.stop_gradient(graph);

    let text_to_graph = matched_log_prob(tape, text, graph_sg, tau)?;
    let graph_to_text = matched_log_prob(tape, graph, text_sg, tau)?;
    let both = tape.add(text_to_graph, graph_to_text)?;
    let m = tape.mean(both);
    Ok(tape.scale(m, -0.5))
}

/// Mean cross-entropy of `logits` (B×C) against class indices.
pub fn supervised_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = tape.shape(logits);
    if labels.len() != b {
        return Err(Error::Shape {
            op: "supervised_loss",
            lhs: (b, c),
            rhs: (labels.len(), 1),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let lp = tape.log_softmax(logits);
    let picked = tape.pick(lp, Rc::new(labels.to_vec()))?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// `(1 − λ)·l_sup + λ·l_cons`.
pub fn joint_loss(tape: &mut Tape, l_sup: Var, l_cons: Var, lambda: f64) -> Result<Var> {
    let a = tape.scale(l_sup, 1.0 - lambda);
    let b = tape.scale(l_cons, lambda);
    tape.add(a, b)
}

/// Scalar form of [`joint_loss`].
pub fn joint_value(l_sup: f64, l_cons: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * l_sup + lambda * l_cons
}
