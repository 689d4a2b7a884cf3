//! Message-passing graph encoder, projection head and classifier head.

use std::rc::Rc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::ColumnGraphSpec;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// m′, encoded feature columns (graph nodes).
    pub num_nodes: usize,
    pub hidden: usize,
    pub layers: usize,
    /// d, shared with the text embeddings.
    pub embed_dim: usize,
    pub classifier_hidden: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn new(num_nodes: usize, embed_dim: usize, num_classes: usize) -> Self {
        Self {
            num_nodes,
            hidden: 64,
            layers: 3,
            embed_dim,
            classifier_hidden: 64,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_nodes", self.num_nodes),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("embed_dim", self.embed_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("num_classes", self.num_classes),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::InvalidConfig(format!(
                "model dimension `{name}` must be positive"
            ))),
            None => Ok(()),
        }
    }
}

/// One GIN-style layer: h ← relu(MLP((1+ε)·h_v + Σ_{u≠v} W[u][v]·h_u)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    pub mlp_w1: Matrix,
    pub mlp_b1: Matrix,
    pub mlp_w2: Matrix,
    pub mlp_b2: Matrix,
    /// 1×1.
    pub epsilon: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    /// m′ × h, one identity embedding per node.
    pub column_embeddings: Matrix,
    pub layers: Vec<GnnLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub gnn: GnnParams,
    pub projection: ProjectionParams,
    pub classifier: ClassifierParams,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Glorot-uniform weights, zero biases, ε = 0; deterministic per seed.
pub fn init_params(seed: u64, dims: ModelDims) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = dims.hidden;
    let column_embeddings = glorot(&mut rng, dims.num_nodes, h);
    let layers = (0..dims.layers)
        .map(|_| GnnLayer {
            mlp_w1: glorot(&mut rng, h, h),
            mlp_b1: Matrix::zeros(1, h),
            mlp_w2: glorot(&mut rng, h, h),
            mlp_b2: Matrix::zeros(1, h),
            epsilon: Matrix::scalar(0.0),
        })
        .collect();
    let projection = ProjectionParams {
        weight: glorot(&mut rng, h, dims.embed_dim),
        bias: Matrix::zeros(1, dims.embed_dim),
    };
    let classifier = ClassifierParams {
        w1: glorot(&mut rng, dims.embed_dim, dims.classifier_hidden),
        b1: Matrix::zeros(1, dims.classifier_hidden),
        w2: glorot(&mut rng, dims.classifier_hidden, dims.num_classes),
        b2: Matrix::zeros(1, dims.num_classes),
    };
    Ok(ModelParams {
        dims,
        gnn: GnnParams {
            column_embeddings,
            layers,
        },
        projection,
        classifier,
    })
}

/// Which parameter groups a forward pass touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    /// Graph encoder, projection and classifier.
    All,
    /// Classifier head only (text-only mode).
    Classifier,
    /// Nothing trainable (inference).
    Frozen,
}

impl ModelParams {
    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> =
            vec![("gnn.column_embeddings".into(), &self.gnn.column_embeddings)];
        for (k, l) in self.gnn.layers.iter().enumerate() {
            out.push((format!("gnn.layers.{k}.mlp_w1"), &l.mlp_w1));
            out.push((format!("gnn.layers.{k}.mlp_b1"), &l.mlp_b1));
            out.push((format!("gnn.layers.{k}.mlp_w2"), &l.mlp_w2));
            out.push((format!("gnn.layers.{k}.mlp_b2"), &l.mlp_b2));
            out.push((format!("gnn.layers.{k}.epsilon"), &l.epsilon));
        }
        out.push(("proj.weight".into(), &self.projection.weight));
        out.push(("proj.bias".into(), &self.projection.bias));
        out.extend(self.classifier_tensors());
        out
    }

    fn classifier_tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("clf.w1".into(), &self.classifier.w1),
            ("clf.b1".into(), &self.classifier.b1),
            ("clf.w2".into(), &self.classifier.w2),
            ("clf.b2".into(), &self.classifier.b2),
        ]
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`],
    /// restricted to `scope`.
    pub fn tensors_mut(&mut self, scope: ParamScope) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        if scope == ParamScope::Frozen {
            return out;
        }
        if scope == ParamScope::All {
            out.push(&mut self.gnn.column_embeddings);
            for l in &mut self.gnn.layers {
                out.push(&mut l.mlp_w1);
                out.push(&mut l.mlp_b1);
                out.push(&mut l.mlp_w2);
                out.push(&mut l.mlp_b2);
                out.push(&mut l.epsilon);
            }
            out.push(&mut self.projection.weight);
            out.push(&mut self.projection.bias);
        }
        out.push(&mut self.classifier.w1);
        out.push(&mut self.classifier.b1);
        out.push(&mut self.classifier.w2);
        out.push(&mut self.classifier.b2);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Places parameters on a tape. Tensors inside `scope` become trainable
    /// parameters, the rest constants.
    pub fn bind(&self, tape: &mut Tape, scope: ParamScope) -> BoundParams {
        let gnn_trainable = scope == ParamScope::All;
        let clf_trainable = scope != ParamScope::Frozen;
        let mut leaf = |m: &Matrix, trainable: bool| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let column_embeddings = leaf(&self.gnn.column_embeddings, gnn_trainable);
        let layers = self
            .gnn
            .layers
            .iter()
            .map(|l| BoundLayer {
                mlp_w1: leaf(&l.mlp_w1, gnn_trainable),
                mlp_b1: leaf(&l.mlp_b1, gnn_trainable),
                mlp_w2: leaf(&l.mlp_w2, gnn_trainable),
                mlp_b2: leaf(&l.mlp_b2, gnn_trainable),
                epsilon: leaf(&l.epsilon, gnn_trainable),
            })
            .collect();
        let proj_weight = leaf(&self.projection.weight, gnn_trainable);
        let proj_bias = leaf(&self.projection.bias, gnn_trainable);
        let clf = [
            leaf(&self.classifier.w1, clf_trainable),
            leaf(&self.classifier.b1, clf_trainable),
            leaf(&self.classifier.w2, clf_trainable),
            leaf(&self.classifier.b2, clf_trainable),
        ];
        BoundParams {
            scope,
            column_embeddings,
            layers,
            proj_weight,
            proj_bias,
            clf_w1: clf[0],
            clf_b1: clf[1],
            clf_w2: clf[2],
            clf_b2: clf[3],
        }
    }

    /// Places every tensor on the tape as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.bind(tape, ParamScope::Frozen)
    }
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub epsilon: Var,
}

/// Tape handles for one [`ModelParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    scope: ParamScope,
    pub column_embeddings: Var,
    pub layers: Vec<BoundLayer>,
    pub proj_weight: Var,
    pub proj_bias: Var,
    pub clf_w1: Var,
    pub clf_b1: Var,
    pub clf_w2: Var,
    pub clf_b2: Var,
}

impl BoundParams {
    /// Wraps vars laid out in [`ModelParams::tensors`] order, all treated as
    /// trainable.
    pub fn from_vars(vars: &[Var], layers: usize) -> Result<Self> {
        let expected = 1 + 5 * layers + 2 + 4;
        if vars.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "expected {expected} parameter vars, got {}",
                vars.len()
            )));
        }
        let layer_vars = (0..layers)
            .map(|k| {
                let o = 1 + 5 * k;
                BoundLayer {
                    mlp_w1: vars[o],
                    mlp_b1: vars[o + 1],
                    mlp_w2: vars[o + 2],
                    mlp_b2: vars[o + 3],
                    epsilon: vars[o + 4],
                }
            })
            .collect();
        let o = 1 + 5 * layers;
        Ok(BoundParams {
            scope: ParamScope::All,
            column_embeddings: vars[0],
            layers: layer_vars,
            proj_weight: vars[o],
            proj_bias: vars[o + 1],
            clf_w1: vars[o + 2],
            clf_b1: vars[o + 3],
            clf_w2: vars[o + 4],
            clf_b2: vars[o + 5],
        })
    }

    /// Trainable vars in the order of [`ModelParams::tensors_mut`].
    pub fn trainable(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if self.scope == ParamScope::Frozen {
            return out;
        }
        if self.scope == ParamScope::All {
            out.push(self.column_embeddings);
            for l in &self.layers {
                out.extend([l.mlp_w1, l.mlp_b1, l.mlp_w2, l.mlp_b2, l.epsilon]);
            }
            out.extend([self.proj_weight, self.proj_bias]);
        }
        out.extend([self.clf_w1, self.clf_b1, self.clf_w2, self.clf_b2]);
        out
    }
}

/// Off-diagonal neighbour weights as a left-multiplication matrix:
/// `mix[v][u] = W[u][v]` for u ≠ v, zero diagonal.
pub fn neighbour_mix(spec: &ColumnGraphSpec) -> Rc<Matrix> {
    let m = spec.num_nodes();
    let mut mix = Matrix::zeros(m, m);
    for v in 0..m {
        for u in 0..m {
            if u != v && spec.adjacency(u, v) {
                mix.set(v, u, spec.weight(u, v));
            }
        }
    }
    Rc::new(mix)
}

/// Outputs of the graph encoder for a batch.
#[derive(Debug, Clone, Copy)]
pub struct GraphEncoding {
    /// B × h readout.
    pub q: Var,
    /// B × d projected embedding.
    pub g_graph: Var,
}

/// Runs the message-passing encoder and projection on a B × m′ batch of
/// node values.
///
/// Node states start as `value[v] · column_embeddings[v]`; each layer adds
/// (1+ε) times the node's own state to the W-weighted sum of the other
/// nodes' states and passes it through a two-layer relu MLP and a relu.
/// The readout is the mean over nodes.
pub fn encode_graph(
    tape: &mut Tape,
    params: &BoundParams,
    node_values: &Matrix,
    mix: &Rc<Matrix>,
) -> Result<GraphEncoding> {
    let (batch, m) = node_values.shape();
    let (emb_rows, _) = tape.shape(params.column_embeddings);
    if m != emb_rows || mix.rows() != m {
        return Err(Error::Shape {
            op: "encode_graph",
            lhs: node_values.shape(),
            rhs: (emb_rows, mix.rows()),
        });
    }
    if batch == 0 {
        return Err(Error::Shape {
            op: "encode_graph",
            lhs: (0, m),
            rhs: (1, m),
        });
    }

    let node_ids: Rc<Vec<usize>> = Rc::new((0..batch).flat_map(|_| 0..m).collect());
    let ident = tape.gather_rows(params.column_embeddings, node_ids)?;
    let values = tape.constant(Matrix::from_vec(batch * m, 1, node_values.data().to_vec())?);
    let mut h = tape.mul(ident, values)?;

    for layer in &params.layers {
        let neighbours = tape.block_mix(h, Rc::clone(mix))?;
        let eps_self = tape.mul(h, layer.epsilon)?;
        let own = tape.add(h, eps_self)?;
        let agg = tape.add(own, neighbours)?;
        let z = tape.matmul(agg, layer.mlp_w1)?;
        let z = tape.add(z, layer.mlp_b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, layer.mlp_w2)?;
        let z = tape.add(z, layer.mlp_b2)?;
        h = tape.relu(z);
    }

    let q = tape.group_mean(h, m)?;
    let g = tape.matmul(q, params.proj_weight)?;
    let g_graph = tape.add(g, params.proj_bias)?;
    Ok(GraphEncoding { q, g_graph })
}

/// `relu(g·w1 + b1)·w2 + b2`.
pub fn classify(tape: &mut Tape, params: &BoundParams, g: Var) -> Result<Var> {
    let z = tape.matmul(g, params.clf_w1)?;
    let z = tape.add(z, params.clf_b1)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, params.clf_w2)?;
    tape.add(z, params.clf_b2)
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
