//! Finite-difference checks of the autodiff primitives and of the full
//! training objective.

use std::rc::Rc;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Tape, Var};
use crate::data::{ColumnKind, ColumnSpec, Dataset, EncodingMode, TableSchema};
use crate::embed::{build_store, HashEncoder};
use crate::error::Result;
use crate::graph::compute_edge_weights;
use crate::model::{init_params, neighbour_mix, BoundParams, ModelDims};
use crate::mucosa::LossConfig;
use crate::tensor::Matrix;
use crate::text::serialize_dataset;
use crate::train::{objective, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let dist = Uniform::new(-1.0, 1.0);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Reduces `y` to a scalar through a fixed random weighting so every
/// output coordinate gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(y);
    let w = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), r, c);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Primitive = (
    &'static str,
    Vec<(usize, usize)>,
    Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
);

fn primitives(rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let rows = 4;
    let cols = 3;
    let gather: Rc<Vec<usize>> = Rc::new((0..6).map(|_| rng.gen_range(0..rows)).collect());
    let pick: Rc<Vec<usize>> = Rc::new((0..rows).map(|_| rng.gen_range(0..cols)).collect());
    let mix = Rc::new(random_matrix(rng, cols, cols));
    vec![
        (
            "matmul",
            vec![(rows, cols), (cols, 2)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "transpose",
            vec![(rows, cols)],
            Box::new(|t, v| Ok(t.transpose(v[0]))),
        ),
        (
            "add",
            vec![(rows, cols), (rows, cols)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "add_row",
            vec![(rows, cols), (1, cols)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "add_col",
            vec![(rows, cols), (rows, 1)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "add_scalar",
            vec![(rows, cols), (1, 1)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "mul",
            vec![(rows, cols), (rows, cols)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "mul_row",
            vec![(rows, cols), (1, cols)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "mul_col",
            vec![(rows, cols), (rows, 1)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "mul_scalar",
            vec![(rows, cols), (1, 1)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "scale",
            vec![(rows, cols)],
            Box::new(|t, v| Ok(t.scale(v[0], -1.7))),
        ),
        (
            "relu",
            vec![(rows, cols)],
            Box::new(|t, v| Ok(t.relu(v[0]))),
        ),
        (
            "row_l2_normalize",
            vec![(rows, cols)],
            Box::new(|t, v| Ok(t.row_l2_normalize(v[0]))),
        ),
        (
            "log_softmax",
            vec![(rows, cols)],
            Box::new(|t, v| Ok(t.log_softmax(v[0]))),
        ),
        (
            "mean",
            vec![(rows, cols)],
            Box::new(|t, v| Ok(t.mean(v[0]))),
        ),
        ("sum", vec![(rows, cols)], Box::new(|t, v| Ok(t.sum(v[0])))),
        (
            "gather_rows",
            vec![(rows, cols)],
            Box::new(move |t, v| t.gather_rows(v[0], Rc::clone(&gather))),
        ),
        (
            "pick",
            vec![(rows, cols)],
            Box::new(move |t, v| t.pick(v[0], Rc::clone(&pick))),
        ),
        (
            "stop_gradient",
            vec![(rows, cols)],
            Box::new(|t, v| {
                let s = t.stop_gradient(v[0]);
                let doubled = t.scale(v[0], 2.0);
                t.add(doubled, s)
            }),
        ),
        (
            "group_mean",
            vec![(2 * cols, 2)],
            Box::new(move |t, v| t.group_mean(v[0], cols)),
        ),
        (
            "block_mix",
            vec![(2 * cols, 2)],
            Box::new(move |t, v| t.block_mix(v[0], Rc::clone(&mix))),
        ),
    ]
}

/// Randomized check of every primitive: inputs uniform in (−1, 1), the
/// output reduced by a random weighting.
pub fn check_primitives(seed: u64, epsilon: f64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, (name, shapes, op)) in primitives(&mut rng).into_iter().enumerate() {
        let inputs: Vec<Matrix> = shapes
            .iter()
            .map(|&(r, c)| random_matrix(&mut rng, r, c))
            .collect();
        let wseed = seed.wrapping_add(k as u64);
        let err = grad_check(
            |t, v| {
                let y = op(t, v)?;
                weighted_sum(t, y, wseed)
            },
            &inputs,
            epsilon,
        )?;
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
        });
    }
    Ok(out)
}

/// Six rows, three numeric columns, binary labels.
pub fn toy_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = TableSchema::new(
        ["a", "b", "c"]
            .iter()
            .map(|n| ColumnSpec {
                name: n.to_string(),
                kind: ColumnKind::Numeric,
            })
            .collect(),
        "y",
        vec!["0".into(), "1".into()],
    )
    .expect("valid schema");
    let rows = (0..6)
        .map(|_| {
            (0..3)
                .map(|_| Some(format!("{:.3}", rng.gen_range(0.0..10.0))))
                .collect()
        })
        .collect();
    let labels = (0..6).map(|i| i % 2).collect();
    Dataset::new(schema, rows, labels, (0..6).collect()).expect("valid dataset")
}

/// Small dimensions keep the number of perturbed coordinates low.
pub fn toy_dims(num_nodes: usize, embed_dim: usize, num_classes: usize) -> ModelDims {
    ModelDims {
        num_nodes,
        hidden: 6,
        layers: 3,
        embed_dim,
        classifier_hidden: 5,
        num_classes,
    }
}

/// Checks the gradient of the full-mode joint objective with respect to
/// every model parameter on [`toy_dataset`] with hash embeddings.
pub fn check_full_objective(seed: u64, epsilon: f64) -> Result<CheckResult> {
    let data = toy_dataset(seed);
    let pre = crate::data::fit_preprocessor(&data, EncodingMode::OneHot)?;
    let features = pre.transform(&data)?;
    let spec = compute_edge_weights(&features)?;
    let mix = neighbour_mix(&spec);
    let encoder = HashEncoder { dim: 8 };
    let store = build_store(&encoder, &serialize_dataset(&data))?;
    let text = Matrix::from_vec(
        data.len(),
        store.dim(),
        data.row_ids
            .iter()
            .flat_map(|&id| {
                store
                    .get(id)
                    .expect("embedded")
                    .as_slice()
                    .iter()
                    .map(|&v| f64::from(v))
            })
            .collect(),
    )?;
    let dims = toy_dims(spec.num_nodes(), store.dim(), data.schema.num_classes());
    let mut params = init_params(seed, dims)?;
    // nonzero ε and biases so their gradients are exercised away from init
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in &mut params.gnn.layers {
        l.epsilon = Matrix::scalar(rng.gen_range(-0.3..0.3));
        l.mlp_b1 = random_matrix(&mut rng, 1, dims.hidden).map(|v| 0.1 * v);
        l.mlp_b2 = random_matrix(&mut rng, 1, dims.hidden).map(|v| 0.1 * v);
    }
    let tensors: Vec<Matrix> = params
        .tensors()
        .into_iter()
        .map(|(_, m)| m.clone())
        .collect();
    let loss = LossConfig {
        tau: crate::mucosa::DEFAULT_TAU,
        lambda: crate::mucosa::DEFAULT_LAMBDA,
    };
    let labels = data.labels.clone();
    let err = grad_check(
        |tape, vars| {
            let bound = BoundParams::from_vars(vars, dims.layers)?;
            let obj = objective(
                tape,
                &bound,
                Mode::Full,
                loss,
                &features.values,
                Some(&text),
                &labels,
                &mix,
            )?;
            Ok(obj.total)
        },
        &tensors,
        epsilon,
    )?;
    Ok(CheckResult {
        name: "full_objective".into(),
        max_rel_error: err,
    })
}
