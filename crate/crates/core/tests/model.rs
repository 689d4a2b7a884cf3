use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tabglm::autodiff::Tape;
use tabglm::gradcheck::{check_full_objective, random_matrix, toy_dims};
use tabglm::graph::ColumnGraphSpec;
use tabglm::model::{encode_graph, init_params, neighbour_mix, ModelDims, ModelParams};
use tabglm::tensor::Matrix;

fn spec_from(w: &Matrix) -> ColumnGraphSpec {
    ColumnGraphSpec {
        node_names: (0..w.rows()).map(|i| format!("n{i}")).collect(),
        weights: w.data().to_vec(),
    }
}

fn random_weights(rng: &mut ChaCha8Rng, m: usize) -> Matrix {
    let mut w = random_matrix(rng, m, m).map(f64::abs);
    for i in 0..m {
        w.set(i, i, 1.0);
        for j in 0..i {
            let v = w.get(i, j);
            w.set(j, i, v);
        }
    }
    w
}

fn encode(params: &ModelParams, values: &Matrix, spec: &ColumnGraphSpec) -> (Matrix, Matrix) {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let enc = encode_graph(&mut tape, &bound, values, &neighbour_mix(spec)).unwrap();
    (tape.value(enc.q).clone(), tape.value(enc.g_graph).clone())
}

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn nonzero_epsilon(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for l in &mut params.gnn.layers {
        l.epsilon = random_matrix(rng, 1, 1);
        l.mlp_b1 = random_matrix(rng, 1, l.mlp_b1.cols()).map(|v| 0.1 * v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn node_permutation_leaves_encoding_unchanged(seed in any::<u64>(), m in 1usize..7, batch in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ModelDims { hidden: 8, classifier_hidden: 4, ..ModelDims::new(m, 5, 2) };
        let mut params = init_params(seed, dims).unwrap();
        nonzero_epsilon(&mut params, &mut rng);
        let w = random_weights(&mut rng, m);
        let values = random_matrix(&mut rng, batch, m);

        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let mut permuted = params.clone();
        permuted.gnn.column_embeddings = params.gnn.column_embeddings.select_rows(&perm);
        let mut pw = Matrix::zeros(m, m);
        let mut pv = Matrix::zeros(batch, m);
        for (a, &pa) in perm.iter().enumerate() {
            for (b, &pb) in perm.iter().enumerate() {
                pw.set(a, b, w.get(pa, pb));
            }
            for r in 0..batch {
                pv.set(r, a, values.get(r, pa));
            }
        }

        let (q, g) = encode(&params, &values, &spec_from(&w));
        let (pq, pg) = encode(&permuted, &pv, &spec_from(&pw));
        prop_assert!(max_diff(&q, &pq) < 1e-12);
        prop_assert!(max_diff(&g, &pg) < 1e-12);
    }

    #[test]
    fn without_edges_nodes_are_independent(seed in any::<u64>(), m in 1usize..6, batch in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ModelDims { hidden: 8, classifier_hidden: 4, ..ModelDims::new(m, 5, 2) };
        let params = init_params(seed, dims).unwrap();
        let values = random_matrix(&mut rng, batch, m);
        let identity = Matrix::from_vec(m, m, (0..m * m).map(|k| if k % (m + 1) == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let (q, _) = encode(&params, &values, &spec_from(&identity));

        let mut expected = Matrix::zeros(batch, dims.hidden);
        for v in 0..m {
            let mut single = params.clone();
            single.dims.num_nodes = 1;
            single.gnn.column_embeddings = params.gnn.column_embeddings.select_rows(&[v]);
            let col = Matrix::from_vec(batch, 1, (0..batch).map(|r| values.get(r, v)).collect()).unwrap();
            let (qv, _) = encode(&single, &col, &spec_from(&Matrix::scalar(1.0)));
            expected.add_assign(&qv.map(|x| x / m as f64));
        }
        prop_assert!(max_diff(&q, &expected) < 1e-12);
    }
}

#[test]
fn full_objective_passes_gradient_check() {
    for seed in [5, 108, 180, 234, 250] {
        let r = check_full_objective(seed, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {:e}", r.max_rel_error);
    }
}

#[test]
fn zero_row_keeps_weights_and_node_values() {
    let dims = toy_dims(3, 4, 2);
    let params = init_params(1, dims).unwrap();
    let w = random_weights(&mut ChaCha8Rng::seed_from_u64(2), 3);
    let spec = spec_from(&w);
    let (q, g) = encode(&params, &Matrix::zeros(1, 3), &spec);
    // zero node values and zero initial biases keep every state at zero
    assert_eq!(q, Matrix::zeros(1, dims.hidden));
    assert_eq!(g, Matrix::zeros(1, dims.embed_dim));
    assert_eq!(spec.weight_matrix(), w);
}

#[test]
fn batch_rows_are_independent() {
    let dims = toy_dims(4, 6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = init_params(9, dims).unwrap();
    let spec = spec_from(&random_weights(&mut rng, 4));
    let values = random_matrix(&mut rng, 32, 4);
    let (_, all) = encode(&params, &values, &spec);
    for r in [0, 7, 31] {
        let (_, one) = encode(&params, &values.select_rows(&[r]), &spec);
        assert!(max_diff(&one, &all.select_rows(&[r])) < 1e-12);
    }
}
