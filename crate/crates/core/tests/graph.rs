mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use tabglm::data::{fit_preprocessor, EncodingMode, NumericMatrix};
use tabglm::graph::{compute_edge_weights, matrix_to_graphs, ColumnGraphSpec};
use tabglm::tensor::Matrix;

fn random_table(seed: u64, n: usize, m: usize) -> Vec<Vec<f64>> {
    let mut r = common::rng(seed);
    let base: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| base[i] * j as f64 + r.gen_range(-1.0..1.0) * 3.0 + 10.0 * j as f64)
                .collect()
        })
        .collect()
}

fn weights_of(values: &[Vec<f64>]) -> ColumnGraphSpec {
    let d = common::numeric_dataset(values, vec![0; values.len()], 1);
    let p = fit_preprocessor(&d, EncodingMode::OneHot).unwrap();
    compute_edge_weights(&p.transform(&d).unwrap()).unwrap()
}

fn assert_close(a: &ColumnGraphSpec, b: &ColumnGraphSpec, tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.weights.len(), b.weights.len());
    for (x, y) in a.weights.iter().zip(&b.weights) {
        prop_assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_ignore_row_order(seed in any::<u64>(), n in 3usize..60, m in 1usize..6) {
        let values = random_table(seed, n, m);
        let mut shuffled = values.clone();
        shuffled.shuffle(&mut common::rng(seed ^ 1));
        let matrix = |v: &[Vec<f64>]| NumericMatrix {
            values: Matrix::from_rows(v).unwrap(),
            expanded_names: (0..m).map(|j| format!("x{j}")).collect(),
        };
        let a = compute_edge_weights(&matrix(&values)).unwrap();
        let b = compute_edge_weights(&matrix(&shuffled)).unwrap();
        assert_close(&a, &b, 1e-12)?;
    }

    #[test]
    fn affine_rescaling_keeps_abs_correlation(
        seed in any::<u64>(),
        n in 3usize..60,
        col in 0usize..4,
        scale in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        shift in -100.0f64..100.0,
    ) {
        let values = random_table(seed, n, 4);
        let mut rescaled = values.clone();
        for row in &mut rescaled {
            row[col] = scale * row[col] + shift;
        }
        assert_close(&weights_of(&values), &weights_of(&rescaled), 1e-9)?;
    }

    #[test]
    fn weights_are_symmetric_in_unit_interval(seed in any::<u64>(), n in 2usize..40, m in 1usize..6) {
        let w = weights_of(&random_table(seed, n, m));
        for i in 0..m {
            prop_assert_eq!(w.weight(i, i), 1.0);
            for j in 0..m {
                prop_assert_eq!(w.weight(i, j), w.weight(j, i));
                prop_assert!((0.0..=1.0).contains(&w.weight(i, j)));
            }
        }
    }
}

#[test]
fn every_row_graph_shares_the_spec() {
    let d = common::mixed_dataset(4, 30);
    let p = fit_preprocessor(&d, EncodingMode::OneHot).unwrap();
    let m = p.transform(&d).unwrap();
    let spec = compute_edge_weights(&m).unwrap();
    let graphs = matrix_to_graphs(&m, &spec).unwrap();
    assert_eq!(graphs.len(), 30);
    assert!(graphs
        .iter()
        .all(|g| g.spec_id == spec.id() && g.node_values.len() == spec.num_nodes()));
}

#[test]
fn perfectly_correlated_columns_get_weight_one() {
    let values: Vec<Vec<f64>> = (0..10)
        .map(|i| vec![i as f64, -3.0 * i as f64 + 2.0, 7.0])
        .collect();
    let w = weights_of(&values);
    assert!((w.weight(0, 1) - 1.0).abs() < 1e-12);
    assert_eq!(w.weight(0, 2), 0.0);
}

#[test]
fn spec_json_uses_nodes_and_weights() {
    let w = weights_of(&random_table(1, 8, 3));
    let v = serde_json::to_value(&w).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 3);
    assert_eq!(v["weights"].as_array().unwrap().len(), 9);
    let back: ColumnGraphSpec = serde_json::from_value(v).unwrap();
    assert_eq!(back, w);
}
