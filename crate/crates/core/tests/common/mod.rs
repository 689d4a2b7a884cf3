#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabglm::data::{ColumnKind, ColumnSpec, Dataset, TableSchema};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| c.to_string()).collect()
}

/// All-numeric dataset; row ids are positions.
pub fn numeric_dataset(values: &[Vec<f64>], labels: Vec<usize>, classes: usize) -> Dataset {
    let m = values.first().map_or(0, Vec::len);
    let schema = TableSchema::new(
        (0..m)
            .map(|i| ColumnSpec {
                name: format!("x{i}"),
                kind: ColumnKind::Numeric,
            })
            .collect(),
        "y",
        class_names(classes),
    )
    .unwrap();
    let rows = values
        .iter()
        .map(|r| r.iter().map(|v| Some(format!("{v}"))).collect())
        .collect();
    let n = values.len() as u64;
    Dataset::new(schema, rows, labels, (0..n).collect()).unwrap()
}

/// Two numeric and two categorical columns with occasional missing cells.
pub fn mixed_dataset(seed: u64, n: usize) -> Dataset {
    let mut r = rng(seed);
    let schema = TableSchema::new(
        vec![
            ColumnSpec {
                name: "age".into(),
                kind: ColumnKind::Numeric,
            },
            ColumnSpec {
                name: "color".into(),
                kind: ColumnKind::Categorical,
            },
            ColumnSpec {
                name: "score".into(),
                kind: ColumnKind::Numeric,
            },
            ColumnSpec {
                name: "city".into(),
                kind: ColumnKind::Categorical,
            },
        ],
        "y",
        class_names(2),
    )
    .unwrap();
    let colors = ["red", "green", "blue"];
    let cities = ["oslo", "lima", "pune", "kyiv"];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let missing = |r: &mut ChaCha8Rng| r.gen_bool(0.05);
        let age = (!missing(&mut r)).then(|| format!("{}", r.gen_range(18..90)));
        let color = (!missing(&mut r)).then(|| colors[r.gen_range(0..colors.len())].to_string());
        let score = (!missing(&mut r)).then(|| format!("{:.2}", r.gen_range(-5.0..5.0)));
        let city = (!missing(&mut r)).then(|| cities[r.gen_range(0..cities.len())].to_string());
        rows.push(vec![age, color, score, city]);
        labels.push(i % 2);
    }
    Dataset::new(schema, rows, labels, (0..n as u64).collect()).unwrap()
}

/// Four uniform numeric columns; the label is the side of a fixed
/// hyperplane through the centre of the cube.
pub fn separable(seed: u64, n: usize) -> Dataset {
    let mut r = rng(seed);
    let w = [1.0, -2.0, 0.5, 1.5];
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..4).map(|_| r.gen_range(0.0..1.0)).collect();
        let s: f64 = x.iter().zip(w).map(|(a, b)| (a - 0.5) * b).sum();
        labels.push(usize::from(s > 0.0));
        values.push(x);
    }
    numeric_dataset(&values, labels, 2)
}
