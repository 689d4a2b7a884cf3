//! Fully-connected column graph shared by every row.

use serde::{Deserialize, Serialize};

use crate::data::NumericMatrix;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Adjacency and edge weights over the encoded columns.
///
/// The adjacency is all ones (every pair connected, self-loops included), so
/// only the weights are stored. `weights[i][j]` is the absolute Pearson
/// correlation of columns `i` and `j` on the training matrix, 0 when either
/// column is constant, and 1 on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGraphSpec {
    #[serde(rename = "nodes")]
    pub node_names: Vec<String>,
    /// Row-major m′ × m′.
    pub weights: Vec<f64>,
}

impl ColumnGraphSpec {
    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.num_nodes() + j]
    }

    pub fn adjacency(&self, _i: usize, _j: usize) -> bool {
        true
    }

    pub fn weight_matrix(&self) -> Matrix {
        let m = self.num_nodes();
        Matrix::from_vec(m, m, self.weights.clone()).expect("square weights")
    }

    /// Number of undirected edges between distinct nodes.
    pub fn edge_count(&self) -> usize {
        let m = self.num_nodes();
        m * m.saturating_sub(1) / 2
    }

    /// Stable identifier of this spec (FNV-1a over names and weight bits).
    pub fn id(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for n in &self.node_names {
            feed(n.as_bytes());
            feed(&[0]);
        }
        for w in &self.weights {
            feed(&w.to_bits().to_le_bytes());
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_nodes();
        if self.weights.len() != m * m {
            return Err(Error::Shape {
                op: "column graph weights",
                lhs: (m, m),
                rhs: (self.weights.len(), 1),
            });
        }
        for i in 0..m {
            if self.weight(i, i) != 1.0 {
                return Err(Error::InvalidSchema(format!(
                    "self-loop weight of node {i} is not 1"
                )));
            }
            for j in 0..m {
                let w = self.weight(i, j);
                if !(0.0..=1.0).contains(&w) || w != self.weight(j, i) {
                    return Err(Error::InvalidSchema(format!(
                        "bad edge weight at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Builds the shared column graph from the encoded training matrix.
pub fn compute_edge_weights(train: &NumericMatrix) -> Result<ColumnGraphSpec> {
    let n = train.rows();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    let m = train.cols();
    let x = &train.values;

    let means: Vec<f64> = (0..m)
        .map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = (0..m)
        .map(|c| (0..n).map(|r| x.get(r, c) - means[c]).collect())
        .collect();
    let sumsq: Vec<f64> = centered
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum())
        .collect();

    let mut weights = vec![0.0; m * m];
    for i in 0..m {
        weights[i * m + i] = 1.0;
        for j in (i + 1)..m {
            let w = if sumsq[i] > 0.0 && sumsq[j] > 0.0 {
                let cov: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum();
                (cov / (sumsq[i].sqrt() * sumsq[j].sqrt())).abs().min(1.0)
            } else {
                0.0
            };
            let w = if w.is_finite() { w } else { 0.0 };
            weights[i * m + j] = w;
            weights[j * m + i] = w;
        }
    }
    Ok(ColumnGraphSpec {
        node_names: train.expanded_names.clone(),
        weights,
    })
}

/// One row as a graph: a scalar per node, structure borrowed from the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGraph {
    pub node_values: Vec<f64>,
    pub spec_id: u64,
}

pub fn row_to_graph(row: &[f64], spec: &ColumnGraphSpec) -> Result<RowGraph> {
    if row.len() != spec.num_nodes() {
        return Err(Error::ColumnMismatch {
            expected: spec.num_nodes(),
            found: row.len(),
        });
    }
    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("node value {v}")));
    }
    Ok(RowGraph {
        node_values: row.to_vec(),
        spec_id: spec.id(),
    })
}

pub fn matrix_to_graphs(matrix: &NumericMatrix, spec: &ColumnGraphSpec) -> Result<Vec<RowGraph>> {
    (0..matrix.rows())
        .map(|r| row_to_graph(matrix.row(r), spec))
        .collect()
}
