//! Multi-modal tabular classification: every row is encoded both as a
//! fully-connected column graph (trainable message-passing encoder) and as
//! templated text (frozen embedding provider). Training aligns the two with
//! a stop-gradient contrastive consistency loss alongside cross-entropy;
//! inference uses the graph branch only.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod mucosa;
pub mod optim;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
