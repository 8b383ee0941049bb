//! Set-to-set recognition with learned dense-subgraph prototypes.
//!
//! Media features are encoded by a small MLP, softly assigned to `K`
//! prototypes, re-gated per prototype and compared across sets by a
//! softmax-weighted mean of pairwise distances. Encoder and prototype layers
//! are trained jointly from a set-pair ranking loss and a dense-subgraph
//! compactness loss.

// `!(x > 0.0)` style checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod dsg;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod matching;
pub mod model;
pub mod oracle;
pub mod training;

pub use dataset::{Dataset, MediaFeature, MediaSet, Modality, SetPair, SynthConfig};
pub use error::{Error, Result};
pub use evalkit::{MetricReport, ScoreSample};
pub use matching::{MatchMode, MatchOutcome};
pub use model::{Model, ModelConfig};
pub use oracle::HardPartition;
pub use training::{LossReport, TrainConfig};
