//! Bayesian network classifiers with hierarchical Dirichlet process
//! smoothing of their conditional probability tables.
//!
//! The pipeline is: load a [`Dataset`], learn a [`BnStructure`] from
//! streamed counts, estimate each attribute's table (maximum likelihood,
//! m-estimate with back-off, or a collapsed Gibbs sampler over a
//! [`ContextTree`]) and classify with a [`TrainedModel`].

pub mod context_tree;
pub mod counts;
pub mod data;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod model;
pub mod sampler;
pub mod stirling;
pub mod structure;

#[cfg(test)]
pub(crate) mod testutil;

pub use context_tree::{ConcentrationParam, ContextTree, TreeNode};
pub use counts::{CountCube, CountForest, CountTree};
pub use data::{
    load_csv, load_csv_with, open_csv, open_csv_with, stream_passes, Attribute, AttributeKind, ColumnRef, CsvOptions,
    CutPoints, Dataset, Discretizer, Instance, Schema,
};
pub use error::{Error, Result};
pub use estimators::MEstimateConfig;
pub use eval::{EvalReport, Metric};
pub use model::{EstimatorKind, PipelineConfig, StructureKind, TrainReport, TrainedModel};
pub use sampler::{SamplerConfig, Tying};
pub use stirling::StirlingCache;
pub use structure::BnStructure;
