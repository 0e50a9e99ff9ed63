//! Account-interaction graphs, manual features, metapath matching and
//! metapath-based feature augmentation for contract-account classification.

pub mod augment;
pub mod embed;
pub mod features;
pub mod graph;
pub mod matrix;
pub mod metapath;
pub mod pipeline;
pub mod mlkit;
pub mod seed;
pub mod synth;
