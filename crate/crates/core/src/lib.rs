//! Structure-aware analysis of language-model layers.
//!
//! Each layer's residual stream is turned into a maximum spanning tree over
//! its tokens. The trees (and the raw states) then drive inter-layer
//! similarity matrices, spectral clustering of layers, contiguous-subtree
//! statistics, frequent subtree mining and block-influence pruning plans.

pub mod dumpio;
pub mod error;
pub mod layercluster;
pub mod patternminer;
pub mod pruneplan;
pub mod simmetrics;
pub mod subtreestats;
pub mod treebuild;

pub use error::{Error, Result};
