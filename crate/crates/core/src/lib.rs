//! Equivalence evaluation and repair of compressed feedforward ReLU networks.
//!
//! Given an original network and a compressed (quantized) version of it, this
//! crate merges the two into a single network whose output is the pointwise
//! discrepancy between them, computes the exact reachable set of that
//! discrepancy over an input region with star sets, and iteratively retrains
//! the compressed network until the reachable discrepancy fits a prescribed
//! target box.
//!
//! The pieces:
//!
//! - [`network`] — the feedforward ReLU network data model and JSON/IDX I/O.
//! - [`training`] — mini-batch SGD with backpropagation, used both to train
//!   the original classifier and to retrain during repair.
//! - [`compress`] — post-training uniform quantization and identity-layer
//!   padding so a pair of networks can be merged.
//! - [`merge`] — block-diagonal merge of two networks plus the comparison
//!   layer computing `n1(x) - n2(x)`.
//! - [`lp`] — a self-contained bounded-variable simplex solver backing every
//!   star-set bound query.
//! - [`reach`] — exact star-set reachability with ReLU case splitting and an
//!   interval-hull fallback when the split budget runs out.
//! - [`repair`] — the discrepancy-guided retraining loop with per-iteration
//!   trace.

pub mod compress;
pub mod data;
pub mod error;
pub mod lp;
pub mod merge;
pub mod network;
pub mod reach;
pub mod repair;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use network::{Layer, LayerKind, Network};
