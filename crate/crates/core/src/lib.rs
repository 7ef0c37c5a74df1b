//! Structured-prediction image captioning at desk scale.
//!
//! * [`graphcut`]: exact max-flow/min-cut and submodular binary energies.
//! * [`arcgame`]: the adversarial robust cut game, its double-oracle solver
//!   and the moment-matching learner.
//! * [`convcap`]: a small masked-convolution captioner with hand-written
//!   backpropagation.
//! * [`decode`]: beam search with fusion of cut marginals into token scores.
//! * [`metrics`]: corpus BLEU-1..4, ROUGE-L and CIDEr-D.
//! * [`data`]: COCO ingestion, vocabulary, splits, region graphs, file formats.
//! * [`selfcheck`]: exhaustive oracles for the solvers above.
//! * [`synth`]: a seeded toy corpus for end-to-end runs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arcgame;
pub mod convcap;
pub mod data;
pub mod decode;
pub mod error;
pub mod graphcut;
pub mod metrics;
pub mod selfcheck;
pub mod synth;

pub use error::{Error, Result};
