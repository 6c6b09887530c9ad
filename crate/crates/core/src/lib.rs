//! Compositional vMF likelihoods over feature maps and multi-object
//! occlusion reasoning.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: feature maps, boxes and masks on the feature lattice.
//! - [`vmf`]: von Mises–Fisher components and the shared dictionary.
//! - [`model`]: per-class compositional models, occluder model, likelihood maps.
//! - [`learning`]: parameter estimation from box-annotated feature maps.
//! - [`orm`]: conflict detection, pixel competition, order recovery and
//!   recurrent self-correction over a scene.
//! - [`oracle`]: brute-force references for the inference code.
//! - [`synth`]: the synthetic occlusion challenge generator.
//! - [`eval`]: mIoU by occlusion level, order accuracy, ablations.
//! - [`format`]: binary and text file formats.

pub mod error;
pub mod tensor;
pub mod vmf;
pub mod model;
pub mod learning;
pub mod orm;
pub mod oracle;
pub mod synth;
pub mod eval;
pub mod format;

pub use error::{Error, Result};
