#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Domain-size pooled local descriptors: region detection, affine frames,
//! SIFT and DSP-SIFT descriptors, matching and evaluation.

mod error;

pub mod dataset;
pub mod descriptor;
pub mod detector;
pub mod dump;
pub mod eval;
pub mod frame;
pub mod image;
pub mod matching;
pub mod samplinglab;
pub mod scalespace;

pub use error::{Error, Result};
