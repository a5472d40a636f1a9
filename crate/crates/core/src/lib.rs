//! Foot-contact artifact detection and repair for 3D human motion.
//!
//! The crate is organized around the motion feature layout in [`motion`]:
//!
//! - [`contact`]: contact masks and motion-quality metrics (foot skating
//!   ratio, jitter, ground penetration) plus a moving-average baseline.
//! - [`frdm`]: the foot restoration diffusion model: noise schedule, feature
//!   merge, denoiser network, losses, training and guided restoration.
//! - [`synth`]: procedural gait generation and artifact injection.
//! - [`spectral`]: reference fusion and real-FFT band decomposition.
//! - [`io`]: `.mseq` motion files, model checkpoints, skeleton and run
//!   configuration documents.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the math in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod contact;
pub mod error;
pub mod frdm;
pub mod io;
pub mod motion;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use motion::{GlobalPositions, MotionSequence, RootState, Skeleton};
