//! Foot restoration diffusion model: a denoiser trained to regenerate the
//! root and knee/foot features of clean motion from the rest of the body,
//! and guided inference that repairs those features in corrupted motion.

pub mod guidance;
pub mod loss;
pub mod merge;
pub mod model;
pub mod network;
pub mod schedule;
pub mod train;

pub use guidance::{damp_contact_velocities, foot_contact_guidance, geometric_guidance, GuidanceConfig};
pub use loss::{loss_eps_rp, loss_foot, loss_vp, total_loss, LossBreakdown, LossSpec, LossTarget, LossWeights};
pub use merge::{FeatureMask, Normalizer};
pub use model::{restore, restore_corpus, FrdmModel};
pub use network::{Denoiser, DenoiserConfig};
pub use schedule::{noisy, DiffusionSchedule, ScheduleConfig};
pub use train::{sample_loss, train, Adam, TrainConfig, TrainReport};
