//! Visual jigsaw task generation and verifiable permutation rewards.
//!
//! Images are cut into grids, videos into temporal clips, and RGB-D frames
//! into sets of depth-ordered points. Each is shuffled by a random
//! [`Permutation`] and the model must recover the original order; rollouts
//! are scored by [`reward::total_reward`].

pub mod depth;
pub mod error;
pub mod image_jigsaw;
pub mod manifest;
pub mod permutation;
pub mod pipeline;
pub mod prompts;
pub mod reward;
pub mod scoring;
pub mod seeds;
pub mod synth;
pub mod verify;
pub mod video;

pub use error::{Error, FilterReason, Result};
pub use permutation::{GroundTruth, Permutation};
pub use prompts::Modality;
pub use reward::{RewardBreakdown, RewardSpec};
