//! Desk-scale real-time voice analysis: log-mel features, a hierarchical
//! noise/gender/speaker cascade trained with an exponential triplet loss,
//! centroid-based diarization and re-identification, emotion classification
//! and mindful-communication conversation metrics.

pub mod diarization;
pub mod dsp;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
