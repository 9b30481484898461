//! Audio-visual speech enhancement and separation toolkit.
//!
//! The pipeline follows a pretrained audio-visual transformer encoder with a
//! mask-estimating enhancement head: encoder hidden states from every layer
//! are combined by a learned weighted sum, concatenated with log1p spectral
//! features, and fed through an FC + BLSTM stack that predicts a soft
//! time-frequency mask. A cross-attention coupler extends the same machinery
//! to two-speaker separation. Four fine-tuning strategies (PF / EF / WF /
//! TFS) control which parameter groups of the encoder are updated.
//!
//! Everything runs at desk scale on synthetic data: `datasynth` builds a
//! parametric audio-visual corpus, `training` runs the optimization loop, and
//! `metrics` scores the results (SI-SNR, SDR, STOI).

pub mod avencoder;
pub mod cli;
pub mod datasynth;
pub mod dsp;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod training;

pub use error::AvsepError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AvsepError>;
