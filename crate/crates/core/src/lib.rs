//! Intrusive quality prediction for coded 48 kHz audio.
//!
//! A gammatone spectrogram of the reference and of the degraded signal is
//! stacked into a two-channel image and scored on a 1 to 5 MOS scale by an
//! Inception/squeeze-and-excitation CNN. The crate also covers dataset
//! construction, synthetic augmentation, training and evaluation.

pub mod audio;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod model;
pub mod nn;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

pub use audio::AudioBuffer;
pub use dataset::{ContentType, DatasetEntry, FoldSplit, Manifest, ToolsConfig};
pub use evaluation::{CorrelationReport, Evaluation, Grouping, Predictor, ScoredEntry};
pub use frontend::{GammatoneConfig, GammatoneFrontend, PairedInput, Spectrogram};
pub use model::{Checkpoint, Model, ModelSpec, TrainingMetadata};
pub use synth::{NoiseColor, NoiseSpec, ToyConfig};
pub use training::{NormStats, TrainConfig, TrainingReport};
