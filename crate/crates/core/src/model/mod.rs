//! The Inception + squeeze-and-excitation regressor.

mod blocks;
mod checkpoint;
mod network;
mod spec;

pub use blocks::{ConvUnit, InceptionBlock, SeBlock, Stage};
pub use checkpoint::{Checkpoint, NamedTensor, TrainingMetadata, CHECKPOINT_FORMAT};
pub use network::{batch_tensor, FeatureLayer, LayerTrace, Model};
pub use spec::{
    BlockKind, BranchWidths, InceptionBlockSpec, LayerSpec, ModelSpec, PaddingPolicy, SeBlockSpec,
    StageSpec,
};

/// Builds the model described by `spec`; see [`Model::new`].
pub fn build_model(spec: &ModelSpec, seed: u64) -> crate::Result<Model<f32>> {
    Model::new(spec, seed)
}
