//! Graph neural network mapping channels to a beamformer and STAR-IRS
//! coefficients, trained without labels on the negative secrecy rate.

pub mod checkpoint;
mod graph;
mod loss;
mod model;
mod train;

pub use graph::{
    build_adjacency, build_features, build_features_effective, build_graph, feature_width,
    normalize_adjacency, symmetrize, FeatureScaling, GraphInput,
};
pub use loss::{
    batch_loss, loss, loss_and_grad, loss_from_rates, perfect_samples, LossEval, LossVariant,
    Sample,
};
pub(crate) use model::{assemble_coefficients, fallback_beam, PAIRED_EPS};
pub use model::{
    gcn_layer, init_params, BeamHead, GnnModel, ModelConfig, ModelParams, PhaseHead,
    DEFAULT_HIDDEN, LAYER_NORM_EPS,
};
pub use train::{
    sample_batch, train, train_from, TrainConfig, TrainHistory, DATA_STREAM, INIT_STREAM,
};
