//! Inverted-token quantile transformer: per-SA window embeddings, multi-head
//! self-attention across SA tokens, an LSTM over the SA sequence and a
//! per-SA quantile read-out, trained with pinball loss.

pub mod layers;
pub mod model;
pub mod param;
pub mod train;

pub use model::{
    pinball_loss, Body, CheckpointExtra, CheckpointManifest, DropoutCtx, PredictionBatch,
    QptConfig, QptModel,
};
pub use param::{Adam, AdamConfig, Param, Parameters};
pub use train::{train, LossCurve, TrainConfig};
