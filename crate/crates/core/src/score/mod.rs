//! Score networks over coordinate–signal pair sets.

mod config;
mod layers;
mod model;
#[cfg(test)]
mod tests;

pub use config::{Architecture, ScoreFieldConfig};
pub use layers::{
    Attention, CrossAttention, FeedForward, LayerNorm, Linear, MixerBlock, Mlp, PairEmbedding,
    SelfAttentionBlock,
};
pub use model::{score_eval, ScoreField};
