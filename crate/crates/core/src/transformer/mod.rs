//! Decoder-only transformer that predicts the leading part of a gain sequence
//! from the state trajectory and the gains already computed for the tail.
//!
//! Tokens run in backward time: token `j` describes time step `T − 1 − j`, so
//! the causal mask lets the early-time predictions attend to every known
//! late-time gain but not the other way around.

mod config;
mod format;
mod golden;
mod model;
mod weights;

pub use config::TransformerConfig;
pub use format::{
    decode_weights, encode_weights, load_weights, save_weights, QTFW_MAGIC, QTFW_VERSION,
};
pub use golden::{
    decode_golden, encode_golden, load_golden, save_golden, GoldenVectors, QTGV_MAGIC, QTGV_VERSION,
};
pub use model::{
    causal_self_attention, gelu, layer_norm, positional_encoding, stack_gains, unstack_gains,
    AttentionMaps, TokenSequence, Transformer, LAYER_NORM_EPS,
};
pub use weights::{DecoderLayer, LayerNorm, Linear, Normalization, TransformerWeights};
