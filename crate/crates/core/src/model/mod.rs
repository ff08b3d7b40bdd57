//! The personalized encoder-decoder.
//!
//! Names and ingredients are encoded by two-layer BiGRUs, the calorie level
//! by a projected embedding. A two-layer GRU decoder attends over the
//! ingredient states at every step; personalized variants add attention over
//! the user's prior recipes (table embeddings or averaged name embeddings) or
//! over the techniques in them, boosted by the user's technique preferences.
//! All contexts are fused by an affine+ReLU layer before the vocabulary
//! softmax.
//!
//! Keys of every attention head are projected into the decoder's hidden
//! space before scoring, and the projected key doubles as the value.

mod config;
mod network;
pub mod ops;
mod params;

pub use config::{ModelConfig, TableSizes, Variant};
pub use network::{DecodingSession, EncodedInput, EncoderOutput, Model, SequenceScore, UserContext};
pub use params::{AttentionHead, ModelParams, UserParams};

#[cfg(test)]
mod tests;
