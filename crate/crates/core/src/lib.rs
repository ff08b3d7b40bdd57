//! Personalized recipe generation.
//!
//! A GRU encoder-decoder expands a recipe name, a few ingredients and a
//! calorie level into full instructions, attending over the user's previously
//! reviewed recipes (or the cooking techniques in them). The crate also holds
//! the data pipeline and the evaluation metrics.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
