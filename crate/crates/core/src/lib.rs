//! Reverse-dictionary engine: given a description, rank every candidate word
//! of a target language by summing masked-language-model subword scores.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod scoring;
pub mod training;
pub mod vocab;
pub mod word_index;

pub use error::{Error, Result};
pub use model::ReverseDictionary;
