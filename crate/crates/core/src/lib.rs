//! Selective rationalization: a generator picks a token subset, a predictor
//! classifies from that subset alone, and the two are trained cooperatively
//! with the predictor's learning rate scaled by the fraction of tokens the
//! generator selects.

pub mod binarizer;
pub mod checkpoint;
pub mod coach;
pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod objective;
pub mod optim;
pub mod probe;
pub mod scorer;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
