pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod pretrain;
pub mod rng;
pub mod staticemb;
pub mod tensor;
pub mod textgen;
pub mod tokenizer;

mod error;

pub use error::{Error, Result};
