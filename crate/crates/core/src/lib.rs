pub mod data;
pub mod error;
pub mod experiment;
pub mod models;
pub mod nn;
pub mod oracle;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
