pub mod baselines;
pub mod channel;
pub mod error;
pub mod graphnn;
pub mod quantize;
pub mod secrecy;
pub mod tensor;

pub use error::{Error, Result};
