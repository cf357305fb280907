pub mod arch;
pub mod block;
pub mod checkpoint;
pub mod cost;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod network;
pub mod nn;
pub mod policy;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
