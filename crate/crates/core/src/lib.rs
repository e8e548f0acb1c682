pub mod accountant;
pub mod audit;
pub mod cli;
pub mod embedding_io;
pub mod error;
pub mod network;
pub mod pipeline;
pub mod posterior;
pub mod renyi;
pub mod sampling;
pub mod special;

pub use error::{Error, Result};
