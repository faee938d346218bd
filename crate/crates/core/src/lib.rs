//! Binary deep neural network hashing.
//!
//! Unsupervised (UH-BDNN) and supervised (SH-BDNN) hash networks trained by
//! alternating L-BFGS weight updates with discrete code updates, an ITQ
//! baseline, bit-packed Hamming retrieval and the evaluation harness.

pub mod cli;
pub mod codes;
pub mod config;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod hamming;
pub mod hashnet;
pub mod itq;
pub mod lbfgs;
pub mod model_io;
pub mod numerics;
pub mod objective;
pub mod pipeline;
pub mod sh_bdnn;
pub mod uh_bdnn;

pub use codes::BinaryCodes;
pub use data_io::DatasetMatrix;
pub use error::{Error, Result};
pub use hashnet::{Activation, Mode, NetConfig, NetParams};
pub use numerics::Mat;
