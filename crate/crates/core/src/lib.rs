#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beamformer;
pub mod commands;
pub mod covariance;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rtf;
pub mod simulator;
pub mod stft;
pub mod tensor_io;

pub use error::{Error, Result};
