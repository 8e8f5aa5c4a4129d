pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod hmm;
pub mod kernels;
pub mod numeric;
pub mod priors;
pub mod pt;
pub mod stats;
pub mod store;
pub mod target;
pub mod tempering;
pub mod toy;

pub use error::{Error, Result};
