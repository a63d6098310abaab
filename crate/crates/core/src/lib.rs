pub mod code;
pub mod diag;
pub mod embed;
pub mod error;
pub mod graphs;
pub mod index;
pub mod par;
pub mod pinpoint;
pub mod query;
pub mod seed;
pub mod slicer;

pub use error::{Error, Result};
