//! Decomposed spatial-temporal attention for semi-supervised video object
//! segmentation, with dual memory banks and ID-association readout.

pub mod conv;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod idassoc;
pub mod init;
pub mod masks;
pub mod memory;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod stml;
pub mod tensor;

pub use error::{Result, StmaError};
