//! Everything around the model: metrics, losses, synthetic data, file I/O,
//! configuration, and the drivers behind the command-line tool.

pub mod bench;
pub mod config;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod run;
pub mod simulate;
pub mod synth;
pub mod verify;
