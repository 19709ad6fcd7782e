//! File formats, benchmark harness and command-line driver for
//! [`tuckervid_core`].

pub mod bench;
pub mod cli;
pub mod format;
pub mod ranks;
pub mod render;
