//! File formats, checkpointing, structured logging and the command-line
//! pipeline around `retrograph-core`.

pub mod checkpoint;
pub mod cli;
pub mod io;
pub mod jsonlog;
pub mod pipeline;

pub use retrograph_core as core;
