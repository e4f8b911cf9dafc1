//! IO, file formats, and command implementations behind the `ratio-forge`
//! binary. The algorithms live in `ratio-forge-core`; this crate owns
//! everything that touches the filesystem.

pub mod commands;
pub mod config;
pub mod error;
pub mod record;
pub mod report;
pub mod svg;
