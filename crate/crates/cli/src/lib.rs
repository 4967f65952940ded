//! Command-line and HTTP front ends for `ragforge-core`.

pub mod cli;
pub mod server;
