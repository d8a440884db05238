//! Pieces of the `kadnode` binary that tests and fuzz targets reach into.

pub mod config;
pub mod control;
pub mod ws;
