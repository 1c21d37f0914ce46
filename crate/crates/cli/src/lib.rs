//! Batch experiment runner around the `sixdma` toolkit: declarative TOML
//! configuration, deterministic seeded execution, and CSV/JSON emission.

pub mod config;
pub mod output;
pub mod runner;
pub mod selftest;
