//! Command-line driver: configuration, artifact emission and studies.

pub mod app;
pub mod config;
pub mod error;
pub mod output;
pub mod study;
