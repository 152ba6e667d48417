//! Experiment runner for `gibbsdiff`: configuration, presets, artifact
//! output and the acceptance suite.

pub mod acceptance;
pub mod app;
pub mod config;
pub mod error;
pub mod presets;
pub mod report;
pub mod run;
