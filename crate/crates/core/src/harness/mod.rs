//! Configuration, datasets, persistence and experiment orchestration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod report;
pub mod run;
