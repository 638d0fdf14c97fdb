//! Experiment runner for the `ergodic` sampler: configuration handling and
//! the `train`, `evaluate`, `bench` and `demo-constraint` commands.

pub mod commands;
pub mod config;

use std::fs;
use std::path::Path;

use ergodic::error::Result;
use ergodic::kv::KvMap;

pub use config::ExperimentConfig;

/// Reads the optional config file, then applies `overrides` in order.
pub fn load_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut m = match file {
        Some(p) => KvMap::parse(&fs::read_to_string(p)?)?,
        None => KvMap::new(),
    };
    for (k, v) in overrides {
        m.set(k, v);
    }
    ExperimentConfig::from_kv(&m)
}
