//! `manifest.json`: what was run, with which resolved configuration.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;

use crate::config::RunConfig;
use crate::Common;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub parallel_feature: bool,
    pub config_path: String,
    pub seed_override: Option<u64>,
    pub config: serde_json::Value,
    pub synthesis_config_hash: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub success: Option<bool>,
    pub outputs: Vec<String>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, common: &Common) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            parallel_feature: cfg!(feature = "parallel"),
            config_path: common.config.display().to_string(),
            seed_override: common.seed,
            config: serde_json::to_value(config)?,
            synthesis_config_hash: config.synthesis.hash(),
            started_unix: now(),
            finished_unix: None,
            success: None,
            outputs: Vec::new(),
            extra: BTreeMap::new(),
        })
    }

    pub fn set_config(&mut self, config: &RunConfig) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn finish(&mut self, success: bool) {
        self.finished_unix = Some(now());
        self.success = Some(success);
    }
}
