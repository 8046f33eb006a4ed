use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;

/// Record of one campaign's inputs and progress, stored beside its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub config: CampaignConfig,
    pub videos: Vec<String>,
    pub output_dir: PathBuf,
    pub created_at: String,
    pub updated_at: String,
    pub completed: bool,
    pub cells_total: usize,
    pub cells_failed: usize,
}

pub fn now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

impl RunManifest {
    pub fn new(config: &CampaignConfig, videos: Vec<String>) -> Self {
        let t = now();
        Self {
            config_digest: config.digest(),
            config: config.clone(),
            cells_total: videos.len() * config.epsilons.len() * config.iterations.len() * config.attacks.len(),
            videos,
            output_dir: config.output.clone(),
            created_at: t.clone(),
            updated_at: t,
            completed: false,
            cells_failed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        m.config.output = m.output_dir.clone();
        m.config.workers = crate::config::default_workers();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }
}
