use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable overriding [`GatewayConfig::listen`].
pub const LISTEN_ENV: &str = "LOOKAHEAD_LISTEN";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    #[default]
    RouteOnly,
    RouteAndProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// 1-based model index this backend serves.
    pub index: usize,
    pub name: String,
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    30_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: String,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub mode: RoutingMode,
    pub backends: Vec<BackendConfig>,
}

impl GatewayConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Input(format!("gateway config, field {}: {}", e.path(), e.inner())))
    }

    /// Reads a config file; relative checkpoint paths resolve against the
    /// file's directory and the listen address honours [`LISTEN_ENV`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        if cfg.checkpoint.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.checkpoint = dir.join(&cfg.checkpoint);
            }
        }
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Ok(addr) = std::env::var(LISTEN_ENV) {
            if !addr.is_empty() {
                self.listen = addr;
            }
        }
    }

    /// Checks the backend table against a router over `models` models.
    pub fn validate(&self, models: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Input(format!("gateway config: {m}")));
        if self.backends.len() != models {
            return bad(format!("{} backends for a router over {models} models", self.backends.len()));
        }
        let mut seen = HashSet::new();
        for b in &self.backends {
            if b.index == 0 || b.index > models {
                return bad(format!("backend {:?} has index {} outside 1..={models}", b.name, b.index));
            }
            if !seen.insert(b.index) {
                return bad(format!("model index {} configured twice", b.index));
            }
            if b.timeout_ms == 0 {
                return bad(format!("backend {:?} has a zero timeout", b.name));
            }
            if self.mode == RoutingMode::RouteAndProxy && !b.url.starts_with("http://") && !b.url.starts_with("https://") {
                return bad(format!("backend {:?} url {:?} is not http(s)", b.name, b.url));
            }
        }
        Ok(())
    }

    /// Backends ordered by model index.
    pub fn ordered_backends(&self) -> Vec<BackendConfig> {
        let mut b = self.backends.clone();
        b.sort_by_key(|b| b.index);
        b
    }
}
