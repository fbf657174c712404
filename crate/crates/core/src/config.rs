//! Service configuration, read from a TOML file and overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub model_path: PathBuf,
    /// Training corpus for exemplar retrieval and `record_id` lookups.
    pub corpus_path: Option<PathBuf>,
    pub listen: String,
    pub port: u16,
    pub top_k: usize,
    pub request_timeout_ms: u64,
    pub max_concurrent_generations: usize,
    /// First seed handed out to counterfactual requests that carry none.
    pub seed: u64,
    pub llm: LlmConfig,
    pub embedder: EmbedderEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub url: Option<String>,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderEndpoint {
    pub url: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            url: None,
            max_tokens: 512,
        }
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            model_path: PathBuf::from("model.json"),
            corpus_path: None,
            listen: "127.0.0.1".into(),
            port: 8080,
            top_k: crate::engine::DEFAULT_TOP_K,
            request_timeout_ms: 30_000,
            max_concurrent_generations: 4,
            seed: 0,
            llm: LlmConfig::default(),
            embedder: EmbedderEndpoint::default(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<ServiceConfig> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ServiceConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("cannot read config {}", path.display()), e))?;
        ServiceConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.port == 0 {
            return Err(Error::Config("port must be in 1..=65535".into()));
        }
        if self.request_timeout_ms == 0 {
            return Err(Error::Config("request_timeout_ms must be positive".into()));
        }
        if self.max_concurrent_generations == 0 {
            return Err(Error::Config("max_concurrent_generations must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}
