//! Settings resolved from command-line flags, `WORKBENCH_*` environment
//! variables and a TOML file, in that order of precedence.
//!
//! ```toml
//! store = "./workbench-store"
//! bind = "127.0.0.1:8080"
//! api_token = "secret"
//!
//! [provider]
//! base_url = "http://localhost:8000"
//! api_key = "sk-..."
//! model = "gpt-4"
//!
//! [provider.models]
//! "step2.creator" = "gpt-4o"
//!
//! [provider.retry]
//! max_attempts = 4
//! deadline_ms = 120000
//!
//! [generation]
//! min_intentions = 10
//! template_dir = "prompts"
//!
//! [dialogue]
//! interviewer_preamble = false
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{ModelRouting, RetryPolicy};
use crate::generation::DEFAULT_MIN_INTENTIONS;

pub const ENV_STORE: &str = "WORKBENCH_STORE";
pub const ENV_BASE_URL: &str = "WORKBENCH_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "WORKBENCH_LLM_API_KEY";
pub const ENV_MODEL: &str = "WORKBENCH_LLM_MODEL";
pub const ENV_API_TOKEN: &str = "WORKBENCH_API_TOKEN";

pub const DEFAULT_STORE: &str = "workbench-store";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MODEL: &str = "gpt-4";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub store: Option<PathBuf>,
    pub bind: Option<String>,
    pub api_token: Option<String>,
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub dialogue: DialogueSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    #[serde(default)]
    pub models: BTreeMap<String, String>,
    pub retry: Option<RetryPolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub min_intentions: Option<usize>,
    pub template_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueSection {
    pub interviewer_preamble: Option<bool>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Values given on the command line; `None` defers to env and file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub bind: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub min_intentions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub store: PathBuf,
    pub bind: String,
    pub api_token: Option<String>,
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub routing: ModelRouting,
    pub retry: RetryPolicy,
    pub min_intentions: usize,
    pub template_dir: Option<PathBuf>,
    pub interviewer_preamble: bool,
}

impl Settings {
    /// `env` looks up an environment variable; pass `|k| std::env::var(k).ok()`
    /// in production.
    pub fn resolve(file: ConfigFile, env: impl Fn(&str) -> Option<String>, flags: Overrides) -> Self {
        let env = |k: &str| env(k).filter(|v| !v.is_empty());
        Settings {
            store: flags
                .store
                .or_else(|| env(ENV_STORE).map(PathBuf::from))
                .or(file.store)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
            bind: flags.bind.or(file.bind).unwrap_or_else(|| DEFAULT_BIND.to_string()),
            api_token: env(ENV_API_TOKEN).or(file.api_token),
            base_url: flags.base_url.or_else(|| env(ENV_BASE_URL)).or(file.provider.base_url),
            api_key: env(ENV_API_KEY).or(file.provider.api_key),
            routing: ModelRouting {
                default_model: flags
                    .model
                    .or_else(|| env(ENV_MODEL))
                    .or(file.provider.model)
                    .unwrap_or_else(|| DEFAULT_MODEL.to_string()),
                overrides: file.provider.models,
            },
            retry: file.provider.retry.unwrap_or_default(),
            min_intentions: flags
                .min_intentions
                .or(file.generation.min_intentions)
                .unwrap_or(DEFAULT_MIN_INTENTIONS),
            template_dir: file.generation.template_dir,
            interviewer_preamble: file.dialogue.interviewer_preamble.unwrap_or(false),
        }
    }
}
