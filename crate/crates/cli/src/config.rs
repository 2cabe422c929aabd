//! TOML configuration with strict keys.
//!
//! Resolution order everywhere is flag > config file > built-in default.
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ponder_core::search::MctsConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub model: ModelSection,
    pub search: MctsConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            model: ModelSection::default(),
            search: MctsConfig::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Chat-completions endpoint URL; empty means unconfigured.
    pub endpoint: String,
    pub model_name: String,
    pub timeout_s: u64,
    pub connection_limit: usize,
    pub max_tokens: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model_name: "glm-4-flash".to_string(),
            timeout_s: 60,
            connection_limit: 4,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub datasets: Vec<PathBuf>,
    /// "improved-mcts" or "cot".
    pub strategy: String,
    pub parallelism: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            strategy: "improved-mcts".to_string(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub cache_dir: PathBuf,
    pub report_dir: PathBuf,
    /// Optional directory of prompt template overrides.
    pub templates_dir: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            cache_dir: PathBuf::from(".ponder/cache"),
            report_dir: PathBuf::from("reports"),
            templates_dir: None,
        }
    }
}

impl AppConfig {
    /// Defaults when `path` is `None`, otherwise the parsed file.
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|err| format!("cannot read config {}: {err}", path.display()))?;
        toml::from_str(&text).map_err(|err| format!("bad config {}: {err}", path.display()))
    }
}
