//! Run configuration.
//!
//! A [`RunConfig`] is read from TOML or JSON, overridden by command-line
//! flags, and snapshotted into every run directory. API keys come only from
//! the environment and never appear in a snapshot.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use crate::bench::{BenchOptions, RunMeta};
use crate::gateway::{Gateway, ResponseCache, Role, RoleConfig};
use crate::pipelines::{PipelineContext, PipelineKind, PipelineOptions};
use crate::problem::DatasetKind;
use crate::prompts::{PromptKit, TemplateSet};
use crate::sandbox::ProcessSandbox;

pub const CODER_KEY_VAR: &str = "DUALCODE_CODER_API_KEY";
pub const PLANNER_KEY_VAR: &str = "DUALCODE_PLANNER_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub kind: DatasetKind,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            kind: DatasetKind::Custom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    /// Runner command line, split on whitespace.
    pub command: String,
    pub max_processes: usize,
    pub timeout_s: u64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            command: "dualcode-sandbox".into(),
            max_processes: 8,
            timeout_s: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub name: PipelineKind,
    #[serde(flatten)]
    pub options: PipelineOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            name: PipelineKind::Raw,
            options: PipelineOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub pipeline: PipelineConfig,
    pub coder: RoleConfig,
    pub planner: RoleConfig,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    pub sandbox: SandboxConfig,
    /// Directory of prompt templates; the built-in set when absent.
    pub templates_dir: Option<PathBuf>,
    pub decoding: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            pipeline: PipelineConfig::default(),
            coder: RoleConfig::new(
                Role::Coder,
                Url::parse("http://localhost:8000").expect("static url"),
                "Qwen/Qwen2.5-Coder-14B-Instruct-AWQ",
            ),
            planner: RoleConfig::new(
                Role::Planner,
                Url::parse("http://localhost:8001").expect("static url"),
                "Qwen/Qwen3-32B-AWQ",
            ),
            cache_dir: None,
            out_dir: PathBuf::from("runs/latest"),
            parallelism: crate::bench::DEFAULT_PARALLELISM,
            sandbox: SandboxConfig::default(),
            templates_dir: None,
            decoding: "greedy (temperature 0); no sampling seed is involved".into(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.coder.role != Role::Coder || self.planner.role != Role::Planner {
            return Err(ConfigError::Invalid(
                "`coder` and `planner` sections must carry their own role".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        for role in [&self.coder, &self.planner] {
            if role.max_output_tokens == 0 {
                return Err(ConfigError::Invalid(format!(
                    "{}: max_output_tokens must be positive",
                    role.role
                )));
            }
            if !matches!(role.base_url.scheme(), "http" | "https") {
                return Err(ConfigError::Invalid(format!("{}: base_url must be http(s)", role.role)));
            }
        }
        if self.sandbox.command.trim().is_empty() {
            return Err(ConfigError::Invalid("sandbox.command is empty".into()));
        }
        Ok(())
    }

    /// Fills API keys from the environment.
    pub fn apply_env_secrets(&mut self) {
        self.apply_secrets(|name| std::env::var(name).ok());
    }

    pub fn apply_secrets(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        self.coder.api_key = lookup(CODER_KEY_VAR).filter(|k| !k.is_empty());
        self.planner.api_key = lookup(PLANNER_KEY_VAR).filter(|k| !k.is_empty());
    }

    /// The JSON written to `config.json`; secrets are not serialized.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// sha256 over the snapshot.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(&self.snapshot()).expect("json value serializes");
        hex::encode(Sha256::digest(canonical))
    }

    /// Live endpoints, the configured sandbox runner and the prompt set.
    pub fn context(&self) -> Result<PipelineContext, ConfigError> {
        let mut gateway = Gateway::http();
        if let Some(dir) = &self.cache_dir {
            gateway = gateway.with_cache(ResponseCache::new(dir));
        }
        let prompts = match &self.templates_dir {
            Some(dir) => PromptKit::new(TemplateSet::load_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?),
            None => PromptKit::default(),
        };
        Ok(PipelineContext {
            gateway: Arc::new(gateway),
            sandbox: Arc::new(ProcessSandbox::new(&self.sandbox.command, self.sandbox.max_processes)),
            prompts,
            coder: self.coder.clone(),
            planner: self.planner.clone(),
            options: self.pipeline.options.clone(),
        })
    }

    pub fn bench_options(&self) -> BenchOptions {
        BenchOptions {
            run_dir: self.out_dir.clone(),
            parallelism: self.parallelism,
            config_snapshot: self.snapshot(),
            meta: RunMeta {
                config_digest: self.digest(),
                pipeline: self.pipeline.name,
                dataset: self.dataset.kind,
            },
            scoring_timeout: Duration::from_secs(self.sandbox.timeout_s),
        }
    }
}
