//! Run configuration, loaded from TOML and overridden by CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::AnnotateOptions;
use crate::metrics::{Aggregation, CmaeNormalization, MetricOptions, ResponseConfidence};

pub const DEFAULT_TOKEN_ENV: &str = "MARKERCONF_API_TOKEN";
pub const DEFAULT_K: usize = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    #[default]
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub backend: BackendKind,
    pub model: String,
    pub base_url: Option<String>,
    /// Environment variable holding the API token.
    pub token_env: String,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Http,
            model: "judge".into(),
            base_url: None,
            token_env: DEFAULT_TOKEN_ENV.into(),
            retries: 3,
            backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub backend: BackendKind,
    pub model: String,
    pub base_url: Option<String>,
    pub token_env: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Http,
            model: "model".into(),
            base_url: None,
            token_env: DEFAULT_TOKEN_ENV.into(),
            temperature: 1.0,
            max_output_tokens: 256,
            retries: 3,
            backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input corpus files (queries for `generate`, queries and responses
    /// for `annotate` when the output directory has no corpus yet).
    pub corpus: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Samples per response; taken from the corpus when unset.
    pub k: Option<usize>,
    pub threshold: usize,
    pub sweep: Vec<usize>,
    pub system_prompt_id: String,
    pub aggregation: Aggregation,
    pub exclude_no_hedge: bool,
    pub parallelism: usize,
    pub failure_ceiling: f64,
    pub score_decisiveness: bool,
    pub score_accuracy: bool,
    pub detect_punts: bool,
    pub response_confidence: ResponseConfidence,
    pub cmae_normalization: CmaeNormalization,
    pub relaxed_min_datasets: Option<usize>,
    pub max_examples: usize,
    pub standardize_batch: usize,
    pub templates_dir: Option<PathBuf>,
    pub judge: JudgeConfig,
    pub generation: GenerationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            out: PathBuf::from("markerconf-out"),
            seed: 0,
            k: None,
            threshold: crate::mic::DEFAULT_THRESHOLD,
            sweep: Vec::new(),
            system_prompt_id: "generic".into(),
            aggregation: Aggregation::Marker,
            exclude_no_hedge: false,
            parallelism: 4,
            failure_ceiling: 0.01,
            score_decisiveness: true,
            score_accuracy: true,
            detect_punts: false,
            response_confidence: ResponseConfidence::Mean,
            cmae_normalization: CmaeNormalization::DirectedPairs,
            relaxed_min_datasets: None,
            max_examples: 5000,
            standardize_batch: 200,
            templates_dir: None,
            judge: JudgeConfig::default(),
            generation: GenerationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.corpus.iter_mut().for_each(resolve);
        resolve(&mut config.out);
        if let Some(t) = config.templates_dir.as_mut() {
            resolve(t);
        }
        Ok(config)
    }

    /// Check invariants; sorts and deduplicates the sweep list.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.k == Some(0) {
            return bad("k must be at least 1".into());
        }
        if self.threshold == 0 || self.sweep.contains(&0) {
            return bad("thresholds must be at least 1".into());
        }
        self.sweep.sort_unstable();
        self.sweep.dedup();
        if !matches!(self.system_prompt_id.as_str(), "generic" | "metacognitive") {
            return bad(format!("system_prompt_id {:?} is not generic or metacognitive", self.system_prompt_id));
        }
        if !(0.0..=1.0).contains(&self.failure_ceiling) {
            return bad(format!("failure_ceiling {} outside [0, 1]", self.failure_ceiling));
        }
        if self.parallelism == 0 || self.max_examples == 0 || self.standardize_batch == 0 {
            return bad("parallelism, max_examples and standardize_batch must be positive".into());
        }
        if !(self.generation.temperature >= 0.0) || self.generation.max_output_tokens == 0 {
            return bad("generation needs temperature >= 0 and max_output_tokens >= 1".into());
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<usize> {
        if self.sweep.is_empty() {
            vec![self.threshold]
        } else {
            self.sweep.clone()
        }
    }

    /// SHA-256 over the settings that affect outputs (output directory and
    /// parallelism excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.parallelism = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn annotate_options(&self) -> AnnotateOptions {
        AnnotateOptions {
            score_decisiveness: self.score_decisiveness,
            score_accuracy: self.score_accuracy,
            detect_punts: self.detect_punts,
            failure_ceiling: self.failure_ceiling,
            standardize_batch: self.standardize_batch,
        }
    }

    pub fn metric_options(&self, threshold: usize) -> MetricOptions {
        MetricOptions {
            threshold,
            exclude_no_hedge: self.exclude_no_hedge,
            aggregation: self.aggregation,
            cmae_normalization: self.cmae_normalization,
            response_confidence: self.response_confidence,
            relaxed_min_datasets: self.relaxed_min_datasets,
        }
    }
}
