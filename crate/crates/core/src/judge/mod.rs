//! LLM-as-a-judge client.
//!
//! All five judge calls go through [`Judge`]: render the template, look the
//! task up in the cache, call the backend with retries, parse, and cache the
//! raw reply once it has parsed. Swapping the backend (HTTP or mock) does not
//! change any of this.

pub mod backend;
pub mod cache;
pub mod mock;
pub mod parse;
pub mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{Backend, BackendError, CompletionRequest, DecodeParams, HttpBackend, Purpose, RetryPolicy};
pub use cache::{CacheKey, JudgeCache};
pub use mock::{MockBackend, MockTaskModel, RuleSet};
pub use parse::{normalize_marker, Consistency};
pub use template::{TemplateError, Templates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Consistency,
    Decisiveness,
    Accuracy,
    ExtractMarkers,
    StandardizeMarkers,
}

impl JudgeKind {
    pub const ALL: [JudgeKind; 5] = [
        JudgeKind::Consistency,
        JudgeKind::Decisiveness,
        JudgeKind::Accuracy,
        JudgeKind::ExtractMarkers,
        JudgeKind::StandardizeMarkers,
    ];

    pub fn template_id(self) -> &'static str {
        match self {
            JudgeKind::Consistency => template::CONSISTENCY,
            JudgeKind::Decisiveness => template::DECISIVENESS,
            JudgeKind::Accuracy => template::ACCURACY,
            JudgeKind::ExtractMarkers => template::EXTRACT_MARKERS,
            JudgeKind::StandardizeMarkers => template::STANDARDIZE_MARKERS,
        }
    }

    /// Greedy decoding for every kind; extraction stops at "Answer:" and
    /// standardization at "}".
    pub fn default_decode(self) -> DecodeParams {
        match self {
            JudgeKind::Consistency => DecodeParams::greedy(8),
            JudgeKind::Decisiveness => DecodeParams::greedy(16),
            JudgeKind::Accuracy => DecodeParams::greedy(8),
            JudgeKind::ExtractMarkers => DecodeParams::greedy(128).with_stop("Answer:"),
            JudgeKind::StandardizeMarkers => DecodeParams::greedy(4096).with_stop("}"),
        }
    }
}

impl fmt::Display for JudgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.template_id())
    }
}

/// One fully rendered judge call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeTask {
    pub kind: JudgeKind,
    pub template_id: String,
    pub rendered_prompt: String,
    pub decode: DecodeParams,
    #[serde(skip)]
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedVerdict {
    Consistency(Consistency),
    Decisiveness(f64),
    Correctness(bool),
    Markers(Vec<String>),
    Canonical(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub kind: JudgeKind,
    pub raw_text: String,
    pub parsed: ParsedVerdict,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{kind} backend call failed after {attempts} attempt(s): {message}")]
    Backend { kind: JudgeKind, attempts: u32, message: String },
    #[error("unparseable {kind} reply {raw:?}")]
    Parse { kind: JudgeKind, raw: String },
    #[error("invalid {kind} reply: {message}")]
    Validation { kind: JudgeKind, message: String },
    #[error("judge cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("invalid judge input: {0}")]
    InvalidInput(String),
}

impl JudgeError {
    pub fn is_backend(&self) -> bool {
        matches!(self, JudgeError::Backend { .. })
    }
}

pub type Result<T> = std::result::Result<T, JudgeError>;

pub struct Judge {
    backend: Arc<dyn Backend>,
    model_id: String,
    templates: Templates,
    cache: Option<Arc<JudgeCache>>,
    retry: RetryPolicy,
    decode: BTreeMap<JudgeKind, DecodeParams>,
}

impl fmt::Debug for Judge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Judge")
            .field("model_id", &self.model_id)
            .field("cache", &self.cache.as_ref().map(|c| c.dir().to_path_buf()))
            .field("retry", &self.retry)
            .finish()
    }
}

impl Judge {
    pub fn new(backend: Arc<dyn Backend>, model_id: impl Into<String>) -> Self {
        Self {
            backend,
            model_id: model_id.into(),
            templates: Templates::default(),
            cache: None,
            retry: RetryPolicy::default(),
            decode: JudgeKind::ALL.iter().map(|k| (*k, k.default_decode())).collect(),
        }
    }

    /// Rule-mode mock judge with no retries delay; handy in tests.
    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend::rules()), "mock-judge").with_retry(RetryPolicy::immediate(3))
    }

    pub fn with_cache(mut self, cache: Arc<JudgeCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_decode(mut self, kind: JudgeKind, decode: DecodeParams) -> Self {
        self.decode.insert(kind, decode);
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn task(&self, kind: JudgeKind, fields: BTreeMap<String, String>) -> Result<JudgeTask> {
        let template_id = kind.template_id().to_string();
        let rendered_prompt = self.templates.render(&template_id, &fields)?;
        let decode = self.decode[&kind].clone();
        if rendered_prompt.trim().is_empty() {
            return Err(JudgeError::InvalidInput(format!("{kind} prompt rendered empty")));
        }
        if !(decode.temperature >= 0.0) {
            return Err(JudgeError::InvalidInput(format!("{kind} temperature {}", decode.temperature)));
        }
        Ok(JudgeTask { kind, template_id, rendered_prompt, decode, fields })
    }

    /// Run `task` and parse the reply with `parse`; the raw reply is cached
    /// only if parsing succeeds.
    fn run<T>(&self, task: &JudgeTask, parse: impl Fn(&str) -> Result<T>) -> Result<(T, String)> {
        let key = CacheKey::for_task(task, &self.model_id);
        if let Some(cache) = &self.cache {
            if let Some(raw) = cache.get(&key)? {
                return Ok((parse(&raw)?, raw));
            }
        }
        let request = CompletionRequest {
            model: self.model_id.clone(),
            system: None,
            prompt: task.rendered_prompt.clone(),
            decode: task.decode.clone(),
            purpose: Purpose::Judge(task.kind),
            fields: task.fields.clone(),
        };
        let raw = self.retry.run(self.backend.as_ref(), &request).map_err(|(e, attempts)| {
            JudgeError::Backend { kind: task.kind, attempts, message: e.message }
        })?;
        let value = parse(&raw)?;
        let raw = match &self.cache {
            Some(cache) => cache.put(&key, task.kind, &raw)?,
            None => raw,
        };
        Ok((value, raw))
    }

    fn require(text: &str, what: &str) -> Result<()> {
        if text.trim().is_empty() {
            return Err(JudgeError::InvalidInput(format!("{what} is empty")));
        }
        Ok(())
    }

    pub fn consistency_verdict(&self, assertion: &str, context: &str) -> Result<JudgeVerdict> {
        Self::require(assertion, "assertion")?;
        Self::require(context, "context")?;
        let fields = fields(&[("sampled_response", context), ("sentence", assertion)]);
        let task = self.task(JudgeKind::Consistency, fields)?;
        let (v, raw) = self.run(&task, |raw| Ok(parse::parse_consistency(raw)))?;
        Ok(JudgeVerdict { kind: task.kind, raw_text: raw, parsed: ParsedVerdict::Consistency(v) })
    }

    pub fn consistency(&self, assertion: &str, context: &str) -> Result<Consistency> {
        match self.consistency_verdict(assertion, context)?.parsed {
            ParsedVerdict::Consistency(c) => Ok(c),
            _ => unreachable!(),
        }
    }

    /// Decisiveness in [0, 1]; out-of-range replies are clamped with a warning.
    pub fn decisiveness(&self, sentence: &str) -> Result<f64> {
        Self::require(sentence, "sentence")?;
        let task = self.task(JudgeKind::Decisiveness, fields(&[("text", sentence)]))?;
        let (v, raw) = self.run(&task, |raw| {
            parse::parse_decisiveness(raw)
                .ok_or_else(|| JudgeError::Parse { kind: JudgeKind::Decisiveness, raw: raw.to_string() })
        })?;
        if v.1 {
            log::warn!("decisiveness reply {raw:?} clamped to {}", v.0);
        }
        Ok(v.0)
    }

    pub fn accuracy(&self, prediction: &str, gold_answers: &[String]) -> Result<bool> {
        Self::require(prediction, "prediction")?;
        if gold_answers.is_empty() {
            return Err(JudgeError::InvalidInput("no gold answers".into()));
        }
        let targets = serde_json::to_string(gold_answers).expect("strings serialize");
        let task = self.task(JudgeKind::Accuracy, fields(&[("targets", &targets), ("pred", prediction)]))?;
        let (v, _) = self.run(&task, |raw| {
            parse::parse_accuracy(raw).ok_or_else(|| JudgeError::Parse { kind: JudgeKind::Accuracy, raw: raw.to_string() })
        })?;
        Ok(v)
    }

    pub fn extract_markers(&self, sentence: &str) -> Result<Vec<String>> {
        Self::require(sentence, "sentence")?;
        let task = self.task(JudgeKind::ExtractMarkers, fields(&[("text", sentence)]))?;
        Ok(self.run(&task, |raw| Ok(parse::parse_markers(raw)))?.0)
    }

    /// Map every input marker to a canonical form. A reply that misses a key
    /// is retried once without the cache before failing.
    pub fn standardize_markers(&self, markers: &[String]) -> Result<BTreeMap<String, String>> {
        let unique: BTreeSet<&String> = markers.iter().collect();
        if markers.is_empty() || unique.len() != markers.len() {
            return Err(JudgeError::InvalidInput("marker list must be non-empty and deduplicated".into()));
        }
        let list = serde_json::to_string(markers).expect("strings serialize");
        let task = self.task(JudgeKind::StandardizeMarkers, fields(&[("extracted_markers_list", &list)]))?;
        let parse = |raw: &str| {
            parse::parse_canonical(raw, markers).map_err(|e| JudgeError::Validation {
                kind: JudgeKind::StandardizeMarkers,
                message: format!("{e:?}"),
            })
        };
        match self.run(&task, parse) {
            Ok((m, _)) => Ok(m),
            Err(JudgeError::Validation { message, .. }) => {
                log::warn!("standardization reply invalid ({message}); retrying once");
                let request = CompletionRequest {
                    model: self.model_id.clone(),
                    system: None,
                    prompt: task.rendered_prompt.clone(),
                    decode: task.decode.clone(),
                    purpose: Purpose::Judge(task.kind),
                    fields: task.fields.clone(),
                };
                let raw = self.retry.run(self.backend.as_ref(), &request).map_err(|(e, attempts)| {
                    JudgeError::Backend { kind: task.kind, attempts, message: e.message }
                })?;
                let m = parse(&raw)?;
                if let Some(cache) = &self.cache {
                    cache.put(&CacheKey::for_task(&task, &self.model_id), task.kind, &raw)?;
                }
                Ok(m)
            }
            Err(e) => Err(e),
        }
    }
}

fn fields(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
