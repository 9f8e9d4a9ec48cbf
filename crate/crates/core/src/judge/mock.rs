//! Deterministic backends for tests and offline runs.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendError, CompletionRequest, Purpose};
use super::parse::normalize_marker;
use super::JudgeKind;

pub const DEFAULT_LEXICON: &str = include_str!("../../resources/lexicon.tsv");
pub const DEFAULT_CANONICAL: &str = include_str!("../../resources/canonical.tsv");

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Lexicon-driven stand-in for the judge model.
#[derive(Debug, Clone)]
pub struct RuleSet {
    /// (lowercased phrase, original phrase, decisiveness), longest first.
    lexicon: Vec<(String, String, f64)>,
    canonical: HashMap<String, String>,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::from_tables(DEFAULT_LEXICON, DEFAULT_CANONICAL)
    }
}

fn tsv_rows(text: &str) -> impl Iterator<Item = (&str, &str)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t'))
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

impl RuleSet {
    pub fn from_tables(lexicon: &str, canonical: &str) -> Self {
        let mut lex: Vec<(String, String, f64)> = tsv_rows(lexicon)
            .filter_map(|(p, d)| {
                let d: f64 = d.trim().parse().ok()?;
                Some((p.trim().to_lowercase(), p.trim().to_string(), d))
            })
            .collect();
        lex.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        let canonical = tsv_rows(canonical)
            .map(|(v, c)| (normalize_marker(v).to_lowercase(), normalize_marker(c)))
            .collect();
        Self { lexicon: lex, canonical }
    }

    /// Lexicon hits in text order as (phrase, decisiveness).
    pub fn find_hedges(&self, text: &str) -> Vec<(String, f64)> {
        let lowered = text.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase();
        let mut hits = Vec::new();
        let mut i = 0;
        let mut prev: Option<char> = None;
        while i < lowered.len() {
            let rest = &lowered[i..];
            let c = rest.chars().next().unwrap();
            if prev.is_none_or(|p| !is_word(p)) {
                let found = self.lexicon.iter().find(|(phrase, _, _)| {
                    rest.starts_with(phrase.as_str())
                        && rest[phrase.len()..].chars().next().is_none_or(|n| !is_word(n))
                });
                if let Some((phrase, original, d)) = found {
                    hits.push((normalize_marker(original), *d));
                    prev = phrase.chars().last();
                    i += phrase.len();
                    continue;
                }
            }
            prev = Some(c);
            i += c.len_utf8();
        }
        hits
    }

    pub fn canonical(&self, marker: &str) -> String {
        let norm = normalize_marker(marker);
        self.canonical.get(&norm.to_lowercase()).cloned().unwrap_or(norm)
    }

    fn normalize_text(s: &str) -> String {
        s.replace(['\u{2019}', '\u{2018}'], "'")
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Words of four or more characters outside any hedge phrase.
    fn content_words(&self, normalized: &str) -> Vec<String> {
        let mut text = format!(" {normalized} ");
        for (phrase, _, _) in &self.lexicon {
            text = text.replace(&format!(" {phrase} "), " ");
        }
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.chars().count() >= 4)
            .map(str::to_string)
            .collect()
    }

    /// Raw reply the rule-mode judge gives for `kind`.
    pub fn reply(&self, kind: JudgeKind, fields: &BTreeMap<String, String>) -> Result<String, BackendError> {
        let field = |name: &str| {
            fields
                .get(name)
                .map(String::as_str)
                .ok_or_else(|| BackendError::fatal(format!("mock rule for {kind:?} needs field {name}")))
        };
        match kind {
            JudgeKind::Consistency => {
                let context = Self::normalize_text(field("sampled_response")?);
                let sentence = Self::normalize_text(field("sentence")?);
                if context.contains(&sentence) {
                    return Ok("Yes".into());
                }
                let content = self.content_words(&sentence);
                if content.is_empty() {
                    return Ok("Not applicable".into());
                }
                let words: Vec<&str> = context.split(|c: char| !c.is_alphanumeric()).collect();
                Ok(if content.iter().all(|w| words.contains(&w.as_str())) { "Yes" } else { "No" }.to_string())
            }
            JudgeKind::Decisiveness => {
                let hedges = self.find_hedges(field("text")?);
                let d = hedges.iter().map(|h| h.1).fold(1.0f64, f64::min);
                Ok(format!("{d:.3}"))
            }
            JudgeKind::Accuracy => {
                let pred = field("pred")?.to_lowercase();
                let targets: Vec<String> = serde_json::from_str(field("targets")?)
                    .map_err(|e| BackendError::fatal(format!("bad targets field: {e}")))?;
                let hit = targets.iter().any(|t| !t.is_empty() && pred.contains(&t.to_lowercase()));
                Ok(if hit { "True" } else { "False" }.to_string())
            }
            JudgeKind::ExtractMarkers => {
                let hedges = self.find_hedges(field("text")?);
                let list: Vec<String> = hedges.into_iter().map(|h| h.0).collect();
                Ok(if list.is_empty() { "####".to_string() } else { format!("{} ####", list.join("; ")) })
            }
            JudgeKind::StandardizeMarkers => {
                let markers: Vec<String> = serde_json::from_str(field("extracted_markers_list")?)
                    .map_err(|e| BackendError::fatal(format!("bad marker list: {e}")))?;
                let map: serde_json::Map<String, serde_json::Value> = markers
                    .iter()
                    .map(|m| (m.clone(), serde_json::Value::from(self.canonical(m))))
                    .collect();
                Ok(serde_json::Value::Object(map).to_string())
            }
        }
    }
}

type Responder = dyn Fn(&CompletionRequest) -> Option<Result<String, BackendError>> + Send + Sync;

/// Mock judge backend. Lookup order: scripted replies keyed by prompt hash,
/// the responder closure, then rule mode. Prompts containing a failing
/// substring always produce a transient error.
#[derive(Default)]
pub struct MockBackend {
    scripted: HashMap<String, String>,
    responder: Option<Box<Responder>>,
    failing: Vec<String>,
    rules: Option<RuleSet>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn rules() -> Self {
        Self { rules: Some(RuleSet::default()), ..Self::default() }
    }

    pub fn scripted() -> Self {
        Self::default()
    }

    pub fn with_rules(mut self, rules: RuleSet) -> Self {
        self.rules = Some(rules);
        self
    }

    pub fn script(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.scripted.insert(prompt_hash(prompt), reply.into());
        self
    }

    pub fn script_hash(mut self, hash: impl Into<String>, reply: impl Into<String>) -> Self {
        self.scripted.insert(hash.into(), reply.into());
        self
    }

    pub fn respond_with<F>(mut self, f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Option<Result<String, BackendError>> + Send + Sync + 'static,
    {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn fail_on(mut self, substring: impl Into<String>) -> Self {
        self.failing.push(substring.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.failing.iter().any(|f| request.prompt.contains(f.as_str())) {
            return Err(BackendError::transient("injected failure"));
        }
        if let Some(reply) = self.scripted.get(&prompt_hash(&request.prompt)) {
            return Ok(reply.clone());
        }
        if let Some(result) = self.responder.as_ref().and_then(|r| r(request)) {
            return result;
        }
        match (&self.rules, request.purpose) {
            (Some(rules), Purpose::Judge(kind)) => rules.reply(kind, &request.fields),
            _ => Err(BackendError::fatal("mock backend has no reply for this prompt")),
        }
    }
}

/// Deterministic stand-in for a task model.
///
/// Each query gets a hedge and a modal answer; every draw (primary or
/// resample) returns the modal answer with a query-specific probability and
/// a different answer otherwise, so sampling-consistency confidences spread
/// across [0, 1].
#[derive(Debug, Clone)]
pub struct MockTaskModel {
    pub seed: u64,
}

const MOCK_HEDGES: &[&str] = &[
    "I think",
    "Perhaps",
    "Probably",
    "It is likely that",
    "I believe",
    "Maybe",
    "It is unlikely that",
    "I am not sure, but",
];

impl MockTaskModel {
    fn unit(&self, parts: &[&str]) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update(p.as_bytes());
            h.update([0u8]);
        }
        let d = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&d[..8]);
        (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn answer(&self, prompt: &str, sample: usize) -> String {
        let p = self.unit(&[prompt, "p"]);
        let hedge_idx = ((self.unit(&[prompt, "hedge"]) * MOCK_HEDGES.len() as f64) as usize)
            .min(MOCK_HEDGES.len() - 1);
        let hedged = self.unit(&[prompt, "hedged"]) < 0.7;
        let modal = (self.unit(&[prompt, "modal"]) * 1000.0) as u32;
        let draw = self.unit(&[prompt, "draw", &sample.to_string()]);
        let answer = if draw < p {
            modal
        } else {
            1000 + (self.unit(&[prompt, "alt", &sample.to_string()]) * 4.0) as u32
        };
        let first = if hedged {
            format!("{} the answer is {answer}.", MOCK_HEDGES[hedge_idx])
        } else {
            format!("The answer is {answer}.")
        };
        if self.unit(&[prompt, "two"]) < 0.4 {
            let topic = (self.unit(&[prompt, "topic"]) * 50.0) as u32;
            format!("{first} It relates to topic {topic}.")
        } else {
            first
        }
    }
}

impl Backend for MockTaskModel {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        match request.purpose {
            Purpose::Generate { sample } => Ok(self.answer(&request.prompt, sample)),
            Purpose::Judge(_) => Err(BackendError::fatal("task model mock cannot judge")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_matches_longest_on_word_boundaries() {
        let r = RuleSet::default();
        let hits: Vec<String> = r
            .find_hedges("I think the Warcraft wiki says 13,000 years, but I could be mistaken.")
            .into_iter()
            .map(|h| h.0)
            .collect();
        assert_eq!(hits, vec!["I think", "I could be mistaken"]);
        let hits: Vec<String> = r.find_hedges("It is highly unlikely, not likely.").into_iter().map(|h| h.0).collect();
        assert_eq!(hits, vec!["highly unlikely", "likely"]);
        assert!(r.find_hedges("The mighty river is wide.").is_empty());
        assert!(r.find_hedges("The Mediterranean Sea's maximum depth measures 5,109 meters.").is_empty());
    }

    #[test]
    fn canonical_table() {
        let r = RuleSet::default();
        assert_eq!(r.canonical("suggests"), "suggest");
        assert_eq!(r.canonical("Suggesting"), "suggest");
        assert_eq!(r.canonical("possible"), r.canonical("possibly"));
        assert_ne!(r.canonical("not certain"), r.canonical("uncertain"));
        assert_eq!(r.canonical("I believe"), "I believe");
    }

    #[test]
    fn task_model_is_deterministic() {
        let m = MockTaskModel { seed: 3 };
        assert_eq!(m.answer("q", 1), m.answer("q", 1));
        assert_ne!(MockTaskModel { seed: 4 }.answer("q", 0), "");
    }
}
