//! Sentence-level annotation: segmentation, marker extraction and
//! standardization, sampling-consistency confidence, decisiveness and
//! response correctness.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Extra, QueryRef, ResponseRecord, Split};
use crate::judge::{normalize_marker, Consistency, Judge, JudgeError};
use crate::segmenter::Segmenter;

/// Reserved marker for sentences without any epistemic marker.
pub const NO_HEDGE: &str = "<no_hedge>";

pub const DEFAULT_REFUSALS: &str = include_str!("../resources/refusals.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerState {
    NoHedge,
    Single,
    MultiDiscarded,
}

/// One annotated sentence. `marker` is the canonical marker for `single`,
/// [`NO_HEDGE`] for `no_hedge`, and absent for `multi_discarded`, which also
/// carries no confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceAnnotation {
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub query_id: String,
    pub sent_idx: usize,
    pub text: String,
    pub marker_state: MarkerState,
    pub marker: Option<String>,
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisiveness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default)]
    pub punt: bool,
    /// Raw number of extracted markers before standardization.
    #[serde(default)]
    pub n_markers: usize,
}

impl SentenceAnnotation {
    /// The marker this sentence contributes to a MIC table, if any.
    pub fn mic_marker(&self) -> Option<&str> {
        match self.marker_state {
            MarkerState::MultiDiscarded => None,
            _ if self.confidence.is_none() => None,
            _ => self.marker.as_deref(),
        }
    }

    pub fn query_ref(&self) -> QueryRef {
        QueryRef { dataset_id: self.dataset_id.clone(), split: self.split, query_id: self.query_id.clone() }
    }
}

/// Response-level facts shared by all of a response's sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAnnotation {
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default)]
    pub punt: bool,
    pub n_sentences: usize,
}

impl ResponseAnnotation {
    pub fn query_ref(&self) -> QueryRef {
        QueryRef { dataset_id: self.dataset_id.clone(), split: self.split, query_id: self.query_id.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub model_id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_idx: Option<usize>,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub responses: usize,
    pub total_sentences: usize,
    pub no_hedge: usize,
    pub single: usize,
    pub multi_discarded: usize,
    /// Sentences dropped because a judge call failed.
    pub excluded: usize,
    pub decisiveness_failures: usize,
    pub accuracy_failures: usize,
    pub heuristic_punts: usize,
    /// Failed judge units over attempted judge units.
    pub failure_rate: f64,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotatedCorpus {
    pub k: usize,
    pub responses: Vec<ResponseAnnotation>,
    pub sentences: Vec<SentenceAnnotation>,
    pub diagnostics: Diagnostics,
}

impl AnnotatedCorpus {
    pub fn model_ids(&self) -> BTreeSet<&str> {
        self.responses.iter().map(|r| r.model_id.as_str()).chain(self.sentences.iter().map(|s| s.model_id.as_str())).collect()
    }

    pub fn dataset_ids(&self, model_id: &str) -> BTreeSet<&str> {
        self.sentences
            .iter()
            .filter(|s| s.model_id == model_id)
            .map(|s| s.dataset_id.as_str())
            .chain(self.responses.iter().filter(|r| r.model_id == model_id).map(|r| r.dataset_id.as_str()))
            .collect()
    }

    pub fn sentences_for<'a>(
        &'a self,
        model_id: &'a str,
        dataset_id: &'a str,
        split: Split,
    ) -> impl Iterator<Item = &'a SentenceAnnotation> + 'a {
        self.sentences
            .iter()
            .filter(move |s| s.model_id == model_id && s.dataset_id == dataset_id && s.split == split)
    }

    pub fn responses_for<'a>(
        &'a self,
        model_id: &'a str,
        dataset_id: &'a str,
        split: Split,
    ) -> impl Iterator<Item = &'a ResponseAnnotation> + 'a {
        self.responses
            .iter()
            .filter(move |r| r.model_id == model_id && r.dataset_id == dataset_id && r.split == split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateOptions {
    pub score_decisiveness: bool,
    pub score_accuracy: bool,
    /// Flag responses matching a refusal pattern as punts.
    pub detect_punts: bool,
    /// Largest tolerated fraction of failed judge units.
    pub failure_ceiling: f64,
    /// Markers per standardization call.
    pub standardize_batch: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            score_decisiveness: true,
            score_accuracy: true,
            detect_punts: false,
            failure_ceiling: 0.01,
            standardize_batch: 200,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("judge failure rate {rate:.4} exceeds ceiling {ceiling}")]
    FailureCeiling { rate: f64, ceiling: f64, partial: Box<AnnotatedCorpus> },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("annotation file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Case-insensitive refusal-substring matcher.
#[derive(Debug, Clone)]
pub struct PuntDetector {
    patterns: Vec<String>,
}

impl Default for PuntDetector {
    fn default() -> Self {
        Self::from_list(DEFAULT_REFUSALS)
    }
}

impl PuntDetector {
    pub fn from_list(list: &str) -> Self {
        let patterns = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { patterns }
    }

    pub fn is_punt(&self, text: &str) -> bool {
        let lowered = text.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase();
        self.patterns.iter().any(|p| lowered.contains(p.as_str()))
    }
}

/// 1 − mean inconsistency, with yes/na/no mapped to 0/0.5/1.
pub fn confidence_from_verdicts(verdicts: &[Consistency]) -> Option<f64> {
    if verdicts.is_empty() {
        return None;
    }
    let total: f64 = verdicts.iter().map(|v| v.inconsistency()).sum();
    Some(1.0 - total / verdicts.len() as f64)
}

/// Sampling-consistency confidence of `sentence` against `samples`.
pub fn intrinsic_confidence(sentence: &str, samples: &[String], judge: &Judge) -> Result<f64, JudgeError> {
    if samples.is_empty() {
        return Err(JudgeError::InvalidInput("no samples".into()));
    }
    let verdicts = samples
        .iter()
        .map(|s| judge.consistency(sentence, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(confidence_from_verdicts(&verdicts).expect("non-empty"))
}

/// Marker state from a sentence's canonical markers.
pub fn marker_state(canonical: &[String]) -> (MarkerState, Option<String>) {
    let distinct: BTreeSet<&String> = canonical.iter().collect();
    match distinct.len() {
        0 => (MarkerState::NoHedge, Some(NO_HEDGE.to_string())),
        1 => (MarkerState::Single, distinct.into_iter().next().cloned()),
        _ => (MarkerState::MultiDiscarded, None),
    }
}

/// Extract and standardize the markers of one sentence.
pub fn annotate_sentence(text: &str, judge: &Judge) -> Result<(MarkerState, Option<String>), JudgeError> {
    let raw = judge.extract_markers(text)?;
    if raw.is_empty() {
        return Ok(marker_state(&[]));
    }
    let unique: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let map = judge.standardize_markers(&unique)?;
    let canonical: Vec<String> = raw.iter().map(|m| canonical_form(&map, m)).collect();
    Ok(marker_state(&canonical))
}

fn canonical_form(map: &BTreeMap<String, String>, raw: &str) -> String {
    match map.get(raw).map(|c| normalize_marker(c)) {
        Some(c) if !c.is_empty() => c,
        _ => raw.to_string(),
    }
}

/// Mean and population std of per-sentence marker counts.
pub fn hedges_per_sentence(counts: &[usize]) -> (f64, f64) {
    if counts.is_empty() {
        log::warn!("hedges_per_sentence called with no sentences");
        return (0.0, 0.0);
    }
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mean = crate::stats::mean(&values).expect("non-empty");
    let std = crate::stats::population_std(&values).expect("non-empty");
    (mean, std)
}

struct Unit<'a> {
    response: usize,
    sent_idx: usize,
    text: &'a str,
}

struct Scored {
    confidence: Option<f64>,
    decisiveness: Option<f64>,
    failures: Vec<(String, String)>,
}

fn failure(r: &ResponseRecord, sent_idx: Option<usize>, stage: &str, reason: impl ToString) -> Failure {
    let f = Failure {
        model_id: r.model_id.clone(),
        query: r.query_ref().to_string(),
        sent_idx,
        stage: stage.to_string(),
        reason: reason.to_string(),
    };
    log::warn!(
        "{} {} sentence {:?}: {} failed: {}",
        f.model_id,
        f.query,
        f.sent_idx,
        f.stage,
        f.reason
    );
    f
}

/// Annotate every response in `corpus`. Judge calls run on the current rayon
/// pool; results keep corpus order. Fails only when the failure rate
/// exceeds `options.failure_ceiling`.
pub fn annotate_corpus(
    corpus: &Corpus,
    judge: &Judge,
    segmenter: &dyn Segmenter,
    options: &AnnotateOptions,
) -> Result<AnnotatedCorpus, AnnotateError> {
    let k = corpus.k().unwrap_or(0);
    let queries = corpus.query_index();
    let punts = PuntDetector::default();

    let units: Vec<Unit> = corpus
        .responses
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            segmenter
                .segment(&r.response_text)
                .into_iter()
                .map(move |s| Unit { response: i, sent_idx: s.index, text: s.slice(&r.response_text) })
        })
        .collect();

    let extracted: Vec<Result<Vec<String>, JudgeError>> =
        units.par_iter().map(|u| judge.extract_markers(u.text)).collect();

    let raw_markers: BTreeSet<&String> = extracted.iter().flatten().flatten().collect();
    let raw_markers: Vec<String> = raw_markers.into_iter().cloned().collect();
    let batch = options.standardize_batch.max(1);
    let standardized: Vec<Result<BTreeMap<String, String>, JudgeError>> =
        raw_markers.par_chunks(batch).map(|chunk| judge.standardize_markers(chunk)).collect();
    let mut canonical: HashMap<String, String> = HashMap::new();
    let mut standardize_errors: HashMap<String, String> = HashMap::new();
    for (chunk, result) in raw_markers.chunks(batch).zip(standardized) {
        match result {
            Ok(map) => {
                for m in chunk {
                    canonical.insert(m.clone(), canonical_form(&map, m));
                }
            }
            Err(e) => {
                log::warn!("standardization of {} markers failed: {e}", chunk.len());
                for m in chunk {
                    standardize_errors.insert(m.clone(), e.to_string());
                }
            }
        }
    }

    let mut failures = Vec::new();
    let mut states: Vec<Option<(MarkerState, Option<String>, usize)>> = Vec::with_capacity(units.len());
    for (u, ex) in units.iter().zip(&extracted) {
        let r = &corpus.responses[u.response];
        match ex {
            Err(e) => {
                failures.push(failure(r, Some(u.sent_idx), "extract_markers", e));
                states.push(None);
            }
            Ok(raw) => {
                if let Some(reason) = raw.iter().find_map(|m| standardize_errors.get(m)) {
                    failures.push(failure(r, Some(u.sent_idx), "standardize_markers", reason));
                    states.push(None);
                    continue;
                }
                let forms: Vec<String> = raw.iter().map(|m| canonical[m].clone()).collect();
                let (state, marker) = marker_state(&forms);
                states.push(Some((state, marker, raw.len())));
            }
        }
    }

    let scored: Vec<Option<Scored>> = units
        .par_iter()
        .zip(states.par_iter())
        .map(|(u, state)| {
            let (state, _, _) = state.as_ref()?;
            if *state == MarkerState::MultiDiscarded {
                return Some(Scored { confidence: None, decisiveness: None, failures: Vec::new() });
            }
            let r = &corpus.responses[u.response];
            let mut out = Scored { confidence: None, decisiveness: None, failures: Vec::new() };
            match intrinsic_confidence(u.text, &r.samples, judge) {
                Ok(c) => out.confidence = Some(c),
                Err(e) => {
                    out.failures.push(("consistency".into(), e.to_string()));
                    return Some(out);
                }
            }
            if options.score_decisiveness {
                match judge.decisiveness(u.text) {
                    Ok(d) => out.decisiveness = Some(d),
                    Err(e) => out.failures.push(("decisiveness".into(), e.to_string())),
                }
            }
            Some(out)
        })
        .collect();

    let correctness: Vec<Result<Option<bool>, JudgeError>> = corpus
        .responses
        .par_iter()
        .map(|r| {
            if !options.score_accuracy {
                return Ok(None);
            }
            match queries.get(&r.query_ref()) {
                Some(q) if !q.gold_answers.is_empty() => judge.accuracy(&r.response_text, &q.gold_answers).map(Some),
                _ => Ok(None),
            }
        })
        .collect();

    let mut diagnostics = Diagnostics {
        responses: corpus.responses.len(),
        total_sentences: units.len(),
        ..Diagnostics::default()
    };
    let mut accuracy_attempts = 0;
    let mut responses = Vec::with_capacity(corpus.responses.len());
    for (r, correct) in corpus.responses.iter().zip(correctness) {
        let heuristic = options.detect_punts && !r.punt && punts.is_punt(&r.response_text);
        diagnostics.heuristic_punts += usize::from(heuristic);
        if options.score_accuracy && queries.get(&r.query_ref()).is_some_and(|q| !q.gold_answers.is_empty()) {
            accuracy_attempts += 1;
        }
        let correct = match correct {
            Ok(c) => c,
            Err(e) => {
                diagnostics.accuracy_failures += 1;
                failures.push(failure(r, None, "accuracy", e));
                None
            }
        };
        responses.push(ResponseAnnotation {
            model_id: r.model_id.clone(),
            dataset_id: r.dataset_id.clone(),
            split: r.split,
            query_id: r.query_id.clone(),
            correct,
            punt: r.punt || heuristic,
            n_sentences: 0,
        });
    }

    let mut sentences = Vec::new();
    for ((u, state), scored) in units.iter().zip(states).zip(scored) {
        let r = &corpus.responses[u.response];
        let (Some((state, marker, n_markers)), Some(scored)) = (state, scored) else {
            diagnostics.excluded += 1;
            continue;
        };
        let mut excluded = false;
        for (stage, reason) in &scored.failures {
            failures.push(failure(r, Some(u.sent_idx), stage, reason));
            if stage == "decisiveness" {
                diagnostics.decisiveness_failures += 1;
            } else {
                excluded = true;
            }
        }
        if excluded {
            diagnostics.excluded += 1;
            continue;
        }
        match state {
            MarkerState::NoHedge => diagnostics.no_hedge += 1,
            MarkerState::Single => diagnostics.single += 1,
            MarkerState::MultiDiscarded => diagnostics.multi_discarded += 1,
        }
        let resp = &mut responses[u.response];
        resp.n_sentences += 1;
        sentences.push(SentenceAnnotation {
            model_id: r.model_id.clone(),
            dataset_id: r.dataset_id.clone(),
            split: r.split,
            query_id: r.query_id.clone(),
            sent_idx: u.sent_idx,
            text: u.text.to_string(),
            marker_state: state,
            marker,
            confidence: scored.confidence,
            decisiveness: scored.decisiveness,
            correct: resp.correct,
            punt: resp.punt,
            n_markers,
        });
    }

    let attempted = units.len() + accuracy_attempts;
    diagnostics.failure_rate = if attempted == 0 { 0.0 } else { failures.len() as f64 / attempted as f64 };
    diagnostics.failures = failures;
    if corpus.responses.is_empty() {
        log::warn!("corpus has no responses; nothing to annotate");
    }
    let annotated = AnnotatedCorpus { k, responses, sentences, diagnostics };
    let rate = annotated.diagnostics.failure_rate;
    if rate > options.failure_ceiling {
        return Err(AnnotateError::FailureCeiling {
            rate,
            ceiling: options.failure_ceiling,
            partial: Box::new(annotated),
        });
    }
    Ok(annotated)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Meta(Extra),
    Response(ResponseAnnotation),
    Sentence(SentenceAnnotation),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LineRef<'a> {
    Meta(&'a Extra),
    Response(&'a ResponseAnnotation),
    Sentence(&'a SentenceAnnotation),
}

/// Write the annotation file: a meta line (with `k` added), then each
/// response line followed by that response's sentence lines.
pub fn write_annotations<W: Write>(annotated: &AnnotatedCorpus, meta: &Extra, mut w: W) -> std::io::Result<()> {
    let mut meta = meta.clone();
    meta.insert("k".into(), annotated.k.into());
    let line = |w: &mut W, l: LineRef| -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, &l)?;
        w.write_all(b"\n")
    };
    line(&mut w, LineRef::Meta(&meta))?;
    let mut by_response: BTreeMap<(&str, QueryRef), Vec<&SentenceAnnotation>> = BTreeMap::new();
    for s in &annotated.sentences {
        by_response.entry((s.model_id.as_str(), s.query_ref())).or_default().push(s);
    }
    for r in &annotated.responses {
        line(&mut w, LineRef::Response(r))?;
        for s in by_response.remove(&(r.model_id.as_str(), r.query_ref())).unwrap_or_default() {
            line(&mut w, LineRef::Sentence(s))?;
        }
    }
    // Sentences whose response line is missing (hand-built inputs).
    for s in by_response.into_values().flatten() {
        line(&mut w, LineRef::Sentence(s))?;
    }
    w.flush()
}

/// Read an annotation file; returns its meta line (if any) and the
/// annotations. Diagnostics are not stored in the file and come back empty.
pub fn read_annotations<R: Read>(reader: R) -> Result<(Option<Extra>, AnnotatedCorpus), AnnotateError> {
    let mut meta = None;
    let mut out = AnnotatedCorpus::default();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| AnnotateError::Parse { line: i + 1, message: e.to_string() })?;
        match parsed {
            Line::Meta(m) => {
                out.k = m.get("k").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
                meta = Some(m);
            }
            Line::Response(r) => out.responses.push(r),
            Line::Sentence(s) => {
                let check = |ok: bool, what: &str| {
                    if ok {
                        Ok(())
                    } else {
                        Err(AnnotateError::Parse { line: i + 1, message: what.to_string() })
                    }
                };
                check(s.confidence.is_none_or(|c| (0.0..=1.0).contains(&c)), "confidence outside [0, 1]")?;
                check(s.decisiveness.is_none_or(|d| (0.0..=1.0).contains(&d)), "decisiveness outside [0, 1]")?;
                check(
                    s.marker_state != MarkerState::Single || s.marker.as_deref().is_some_and(|m| !m.is_empty()),
                    "single-marker sentence without a marker",
                )?;
                out.sentences.push(s)
            }
        }
    }
    Ok((meta, out))
}

pub fn load_annotations(path: impl AsRef<std::path::Path>) -> Result<(Option<Extra>, AnnotatedCorpus), AnnotateError> {
    read_annotations(std::fs::File::open(path)?)
}
