//! Stability metrics over MIC tables, faithfulness and CMFG.
//!
//! Low-level functions take plain tables and scored test sentences so they
//! can be checked against hand-built fixtures; [`compute_report`] wires them
//! to annotated corpora.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotatedCorpus, MarkerState, SentenceAnnotation};
use crate::corpus::Split;
use crate::mic::{self, MicError, MicTable};
use crate::stats::{self, Group, StatsError};

/// Faithful/unfaithful cut used for report stratification.
pub const FAITHFUL_THRESHOLD: f64 = 0.75;
pub const CMFG_BINS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Mic(#[from] MicError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn insufficient<T>(why: impl Into<String>) -> Result<T> {
    Err(MetricError::InsufficientData(why.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Marker,
    Sentence,
    Response,
}

/// How the cross-domain sum over directed pairs is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmaeNormalization {
    /// Divide by the number of directed pairs actually evaluated.
    #[default]
    DirectedPairs,
    /// Divide by C(N_d, 2) as written, which doubles the directed average.
    UnorderedLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

impl Correlation {
    pub fn compute(self, x: &[f64], y: &[f64]) -> std::result::Result<f64, StatsError> {
        match self {
            Correlation::Pearson => stats::pearson(x, y),
            Correlation::Spearman => stats::spearman(x, y),
        }
    }
}

/// Reduction from sentence confidences to a response confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseConfidence {
    #[default]
    Mean,
    Min,
    Last,
}

impl ResponseConfidence {
    pub fn reduce(self, confidences: &[f64]) -> Option<f64> {
        match self {
            ResponseConfidence::Mean => stats::mean(confidences).ok(),
            ResponseConfidence::Min => confidences.iter().copied().reduce(f64::min),
            ResponseConfidence::Last => confidences.last().copied(),
        }
    }
}

/// A metric value with the bookkeeping needed to audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    /// Components (datasets, pairs or markers) that entered the average.
    pub used: usize,
    /// Components or sentences left out, by reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub skipped: BTreeMap<String, usize>,
}

fn skip(skipped: &mut BTreeMap<String, usize>, reason: &str, n: usize) {
    if n > 0 {
        *skipped.entry(reason.to_string()).or_default() += n;
    }
}

/// A test sentence with its marker (or `<no_hedge>`) and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub marker: String,
    pub confidence: f64,
}

/// Test-split sentences of one dataset, grouped by response.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TestSet {
    pub dataset_id: String,
    pub responses: Vec<Vec<Scored>>,
}

struct Component {
    value: f64,
    terms: Vec<f64>,
    unseen: usize,
}

fn group_of(terms: &[f64]) -> Group {
    Group { n: terms.len(), std: if terms.len() < 2 { 0.0 } else { stats::sample_std(terms).unwrap_or(0.0) } }
}

/// MAE of `table`'s MICs against `test` under `aggregation`; `None` when no
/// sentence carries a marker of the table.
fn mae_component(table: &MicTable, test: &TestSet, aggregation: Aggregation) -> Option<Component> {
    let mut unseen = 0;
    let mut errors_by_response: Vec<Vec<(&str, f64)>> = Vec::with_capacity(test.responses.len());
    for response in &test.responses {
        let mut errs = Vec::new();
        for s in response {
            match table.mic(&s.marker) {
                Some(m) => errs.push((s.marker.as_str(), (m - s.confidence).abs())),
                None => unseen += 1,
            }
        }
        errors_by_response.push(errs);
    }
    let terms: Vec<f64> = match aggregation {
        Aggregation::Marker => {
            let mut by_marker: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (m, e) in errors_by_response.iter().flatten() {
                by_marker.entry(m).or_default().push(*e);
            }
            by_marker.values().map(|v| stats::mean(v).expect("non-empty")).collect()
        }
        Aggregation::Sentence => errors_by_response.iter().flatten().map(|(_, e)| *e).collect(),
        Aggregation::Response => errors_by_response
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| r.iter().map(|(_, e)| e).sum::<f64>() / r.len() as f64)
            .collect(),
    };
    let value = stats::mean(&terms).ok()?;
    Some(Component { value, terms, unseen })
}

fn combine(components: Vec<Component>, divisor: f64, mut skipped: BTreeMap<String, usize>) -> Result<Outcome> {
    if components.is_empty() {
        return insufficient("no component had a scorable sentence");
    }
    let unseen: usize = components.iter().map(|c| c.unseen).sum();
    skip(&mut skipped, "sentences_with_unseen_marker", unseen);
    let groups: Vec<Group> = components.iter().map(|c| group_of(&c.terms)).collect();
    let value = components.iter().map(|c| c.value).sum::<f64>() / divisor;
    Ok(Outcome { value, std: stats::pooled_std(&groups).ok(), used: components.len(), skipped })
}

/// In-domain MAE: each dataset's train table scores its own test sentences.
pub fn imae(tables: &[MicTable], tests: &[TestSet], aggregation: Aggregation) -> Result<Outcome> {
    if tests.is_empty() {
        return insufficient("no dataset has a test split");
    }
    let mut skipped = BTreeMap::new();
    let mut components = Vec::new();
    for test in tests {
        let Some(table) = tables.iter().find(|t| t.dataset_id == test.dataset_id) else {
            skip(&mut skipped, "datasets_without_train_table", 1);
            continue;
        };
        match mae_component(table, test, aggregation) {
            Some(c) => components.push(c),
            None => skip(&mut skipped, "datasets_without_scorable_sentences", 1),
        }
    }
    let n = components.len() as f64;
    combine(components, n, skipped)
}

/// Cross-domain MAE over directed pairs (D, D'), D's train table scoring
/// D''s test sentences. Only datasets with both a table and a test set take
/// part.
pub fn cmae(
    tables: &[MicTable],
    tests: &[TestSet],
    aggregation: Aggregation,
    normalization: CmaeNormalization,
) -> Result<Outcome> {
    let eligible: Vec<(&MicTable, &TestSet)> = tables
        .iter()
        .filter_map(|t| tests.iter().find(|x| x.dataset_id == t.dataset_id).map(|x| (t, x)))
        .collect();
    if eligible.len() < 2 {
        return insufficient(format!("{} dataset(s) with both splits; need 2", eligible.len()));
    }
    let mut skipped = BTreeMap::new();
    let mut components = Vec::new();
    for (table, _) in &eligible {
        for (other, test) in &eligible {
            if table.dataset_id == other.dataset_id {
                continue;
            }
            match mae_component(table, test, aggregation) {
                Some(c) => components.push(c),
                None => skip(&mut skipped, "pairs_without_scorable_sentences", 1),
            }
        }
    }
    let n = eligible.len() as f64;
    let divisor = match normalization {
        CmaeNormalization::DirectedPairs => components.len() as f64,
        CmaeNormalization::UnorderedLiteral => n * (n - 1.0) / 2.0,
    };
    combine(components, divisor, skipped)
}

/// Mean over markers shared by every table of the CV of their MICs.
pub fn mcv(tables: &[&MicTable]) -> Result<Outcome> {
    if tables.len() < 2 {
        return insufficient(format!("{} table(s); need 2", tables.len()));
    }
    let shared = mic::shared_markers(tables);
    if shared.is_empty() {
        return insufficient("no marker is shared by all datasets");
    }
    let mut skipped = BTreeMap::new();
    let mut cvs = Vec::new();
    for marker in &shared {
        let values: Vec<f64> = tables.iter().map(|t| t.mic(marker).expect("shared")).collect();
        match stats::cv(&values) {
            Ok(c) => cvs.push(c),
            Err(StatsError::ZeroMean) => skip(&mut skipped, "markers_with_zero_mean", 1),
            Err(e) => return Err(e.into()),
        }
    }
    if cvs.is_empty() {
        return insufficient("every shared marker has zero mean MIC");
    }
    Ok(Outcome { value: stats::mean(&cvs)?, std: None, used: cvs.len(), skipped })
}

/// Mean over datasets of the CV of all MICs in the dataset's table.
pub fn dcv(tables: &[&MicTable]) -> Result<Outcome> {
    let mut skipped = BTreeMap::new();
    let mut cvs = Vec::new();
    for t in tables {
        if t.len() < 2 {
            skip(&mut skipped, "tables_with_fewer_than_2_markers", 1);
            continue;
        }
        match stats::cv(&t.mics()) {
            Ok(c) => cvs.push(c),
            Err(StatsError::ZeroMean) => skip(&mut skipped, "tables_with_zero_mean", 1),
            Err(e) => return Err(e.into()),
        }
    }
    if cvs.is_empty() {
        return insufficient("no table has 2 or more markers");
    }
    Ok(Outcome { value: stats::mean(&cvs)?, std: None, used: cvs.len(), skipped })
}

/// Minimum shared markers for a dataset pair to enter MRC.
pub const MRC_MIN_SHARED: usize = 3;

/// Fisher mean over unordered dataset pairs of the Spearman correlation of
/// their pairwise-shared markers' MICs.
pub fn mrc(tables: &[&MicTable]) -> Result<Outcome> {
    if tables.len() < 2 {
        return insufficient(format!("{} table(s); need 2", tables.len()));
    }
    let mut skipped = BTreeMap::new();
    let mut rhos = Vec::new();
    for (i, a) in tables.iter().enumerate() {
        for b in &tables[i + 1..] {
            let shared = mic::shared_markers(&[a, b]);
            if shared.len() < MRC_MIN_SHARED {
                skip(&mut skipped, "pairs_with_fewer_than_3_shared", 1);
                continue;
            }
            let x: Vec<f64> = shared.iter().map(|m| a.mic(m).expect("shared")).collect();
            let y: Vec<f64> = shared.iter().map(|m| b.mic(m).expect("shared")).collect();
            match stats::spearman(&x, &y) {
                Ok(r) => rhos.push(r),
                Err(StatsError::ZeroVariance) => skip(&mut skipped, "pairs_with_zero_variance", 1),
                Err(e) => return Err(e.into()),
            }
        }
    }
    if rhos.is_empty() {
        return insufficient("no dataset pair shares 3 or more markers");
    }
    Ok(Outcome { value: stats::fisher_mean(&rhos)?, std: None, used: rhos.len(), skipped })
}

/// Fewest datasets a per-marker correlation is computed over.
pub const MIN_CORRELATION_DATASETS: usize = 3;

/// Fisher mean over markers of the correlation between a marker's MICs and a
/// per-dataset quantity (accuracy for MAC, CMFG for MCC). Markers must be in
/// every table unless `relaxed_min` allows those present in at least that
/// many tables.
pub fn marker_correlation(
    tables: &[&MicTable],
    per_dataset: &BTreeMap<String, f64>,
    kind: Correlation,
    relaxed_min: Option<usize>,
) -> Result<Outcome> {
    let mut skipped = BTreeMap::new();
    let used_tables: Vec<&MicTable> =
        tables.iter().copied().filter(|t| per_dataset.contains_key(&t.dataset_id)).collect();
    skip(&mut skipped, "datasets_without_value", tables.len() - used_tables.len());
    if used_tables.len() < MIN_CORRELATION_DATASETS {
        return insufficient(format!("{} dataset(s) with a value; need 3", used_tables.len()));
    }
    let markers: BTreeSet<String> = match relaxed_min {
        None => mic::shared_markers(&used_tables),
        Some(m) => {
            let need = m.max(MIN_CORRELATION_DATASETS);
            let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
            for t in &used_tables {
                for k in t.entries.keys() {
                    *counts.entry(k).or_default() += 1;
                }
            }
            counts.into_iter().filter(|(_, c)| *c >= need).map(|(k, _)| k.clone()).collect()
        }
    };
    if markers.is_empty() {
        return insufficient("no marker is shared across the datasets");
    }
    let mut rs = Vec::new();
    for marker in &markers {
        let (x, y): (Vec<f64>, Vec<f64>) = used_tables
            .iter()
            .filter_map(|t| Some((t.mic(marker)?, per_dataset[&t.dataset_id])))
            .unzip();
        match kind.compute(&x, &y) {
            Ok(r) => rs.push(r),
            Err(StatsError::ZeroVariance) => skip(&mut skipped, "markers_with_zero_variance", 1),
            Err(e) => return Err(e.into()),
        }
    }
    if rs.is_empty() {
        return insufficient("every shared marker had a zero-variance vector");
    }
    Ok(Outcome { value: stats::fisher_mean(&rs)?, std: None, used: rs.len(), skipped })
}

pub fn mac(
    tables: &[&MicTable],
    accuracy: &BTreeMap<String, f64>,
    kind: Correlation,
    relaxed_min: Option<usize>,
) -> Result<Outcome> {
    marker_correlation(tables, accuracy, kind, relaxed_min)
}

pub fn mcc(
    tables: &[&MicTable],
    cmfg: &BTreeMap<String, f64>,
    kind: Correlation,
    relaxed_min: Option<usize>,
) -> Result<Outcome> {
    marker_correlation(tables, cmfg, kind, relaxed_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub f: f64,
    pub used: usize,
    pub excluded: usize,
}

/// F = 1 − mean |dec − conf| over sentences carrying both values.
pub fn faithfulness(pairs: &[(Option<f64>, Option<f64>)]) -> Option<Faithfulness> {
    let diffs: Vec<f64> = pairs.iter().filter_map(|(d, c)| Some((d.as_ref()? - c.as_ref()?).abs())).collect();
    let mean = stats::mean(&diffs).ok()?;
    Some(Faithfulness { f: 1.0 - mean, used: diffs.len(), excluded: pairs.len() - diffs.len() })
}

/// Bin of `c` among ten equal-width bins on [0, 1]; bin i holds
/// [i/10, (i+1)/10) and the last bin also holds 1.0.
pub fn cmfg_bin(c: f64) -> usize {
    (1..CMFG_BINS).rev().find(|&i| c >= i as f64 / CMFG_BINS as f64).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmfgItem {
    pub confidence: f64,
    pub f: f64,
    pub punt: bool,
}

/// Mean over occupied confidence bins of the bin's mean F, punts excluded.
pub fn cmfg(items: &[CmfgItem]) -> Result<Outcome> {
    let mut skipped = BTreeMap::new();
    let kept: Vec<&CmfgItem> = items.iter().filter(|i| !i.punt).collect();
    skip(&mut skipped, "punted_responses", items.len() - kept.len());
    if kept.is_empty() {
        return insufficient(if items.is_empty() { "no scored responses" } else { "every response punted" });
    }
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); CMFG_BINS];
    for i in kept {
        bins[cmfg_bin(i.confidence)].push(i.f);
    }
    let means: Vec<f64> = bins.iter().filter(|b| !b.is_empty()).map(|b| stats::mean(b).expect("non-empty")).collect();
    skip(&mut skipped, "empty_bins", CMFG_BINS - means.len());
    Ok(Outcome { value: stats::mean(&means)?, std: None, used: means.len(), skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfEntry {
    pub divergence: f64,
    pub support: usize,
}

/// Per-marker mean |dec − conf| over sentences with both values, keeping
/// markers with at least `threshold` such sentences.
pub fn mf_divergence<'a, I>(items: I, threshold: usize) -> BTreeMap<String, MfEntry>
where
    I: IntoIterator<Item = (&'a str, f64, f64)>,
{
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (marker, dec, conf) in items {
        groups.entry(marker).or_default().push((dec - conf).abs());
    }
    groups
        .into_iter()
        .filter(|(_, v)| v.len() >= threshold.max(1))
        .map(|(m, v)| (m.to_string(), MfEntry { divergence: stats::mean(&v).expect("non-empty"), support: v.len() }))
        .collect()
}

/// Response-level view used for CMFG and report stratification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFaith {
    pub query_id: String,
    pub confidence: Option<f64>,
    pub faithfulness: Option<Faithfulness>,
    pub correct: Option<bool>,
    pub punt: bool,
}

/// Faithfulness and response confidence for every response of one
/// (model, dataset, split), in annotation order.
pub fn response_faithfulness(
    annotated: &AnnotatedCorpus,
    model_id: &str,
    dataset_id: &str,
    split: Split,
    reduction: ResponseConfidence,
) -> Vec<ResponseFaith> {
    let mut by_query: BTreeMap<&str, Vec<&SentenceAnnotation>> = BTreeMap::new();
    for s in annotated.sentences_for(model_id, dataset_id, split) {
        if s.marker_state != MarkerState::MultiDiscarded && s.confidence.is_some() {
            by_query.entry(s.query_id.as_str()).or_default().push(s);
        }
    }
    annotated
        .responses_for(model_id, dataset_id, split)
        .map(|r| {
            let mut sents = by_query.remove(r.query_id.as_str()).unwrap_or_default();
            sents.sort_by_key(|s| s.sent_idx);
            let confs: Vec<f64> = sents.iter().filter_map(|s| s.confidence).collect();
            let pairs: Vec<(Option<f64>, Option<f64>)> = sents.iter().map(|s| (s.decisiveness, s.confidence)).collect();
            ResponseFaith {
                query_id: r.query_id.clone(),
                confidence: reduction.reduce(&confs),
                faithfulness: faithfulness(&pairs),
                correct: r.correct,
                punt: r.punt,
            }
        })
        .collect()
}

/// CMFG of one (model, dataset, split). Responses lacking a confidence or F
/// are left out and counted.
pub fn dataset_cmfg(faith: &[ResponseFaith]) -> Result<Outcome> {
    let items: Vec<CmfgItem> = faith
        .iter()
        .filter_map(|r| Some(CmfgItem { confidence: r.confidence?, f: r.faithfulness?.f, punt: r.punt }))
        .collect();
    let mut out = cmfg(&items)?;
    skip(&mut out.skipped, "responses_without_faithfulness", faith.len() - items.len());
    Ok(out)
}

/// Fraction of judged responses marked correct.
pub fn accuracy(annotated: &AnnotatedCorpus, model_id: &str, dataset_id: &str, split: Split) -> Option<f64> {
    let judged: Vec<bool> = annotated.responses_for(model_id, dataset_id, split).filter_map(|r| r.correct).collect();
    if judged.is_empty() {
        return None;
    }
    Some(judged.iter().filter(|&&c| c).count() as f64 / judged.len() as f64)
}

/// Test sentences of one dataset, grouped by response.
pub fn test_set(annotated: &AnnotatedCorpus, model_id: &str, dataset_id: &str) -> TestSet {
    let mut by_query: BTreeMap<&str, Vec<Scored>> = BTreeMap::new();
    let mut order: Vec<&str> = annotated.responses_for(model_id, dataset_id, Split::Test).map(|r| r.query_id.as_str()).collect();
    for s in annotated.sentences_for(model_id, dataset_id, Split::Test) {
        let (Some(marker), Some(confidence)) = (s.mic_marker(), s.confidence) else { continue };
        let entry = by_query.entry(s.query_id.as_str()).or_insert_with(|| {
            if !order.contains(&s.query_id.as_str()) {
                order.push(s.query_id.as_str());
            }
            Vec::new()
        });
        entry.push(Scored { marker: marker.to_string(), confidence });
    }
    let responses = order.into_iter().map(|q| by_query.remove(q).unwrap_or_default()).collect();
    TestSet { dataset_id: dataset_id.to_string(), responses }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub threshold: usize,
    pub exclude_no_hedge: bool,
    /// Variant reported in the iMAE/cMAE columns of the flat export.
    pub aggregation: Aggregation,
    pub cmae_normalization: CmaeNormalization,
    pub response_confidence: ResponseConfidence,
    /// Relaxed MAC/MCC: markers present in at least this many datasets.
    pub relaxed_min_datasets: Option<usize>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            threshold: mic::DEFAULT_THRESHOLD,
            exclude_no_hedge: false,
            aggregation: Aggregation::Marker,
            cmae_normalization: CmaeNormalization::DirectedPairs,
            response_confidence: ResponseConfidence::Mean,
            relaxed_min_datasets: None,
        }
    }
}

/// A report cell: a value or the reason it is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub used: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub skipped: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl From<Result<Outcome>> for Cell {
    fn from(r: Result<Outcome>) -> Self {
        match r {
            Ok(o) => Cell { value: Some(o.value), std: o.std, used: o.used, skipped: o.skipped, reason: None },
            Err(e) => Cell { value: None, std: None, used: 0, skipped: BTreeMap::new(), reason: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLevel {
    pub dataset_id: String,
    pub has_test: bool,
    pub mic_markers: usize,
    /// Accuracy on the MIC (train) split.
    pub accuracy: Option<f64>,
    /// CMFG on the MIC (train) split.
    pub cmfg: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub threshold: usize,
    pub no_hedge_excluded: bool,
    pub aggregation: Aggregation,
    pub cmae_normalization: CmaeNormalization,
    pub response_confidence: ResponseConfidence,
    pub n_datasets: usize,
    pub shared_markers: usize,
    pub imae: Cell,
    pub imae_sentence: Cell,
    pub imae_response: Cell,
    pub cmae: Cell,
    pub cmae_sentence: Cell,
    pub cmae_response: Cell,
    pub mcv: Cell,
    pub dcv: Cell,
    pub mrc: Cell,
    pub mac: Cell,
    pub mac_spearman: Cell,
    pub mcc: Cell,
    pub mcc_spearman: Cell,
    /// MRC with `<no_hedge>` excluded minus MRC with it kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_mrc: Option<Cell>,
    pub datasets: Vec<DatasetLevel>,
}

impl MetricReport {
    pub fn selected_imae(&self) -> &Cell {
        match self.aggregation {
            Aggregation::Marker => &self.imae,
            Aggregation::Sentence => &self.imae_sentence,
            Aggregation::Response => &self.imae_response,
        }
    }

    pub fn selected_cmae(&self) -> &Cell {
        match self.aggregation {
            Aggregation::Marker => &self.cmae,
            Aggregation::Sentence => &self.cmae_sentence,
            Aggregation::Response => &self.cmae_response,
        }
    }
}

/// Everything the metrics need for one model, derived from annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub model_id: String,
    /// Train-split MIC tables at the chosen threshold, `<no_hedge>` kept.
    pub tables: Vec<MicTable>,
    pub tests: Vec<TestSet>,
    pub accuracy: BTreeMap<String, f64>,
    pub cmfg: BTreeMap<String, Cell>,
}

impl ModelData {
    pub fn from_annotations(annotated: &AnnotatedCorpus, model_id: &str, options: &MetricOptions) -> Result<Self> {
        let datasets = annotated.dataset_ids(model_id);
        let mut tables = Vec::new();
        let mut tests = Vec::new();
        let mut accuracy = BTreeMap::new();
        let mut cmfg = BTreeMap::new();
        for d in datasets {
            let has_train = annotated.responses_for(model_id, d, Split::Train).next().is_some()
                || annotated.sentences_for(model_id, d, Split::Train).next().is_some();
            if has_train {
                tables.push(mic::build_mic_table(
                    model_id,
                    d,
                    Split::Train,
                    annotated.sentences_for(model_id, d, Split::Train),
                    options.threshold,
                )?);
                if let Some(a) = self::accuracy(annotated, model_id, d, Split::Train) {
                    accuracy.insert(d.to_string(), a);
                }
                let faith = response_faithfulness(annotated, model_id, d, Split::Train, options.response_confidence);
                cmfg.insert(d.to_string(), Cell::from(dataset_cmfg(&faith)));
            }
            let has_test = annotated.responses_for(model_id, d, Split::Test).next().is_some()
                || annotated.sentences_for(model_id, d, Split::Test).next().is_some();
            if has_test {
                tests.push(test_set(annotated, model_id, d));
            }
        }
        Ok(Self { model_id: model_id.to_string(), tables, tests, accuracy, cmfg })
    }

    pub fn cmfg_values(&self) -> BTreeMap<String, f64> {
        self.cmfg.iter().filter_map(|(d, c)| Some((d.clone(), c.value?))).collect()
    }
}

/// Compute every metric for one model.
pub fn compute_report(data: &ModelData, options: &MetricOptions) -> MetricReport {
    let tables: Vec<MicTable> = if options.exclude_no_hedge {
        data.tables.iter().map(mic::exclude_no_hedge).collect()
    } else {
        data.tables.clone()
    };
    let refs: Vec<&MicTable> = tables.iter().collect();
    let tests = &data.tests;
    let norm = options.cmae_normalization;
    let cmfg = data.cmfg_values();
    let relaxed = options.relaxed_min_datasets;
    let mrc = Cell::from(mrc(&refs));
    let delta_mrc = options.exclude_no_hedge.then(|| {
        let kept: Vec<&MicTable> = data.tables.iter().collect();
        let base = self::mrc(&kept);
        Cell::from(match (base, mrc.value) {
            (Ok(b), Some(v)) => Ok(Outcome { value: v - b.value, std: None, used: mrc.used, skipped: BTreeMap::new() }),
            (Err(e), _) => Err(e),
            (_, None) => insufficient(mrc.reason.clone().unwrap_or_default()),
        })
    });
    let datasets = data
        .tables
        .iter()
        .map(|t| t.dataset_id.clone())
        .chain(tests.iter().map(|t| t.dataset_id.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|d| DatasetLevel {
            has_test: tests.iter().any(|t| t.dataset_id == d),
            mic_markers: tables.iter().find(|t| t.dataset_id == d).map_or(0, MicTable::len),
            accuracy: data.accuracy.get(&d).copied(),
            cmfg: data.cmfg.get(&d).cloned().unwrap_or_else(|| Cell::from(insufficient::<Outcome>("no train split"))),
            dataset_id: d,
        })
        .collect();
    MetricReport {
        model_id: data.model_id.clone(),
        threshold: options.threshold,
        no_hedge_excluded: options.exclude_no_hedge,
        aggregation: options.aggregation,
        cmae_normalization: norm,
        response_confidence: options.response_confidence,
        n_datasets: tables.len(),
        shared_markers: mic::shared_markers(&refs).len(),
        imae: imae(&tables, tests, Aggregation::Marker).into(),
        imae_sentence: imae(&tables, tests, Aggregation::Sentence).into(),
        imae_response: imae(&tables, tests, Aggregation::Response).into(),
        cmae: cmae(&tables, tests, Aggregation::Marker, norm).into(),
        cmae_sentence: cmae(&tables, tests, Aggregation::Sentence, norm).into(),
        cmae_response: cmae(&tables, tests, Aggregation::Response, norm).into(),
        mcv: mcv(&refs).into(),
        dcv: dcv(&refs).into(),
        mrc,
        mac: mac(&refs, &data.accuracy, Correlation::Pearson, relaxed).into(),
        mac_spearman: mac(&refs, &data.accuracy, Correlation::Spearman, relaxed).into(),
        mcc: mcc(&refs, &cmfg, Correlation::Pearson, relaxed).into(),
        mcc_spearman: mcc(&refs, &cmfg, Correlation::Spearman, relaxed).into(),
        delta_mrc,
        datasets,
    }
}

/// Reports for every model in `annotated`, sorted by model id.
pub fn compute_reports(annotated: &AnnotatedCorpus, options: &MetricOptions) -> Result<Vec<MetricReport>> {
    annotated
        .model_ids()
        .into_iter()
        .map(|m| Ok(compute_report(&ModelData::from_annotations(annotated, m, options)?, options)))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat export, one row per report. Absent
/// cells are empty.
pub fn write_table_csv<W: Write>(reports: &[MetricReport], config_hash: &str, seed: u64, w: W) -> csv::Result<()> {
    let with_delta = reports.iter().any(|r| r.delta_mrc.is_some());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "model_id", "T", "no_hedge_excluded", "aggregation", "iMAE", "iMAE_std", "cMAE", "cMAE_std", "mCV", "dCV",
        "MRC", "MAC", "MCC",
    ];
    if with_delta {
        header.push("dMRC");
    }
    header.extend(["config_hash", "seed"]);
    out.write_record(&header)?;
    for r in reports {
        let agg = serde_json::to_value(r.aggregation).expect("enum serializes");
        let mut row = vec![
            r.model_id.clone(),
            r.threshold.to_string(),
            r.no_hedge_excluded.to_string(),
            agg.as_str().unwrap_or_default().to_string(),
            fmt_opt(r.selected_imae().value),
            fmt_opt(r.selected_imae().std),
            fmt_opt(r.selected_cmae().value),
            fmt_opt(r.selected_cmae().std),
            fmt_opt(r.mcv.value),
            fmt_opt(r.dcv.value),
            fmt_opt(r.mrc.value),
            fmt_opt(r.mac.value),
            fmt_opt(r.mcc.value),
        ];
        if with_delta {
            row.push(fmt_opt(r.delta_mrc.as_ref().and_then(|c| c.value)));
        }
        row.push(config_hash.to_string());
        row.push(seed.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
