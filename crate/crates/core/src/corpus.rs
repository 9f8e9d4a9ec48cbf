//! Query/response corpora and their line-delimited file format.
//!
//! Each line is one JSON object tagged by `kind`: `query`, `response`, or an
//! optional `meta` header. Fields a record does not know about are kept and
//! written back unchanged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Qa,
    QaUnanswerable,
    QaContext,
    MultipleChoice,
    Nli,
    HallucinationDetection,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Qa,
        TaskKind::QaUnanswerable,
        TaskKind::QaContext,
        TaskKind::MultipleChoice,
        TaskKind::Nli,
        TaskKind::HallucinationDetection,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Qa => "qa",
            TaskKind::QaUnanswerable => "qa_unanswerable",
            TaskKind::QaContext => "qa_context",
            TaskKind::MultipleChoice => "multiple_choice",
            TaskKind::Nli => "nli",
            TaskKind::HallucinationDetection => "hallucination_detection",
        }
    }
}

/// Identifies one query across the whole corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryRef {
    pub dataset_id: String,
    pub split: Split,
    pub query_id: String,
}

impl fmt::Display for QueryRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.dataset_id, self.split, self.query_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub dataset_id: String,
    pub split: Split,
    pub query_id: String,
    pub prompt_text: String,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    pub task_kind: TaskKind,
    #[serde(flatten)]
    pub extra: Extra,
}

impl QueryRecord {
    pub fn key(&self) -> QueryRef {
        QueryRef {
            dataset_id: self.dataset_id.clone(),
            split: self.split,
            query_id: self.query_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub query_id: String,
    pub response_text: String,
    pub samples: Vec<String>,
    pub system_prompt_id: String,
    #[serde(default)]
    pub punt: bool,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ResponseRecord {
    pub fn query_ref(&self) -> QueryRef {
        QueryRef {
            dataset_id: self.dataset_id.clone(),
            split: self.split,
            query_id: self.query_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Meta(Extra),
    Query(QueryRecord),
    Response(ResponseRecord),
}

/// Per-dataset split availability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub dataset_id: String,
    pub has_test: bool,
    pub max_examples: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unresolved query reference {reference}")]
    Reference { line: usize, reference: String },
    #[error("line {line}: invalid record {record}: {message}")]
    Validation { line: usize, record: String, message: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub meta: Option<Extra>,
    pub queries: Vec<QueryRecord>,
    pub responses: Vec<ResponseRecord>,
}

impl Corpus {
    pub fn is_empty(&self) -> bool {
        self.queries.is_empty() && self.responses.is_empty()
    }

    /// Sample count shared by every response, if there are any responses.
    pub fn k(&self) -> Option<usize> {
        self.responses.first().map(|r| r.samples.len())
    }

    pub fn query_index(&self) -> HashMap<QueryRef, &QueryRecord> {
        self.queries.iter().map(|q| (q.key(), q)).collect()
    }

    /// Check every record invariant. `expected_k = None` takes K from the
    /// first response. Line numbers in errors count meta, queries, then
    /// responses in storage order.
    pub fn validate(&self, expected_k: Option<usize>) -> Result<()> {
        let offset = usize::from(self.meta.is_some());
        let mut seen = BTreeSet::new();
        for (i, q) in self.queries.iter().enumerate() {
            validate_query(q, &mut seen, offset + i + 1)?;
        }
        let base = offset + self.queries.len();
        let k = expected_k.or_else(|| self.k());
        for (i, r) in self.responses.iter().enumerate() {
            let line = base + i + 1;
            validate_response(r, k, line)?;
            if !seen.contains(&r.query_ref()) {
                return Err(CorpusError::Reference { line, reference: r.query_ref().to_string() });
            }
        }
        Ok(())
    }

    pub fn split_plans(&self, max_examples: usize) -> Vec<SplitPlan> {
        let mut has_test: BTreeMap<&str, bool> = BTreeMap::new();
        for q in &self.queries {
            let entry = has_test.entry(q.dataset_id.as_str()).or_default();
            *entry |= q.split == Split::Test;
        }
        has_test
            .into_iter()
            .map(|(d, t)| SplitPlan { dataset_id: d.to_string(), has_test: t, max_examples })
            .collect()
    }

    /// Keep at most `max_examples` randomly chosen queries per (dataset, split),
    /// along with their responses. The seed is recorded in `meta`.
    pub fn subsample(&self, max_examples: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups: BTreeMap<(&str, Split), Vec<usize>> = BTreeMap::new();
        for (i, q) in self.queries.iter().enumerate() {
            groups.entry((q.dataset_id.as_str(), q.split)).or_default().push(i);
        }
        let mut keep = BTreeSet::new();
        for idx in groups.values() {
            if idx.len() <= max_examples {
                keep.extend(idx.iter().copied());
            } else {
                keep.extend(idx.choose_multiple(&mut rng, max_examples).copied());
            }
        }
        let queries: Vec<QueryRecord> =
            keep.iter().map(|&i| self.queries[i].clone()).collect();
        let kept: BTreeSet<QueryRef> = queries.iter().map(QueryRecord::key).collect();
        let responses = self
            .responses
            .iter()
            .filter(|r| kept.contains(&r.query_ref()))
            .cloned()
            .collect();
        let mut meta = self.meta.clone().unwrap_or_default();
        meta.insert("sampling_seed".into(), Value::from(seed));
        meta.insert("max_examples".into(), Value::from(max_examples));
        Corpus { meta: Some(meta), queries, responses }
    }
}

fn validate_query(q: &QueryRecord, seen: &mut BTreeSet<QueryRef>, line: usize) -> Result<()> {
    let invalid = |message: &str| CorpusError::Validation {
        line,
        record: q.key().to_string(),
        message: message.to_string(),
    };
    if q.prompt_text.trim().is_empty() {
        return Err(invalid("prompt_text is empty"));
    }
    if q.query_id.is_empty() || q.dataset_id.is_empty() {
        return Err(invalid("empty identifier"));
    }
    if !seen.insert(q.key()) {
        return Err(invalid("duplicate query_id within dataset split"));
    }
    Ok(())
}

fn validate_response(r: &ResponseRecord, k: Option<usize>, line: usize) -> Result<()> {
    let invalid = |message: String| CorpusError::Validation {
        line,
        record: format!("{}@{}", r.model_id, r.query_ref()),
        message,
    };
    if r.response_text.trim().is_empty() {
        return Err(invalid("response_text is empty".into()));
    }
    if let Some(k) = k {
        if r.samples.len() != k {
            return Err(invalid(format!("expected {k} samples, found {}", r.samples.len())));
        }
    }
    if r.samples.is_empty() {
        return Err(invalid("samples list is empty".into()));
    }
    Ok(())
}

/// Parse records from a reader without validating cross references.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<(usize, Record)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        out.push((line_no, record));
    }
    Ok(out)
}

/// Read and validate a corpus. `expected_k = None` infers K from the data.
pub fn read_corpus<R: Read>(reader: R, expected_k: Option<usize>) -> Result<Corpus> {
    let records = read_records(reader)?;
    let mut corpus = Corpus::default();
    let mut lines = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, record) in records {
        match record {
            Record::Meta(m) => corpus.meta = Some(m),
            Record::Query(q) => {
                validate_query(&q, &mut seen, line)?;
                corpus.queries.push(q);
            }
            Record::Response(r) => {
                lines.push(line);
                corpus.responses.push(r);
            }
        }
    }
    let k = expected_k.or_else(|| corpus.k());
    for (r, &line) in corpus.responses.iter().zip(&lines) {
        validate_response(r, k, line)?;
        if !seen.contains(&r.query_ref()) {
            return Err(CorpusError::Reference { line, reference: r.query_ref().to_string() });
        }
    }
    Ok(corpus)
}

pub fn load_corpus(path: impl AsRef<Path>, expected_k: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    read_corpus(file, expected_k)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> std::io::Result<()> {
    if let Some(meta) = &corpus.meta {
        write_line(&mut writer, &Record::Meta(meta.clone()))?;
    }
    // A record deserialized on its own keeps "kind" in `extra`; the tag is
    // written by the enum.
    for q in &corpus.queries {
        let mut q = q.clone();
        q.extra.remove("kind");
        write_line(&mut writer, &Record::Query(q))?;
    }
    for r in &corpus.responses {
        let mut r = r.clone();
        r.extra.remove("kind");
        write_line(&mut writer, &Record::Response(r))?;
    }
    writer.flush()
}

fn write_line<W: Write>(writer: &mut W, record: &Record) -> std::io::Result<()> {
    serde_json::to_writer(&mut *writer, record)?;
    writer.write_all(b"\n")
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(corpus, BufWriter::new(file)).map_err(io_err)
}
