//! The `generate → annotate → mic → metrics → report` stages. Each stage
//! reads the previous stage's files from the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{self, AnnotateError, AnnotatedCorpus};
use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::corpus::{self, Corpus, CorpusError, Extra, QueryRecord, QueryRef, Record, ResponseRecord, TaskKind};
use crate::judge::{
    template, Backend, CompletionRequest, DecodeParams, HttpBackend, Judge, JudgeCache, MockBackend, MockTaskModel,
    Purpose, RetryPolicy, TemplateError, Templates,
};
use crate::metrics::{self, MetricReport};
use crate::mic;
use crate::report;
use crate::segmenter::RuleSegmenter;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const GENERATE_PARTIAL_FILE: &str = "generate_partial.jsonl";
pub const GENERATE_MANIFEST_FILE: &str = "generate_manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const DIAGNOSTICS_FILE: &str = "annotate_diagnostics.json";
pub const MIC_JSONL_FILE: &str = "mic_tables.jsonl";
pub const MIC_CSV_FILE: &str = "mic_tables.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const REPORT_DIR: &str = "report";
pub const REPORT_MANIFEST_FILE: &str = "report_manifest.json";
pub const CACHE_DIR: &str = "cache";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    /// 1 usage/config, 2 data/validation, 3 backend; I/O counts as data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::Io { .. } => 2,
            PipelineError::Backend(_) => 3,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TemplateError> for PipelineError {
    fn from(e: TemplateError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PipelineError::Data(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

/// Meta header shared by every output.
pub fn meta(config: &RunConfig, stage: &str) -> Extra {
    let mut m = Extra::new();
    m.insert("tool".into(), json!("markerconf"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("stage".into(), json!(stage));
    m.insert("config_hash".into(), json!(config.hash()));
    m.insert("seed".into(), json!(config.seed));
    m
}

fn thread_pool(config: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| PipelineError::Data(format!("thread pool: {e}")))
}

fn templates(config: &RunConfig) -> Result<Templates> {
    Ok(match &config.templates_dir {
        Some(dir) => Templates::with_overrides(dir)?,
        None => Templates::default(),
    })
}

fn http_backend(base_url: &Option<String>, token_env: &str, timeout_secs: u64, what: &str) -> Result<HttpBackend> {
    let url = base_url
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid(format!("{what} backend is http but base_url is not set")))?;
    Ok(HttpBackend::from_env(url.clone(), token_env, Duration::from_secs(timeout_secs)))
}

/// Judge client for `config`, caching under `<out>/cache`.
pub fn build_judge(config: &RunConfig) -> Result<Judge> {
    let j = &config.judge;
    let backend: Arc<dyn Backend> = match j.backend {
        BackendKind::Mock => Arc::new(MockBackend::rules()),
        BackendKind::Http => Arc::new(http_backend(&j.base_url, &j.token_env, j.timeout_secs, "judge")?),
    };
    let cache_dir = config.out.join(CACHE_DIR);
    let cache = JudgeCache::open(&cache_dir).map_err(io_err(&cache_dir))?;
    Ok(Judge::new(backend, j.model.clone())
        .with_cache(Arc::new(cache))
        .with_retry(RetryPolicy { attempts: j.retries.max(1), base_delay_ms: j.backoff_ms })
        .with_templates(templates(config)?))
}

/// Merge the records of several corpus files.
pub fn read_inputs(paths: &[PathBuf]) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for path in paths {
        let file = File::open(path).map_err(io_err(path))?;
        let records = corpus::read_records(file).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        for (_, record) in records {
            match record {
                Record::Meta(m) => {
                    corpus.meta.get_or_insert(m);
                }
                Record::Query(q) => corpus.queries.push(q),
                Record::Response(r) => corpus.responses.push(r),
            }
        }
    }
    Ok(corpus)
}

fn query_seed(seed: u64, q: &QueryRef) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(q.to_string().as_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Task prompt for a query. Extra string fields of the record fill template
/// placeholders; multiple-choice options come from the `choices` list and
/// are shuffled under the run seed. Returns the prompt and the shuffled
/// option order, if any.
pub fn task_prompt(templates: &Templates, q: &QueryRecord, seed: u64) -> Result<(String, Option<Vec<usize>>)> {
    let mut fields: BTreeMap<String, String> = q
        .extra
        .iter()
        .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
        .collect();
    fields.insert("question".into(), q.prompt_text.clone());
    let mut order = None;
    if q.task_kind == TaskKind::MultipleChoice {
        let choices: Vec<String> = q
            .extra
            .get("choices")
            .and_then(Value::as_array)
            .map(|a| a.iter().map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())).collect())
            .ok_or_else(|| PipelineError::Data(format!("{}: multiple_choice query has no choices list", q.key())))?;
        let mut idx: Vec<usize> = (0..choices.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(query_seed(seed, &q.key())));
        let list = idx
            .iter()
            .enumerate()
            .map(|(i, &c)| format!("({}) {}", (b'A' + (i % 26) as u8) as char, choices[c]))
            .collect::<Vec<_>>()
            .join(" ");
        fields.insert("choices_list".into(), list);
        order = Some(idx);
    }
    let prompt = templates.render(&template::task_template_id(q.task_kind), &fields)?;
    Ok((prompt, order))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateManifest {
    pub config_hash: String,
    pub seed: u64,
    pub model_id: String,
    pub k: usize,
    pub total: usize,
    pub completed: usize,
    pub complete: bool,
    /// Query refs that failed in the last run, with the error.
    pub failed: BTreeMap<String, String>,
}

/// Generate one primary response plus K samples per query, resuming from
/// any partial output left by an earlier run with the same config.
pub fn cmd_generate(config: &RunConfig) -> Result<GenerateManifest> {
    let k = config.k.unwrap_or(crate::config::DEFAULT_K);
    if k == 0 {
        return Err(ConfigError::Invalid("k must be at least 1".into()).into());
    }
    let inputs = read_inputs(&config.corpus)?;
    let queries = Corpus { meta: inputs.meta.clone(), queries: inputs.queries, responses: Vec::new() };
    queries.validate(None)?;
    let queries = queries.subsample(config.max_examples, config.seed);
    if queries.queries.is_empty() {
        log::warn!("no query records in the configured corpus files");
    }
    let g = &config.generation;
    let backend: Arc<dyn Backend> = match g.backend {
        BackendKind::Mock => Arc::new(MockTaskModel { seed: config.seed }),
        BackendKind::Http => Arc::new(http_backend(&g.base_url, &g.token_env, g.timeout_secs, "generation")?),
    };
    let retry = RetryPolicy { attempts: g.retries.max(1), base_delay_ms: g.backoff_ms };
    let templates = templates(config)?;
    let system = templates.get(&template::system_template_id(&config.system_prompt_id))?.to_string();
    let decode = DecodeParams { temperature: g.temperature, max_output_tokens: g.max_output_tokens, stop_sequences: vec![] };
    let hash = config.hash();

    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    let partial_path = config.out.join(GENERATE_PARTIAL_FILE);
    let mut done: BTreeMap<QueryRef, ResponseRecord> = BTreeMap::new();
    let corpus_path = config.out.join(CORPUS_FILE);
    if corpus_path.exists() {
        let previous = read_inputs(std::slice::from_ref(&corpus_path))?;
        let same_run = previous.meta.as_ref().and_then(|m| m.get("config_hash")).and_then(Value::as_str)
            == Some(hash.as_str());
        if same_run {
            done.extend(previous.responses.into_iter().map(|r| (r.query_ref(), r)));
        }
    }
    if partial_path.exists() {
        let file = File::open(&partial_path).map_err(io_err(&partial_path))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(&partial_path))?;
            let Ok(entry) = serde_json::from_str::<PartialLine>(&line) else { continue };
            if entry.config_hash == hash {
                done.insert(entry.response.query_ref(), entry.response);
            }
        }
        log::info!("resuming generation: {} responses already present", done.len());
    }
    let prompts: Vec<(&QueryRecord, String, Option<Vec<usize>>)> = queries
        .queries
        .iter()
        .map(|q| task_prompt(&templates, q, config.seed).map(|(p, o)| (q, p, o)))
        .collect::<Result<_>>()?;

    let partial = Mutex::new(
        OpenOptions::new().create(true).append(true).open(&partial_path).map_err(io_err(&partial_path))?,
    );
    let pool = thread_pool(config)?;
    let fresh: Vec<(QueryRef, std::result::Result<ResponseRecord, String>)> = pool.install(|| {
        prompts
            .par_iter()
            .filter(|(q, _, _)| !done.contains_key(&q.key()))
            .map(|(q, prompt, order)| {
                let texts: std::result::Result<Vec<String>, String> = (0..=k)
                    .map(|sample| {
                        let request = CompletionRequest {
                            model: g.model.clone(),
                            system: Some(system.clone()),
                            prompt: prompt.clone(),
                            decode: decode.clone(),
                            purpose: Purpose::Generate { sample },
                            fields: BTreeMap::new(),
                        };
                        retry.run(backend.as_ref(), &request).map_err(|(e, n)| format!("after {n} attempt(s): {e}"))
                    })
                    .collect();
                let result = texts.and_then(|mut texts| {
                    let primary = texts.remove(0);
                    if primary.trim().is_empty() {
                        return Err("empty primary response".to_string());
                    }
                    let mut extra = Extra::new();
                    extra.insert("temperature".into(), json!(g.temperature));
                    extra.insert("max_output_tokens".into(), json!(g.max_output_tokens));
                    if let Some(order) = order {
                        extra.insert("choice_order".into(), json!(order));
                    }
                    let r = ResponseRecord {
                        model_id: g.model.clone(),
                        dataset_id: q.dataset_id.clone(),
                        split: q.split,
                        query_id: q.query_id.clone(),
                        response_text: primary,
                        samples: texts,
                        system_prompt_id: config.system_prompt_id.clone(),
                        punt: false,
                        extra,
                    };
                    let line = serde_json::to_string(&PartialLine { config_hash: hash.clone(), response: r.clone() })
                        .expect("record serializes");
                    let mut f = partial.lock().expect("partial file lock");
                    writeln!(f, "{line}").map_err(|e| format!("writing partial output: {e}"))?;
                    Ok(r)
                });
                (q.key(), result)
            })
            .collect()
    });

    let mut failed = BTreeMap::new();
    for (key, result) in fresh {
        match result {
            Ok(r) => {
                done.insert(key, r);
            }
            Err(e) => {
                log::error!("generation failed for {key}: {e}");
                failed.insert(key.to_string(), e);
            }
        }
    }
    let manifest = GenerateManifest {
        config_hash: hash,
        seed: config.seed,
        model_id: g.model.clone(),
        k,
        total: queries.queries.len(),
        completed: done.len(),
        complete: failed.is_empty(),
        failed,
    };
    write_json(&config.out.join(GENERATE_MANIFEST_FILE), &manifest)?;
    if !manifest.complete {
        return Err(PipelineError::Backend(format!(
            "{} of {} queries failed; rerun to resume",
            manifest.failed.len(),
            manifest.total
        )));
    }
    let mut m = meta(config, "generate");
    m.extend(queries.meta.clone().unwrap_or_default());
    m.insert("k".into(), json!(k));
    m.insert("model_id".into(), json!(g.model));
    m.insert("system_prompt_id".into(), json!(config.system_prompt_id));
    m.insert("temperature".into(), json!(g.temperature));
    m.insert("max_output_tokens".into(), json!(g.max_output_tokens));
    let responses = queries.queries.iter().filter_map(|q| done.remove(&q.key())).collect();
    let out = Corpus { meta: Some(m), queries: queries.queries, responses };
    corpus::save_corpus(&out, &corpus_path)?;
    drop(partial);
    fs::remove_file(&partial_path).map_err(io_err(&partial_path))?;
    Ok(manifest)
}

#[derive(Serialize, Deserialize)]
struct PartialLine {
    config_hash: String,
    response: ResponseRecord,
}

/// Corpus for annotation: `<out>/corpus.jsonl` when present, otherwise
/// the configured corpus files.
pub fn annotation_input(config: &RunConfig) -> Result<Corpus> {
    let generated = config.out.join(CORPUS_FILE);
    let corpus = if generated.exists() {
        read_inputs(&[generated])?
    } else {
        read_inputs(&config.corpus)?
    };
    corpus.validate(config.k)?;
    Ok(corpus.subsample(config.max_examples, config.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub config_hash: String,
    pub seed: u64,
    pub hedges_per_sentence_mean: f64,
    pub hedges_per_sentence_std: f64,
    #[serde(flatten)]
    pub diagnostics: annotate::Diagnostics,
}

fn write_diagnostics(config: &RunConfig, annotated: &AnnotatedCorpus) -> Result<()> {
    let counts: Vec<usize> = annotated.sentences.iter().map(|s| s.n_markers).collect();
    let (mean, std) = annotate::hedges_per_sentence(&counts);
    let file = DiagnosticsFile {
        config_hash: config.hash(),
        seed: config.seed,
        hedges_per_sentence_mean: mean,
        hedges_per_sentence_std: std,
        diagnostics: annotated.diagnostics.clone(),
    };
    write_json(&config.out.join(DIAGNOSTICS_FILE), &file)
}

pub fn cmd_annotate(config: &RunConfig) -> Result<annotate::Diagnostics> {
    let corpus = annotation_input(config)?;
    if corpus.responses.is_empty() {
        log::warn!("corpus has no responses; writing an empty annotation file");
    }
    let judge = build_judge(config)?;
    let segmenter = RuleSegmenter::default();
    let options = config.annotate_options();
    let pool = thread_pool(config)?;
    let result = pool.install(|| annotate::annotate_corpus(&corpus, &judge, &segmenter, &options));
    let annotated = match result {
        Ok(a) => a,
        Err(AnnotateError::FailureCeiling { rate, ceiling, partial }) => {
            write_diagnostics(config, &partial)?;
            return Err(PipelineError::Backend(format!(
                "judge failure rate {rate:.4} exceeds ceiling {ceiling}; see {}",
                config.out.join(DIAGNOSTICS_FILE).display()
            )));
        }
        Err(e) => return Err(PipelineError::Data(e.to_string())),
    };
    let path = config.out.join(ANNOTATIONS_FILE);
    let mut m = meta(config, "annotate");
    m.insert("judge_model".into(), json!(judge.model_id()));
    let mut w = create(&path)?;
    annotate::write_annotations(&annotated, &m, &mut w).map_err(io_err(&path))?;
    write_diagnostics(config, &annotated)?;
    Ok(annotated.diagnostics)
}

pub fn load_annotations(config: &RunConfig) -> Result<AnnotatedCorpus> {
    let path = config.out.join(ANNOTATIONS_FILE);
    if !path.exists() {
        return Err(PipelineError::Data(format!("{} not found; run annotate first", path.display())));
    }
    let (_, annotated) = annotate::load_annotations(&path).map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(annotated)
}

/// MIC tables (train split) for every threshold in the run.
pub fn cmd_mic(config: &RunConfig) -> Result<Vec<mic::MicTable>> {
    let annotated = load_annotations(config)?;
    let mut tables = Vec::new();
    for t in config.thresholds() {
        tables.extend(
            mic::build_tables(&annotated, corpus::Split::Train, t).map_err(|e| PipelineError::Data(e.to_string()))?,
        );
    }
    let m = meta(config, "mic");
    let path = config.out.join(MIC_JSONL_FILE);
    let mut w = create(&path)?;
    mic::write_jsonl(&tables, Some(&m), &mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
    let path = config.out.join(MIC_CSV_FILE);
    mic::write_csv(&tables, &config.hash(), config.seed, create(&path)?)
        .map_err(|e| PipelineError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub meta: Extra,
    pub reports: Vec<MetricReport>,
}

/// One report per (model, threshold).
pub fn cmd_metrics(config: &RunConfig) -> Result<Vec<MetricReport>> {
    let annotated = load_annotations(config)?;
    let mut reports = Vec::new();
    for t in config.thresholds() {
        let r = metrics::compute_reports(&annotated, &config.metric_options(t))
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        reports.extend(r);
    }
    for r in &reports {
        for (name, cell) in [("iMAE", r.selected_imae()), ("cMAE", r.selected_cmae()), ("MRC", &r.mrc)] {
            if let Some(reason) = &cell.reason {
                log::warn!("{} T={}: {name} absent: {reason}", r.model_id, r.threshold);
            }
        }
    }
    write_json(
        &config.out.join(METRICS_JSON_FILE),
        &MetricsFile { meta: meta(config, "metrics"), reports: reports.clone() },
    )?;
    let path = config.out.join(METRICS_CSV_FILE);
    metrics::write_table_csv(&reports, &config.hash(), config.seed, create(&path)?)
        .map_err(|e| PipelineError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub config_hash: String,
    pub seed: u64,
    pub threshold: usize,
    pub files: Vec<String>,
    pub skipped: BTreeMap<String, String>,
}

pub fn cmd_report(config: &RunConfig) -> Result<ReportManifest> {
    let annotated = load_annotations(config)?;
    let data = report::build_report(&annotated, &config.metric_options(config.threshold))
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let dir = config.out.join(REPORT_DIR);
    let hash = config.hash();
    for (name, table) in &data.files {
        let path = dir.join(name);
        table
            .write_csv(&hash, config.seed, create(&path)?)
            .map_err(|e| PipelineError::Io { path: path.display().to_string(), message: e.to_string() })?;
    }
    for (name, reason) in &data.skipped {
        log::warn!("{name} skipped: {reason}");
    }
    let manifest = ReportManifest {
        config_hash: hash,
        seed: config.seed,
        threshold: config.threshold,
        files: data.files.keys().cloned().collect(),
        skipped: data.skipped,
    };
    write_json(&dir.join(REPORT_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Output files written by the stages, relative to the output directory
/// (the judge cache is not listed).
pub fn output_files(out: &Path) -> BTreeSet<PathBuf> {
    fn walk(dir: &Path, root: &Path, acc: &mut BTreeSet<PathBuf>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            let rel = p.strip_prefix(root).expect("under root").to_path_buf();
            if rel.starts_with(CACHE_DIR) {
                continue;
            }
            if p.is_dir() {
                walk(&p, root, acc);
            } else {
                acc.insert(rel);
            }
        }
    }
    let mut acc = BTreeSet::new();
    walk(out, out, &mut acc);
    acc
}
