//! Plot-ready tables: KDE curves of MICs, MICs stratified by correctness
//! and by faithfulness, marker MIC vs MF divergence, and MIC heatmaps.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotatedCorpus, SentenceAnnotation};
use crate::corpus::Split;
use crate::metrics::{self, ModelData, ResponseConfidence, FAITHFUL_THRESHOLD};
use crate::mic::{self, MicError, MicTable};
use crate::stats;

/// Header plus string rows; every export goes through this shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Write as CSV with `config_hash` and `seed` columns appended.
    pub fn write_csv<W: Write>(&self, config_hash: &str, seed: u64, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = self.header.clone();
        header.extend(["config_hash".to_string(), "seed".to_string()]);
        out.write_record(&header)?;
        let seed = seed.to_string();
        for row in &self.rows {
            out.write_record(row.iter().map(String::as_str).chain([config_hash, seed.as_str()]))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Gaussian KDE of each table's MICs on 256 points over [0, 1].
/// Columns: model_id, dataset_id, x, density.
pub fn kde_table(tables: &[MicTable]) -> Table {
    let mut t = Table::new(&["model_id", "dataset_id", "x", "density"]);
    let grid = stats::linspace(0.0, 1.0, stats::KDE_GRID_POINTS);
    for table in tables.iter().filter(|t| !t.is_empty()) {
        let density = stats::kde(&table.mics(), &grid, None).expect("MICs are finite and non-empty");
        for (x, y) in grid.iter().zip(density) {
            t.push(vec![table.model_id.clone(), table.dataset_id.clone(), num(*x), num(y)]);
        }
    }
    t
}

/// Local maxima of one (model, dataset) curve in a KDE table.
pub fn kde_maxima(kde: &Table, model_id: &str, dataset_id: &str) -> Vec<f64> {
    let rows: Vec<&Vec<String>> =
        kde.rows.iter().filter(|r| r[0] == model_id && r[1] == dataset_id).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap_or(0.0)).collect();
    stats::local_maxima(&ys).into_iter().map(|i| rows[i][2].parse().unwrap_or(0.0)).collect()
}

/// MIC tables built from the train sentences whose response falls in a
/// stratum. Columns: model_id, dataset_id, marker, mic, support, std.
pub fn stratum_table<'a, I>(model_id: &str, groups: I, threshold: usize) -> Result<Table, MicError>
where
    I: IntoIterator<Item = (&'a str, Vec<&'a SentenceAnnotation>)>,
{
    let mut t = Table::new(&["model_id", "dataset_id", "marker", "mic", "support", "std"]);
    for (dataset_id, sentences) in groups {
        let table = mic::build_mic_table(model_id, dataset_id, Split::Train, sentences, threshold)?;
        for e in table.entries.values() {
            t.push(vec![
                model_id.to_string(),
                dataset_id.to_string(),
                e.marker.clone(),
                num(e.mic),
                e.support.to_string(),
                num(e.std),
            ]);
        }
    }
    Ok(t)
}

/// Per-marker MIC against MF divergence. Columns: model_id, dataset_id,
/// marker, mic, mf, support.
pub fn mf_table(annotated: &AnnotatedCorpus, tables: &[MicTable], threshold: usize) -> Table {
    let mut t = Table::new(&["model_id", "dataset_id", "marker", "mic", "mf", "support"]);
    for table in tables {
        let items = annotated
            .sentences_for(&table.model_id, &table.dataset_id, Split::Train)
            .filter_map(|s| Some((s.mic_marker()?, s.decisiveness?, s.confidence?)));
        for (marker, mf) in metrics::mf_divergence(items, threshold) {
            let Some(entry) = table.entries.get(&marker) else { continue };
            t.push(vec![
                table.model_id.clone(),
                table.dataset_id.clone(),
                marker,
                num(entry.mic),
                num(mf.divergence),
                mf.support.to_string(),
            ]);
        }
    }
    t
}

/// Wide marker-by-dataset matrix for one model: marker, then `<ds>` and
/// `<ds>_std` per dataset. Missing cells are empty.
pub fn heatmap_table(model_id: &str, tables: &[&MicTable]) -> Table {
    let datasets: Vec<&str> = tables.iter().map(|t| t.dataset_id.as_str()).collect();
    let mut header = vec!["model_id".to_string(), "marker".to_string()];
    for d in &datasets {
        header.push(d.to_string());
        header.push(format!("{d}_std"));
    }
    let markers: BTreeSet<&String> = tables.iter().flat_map(|t| t.entries.keys()).collect();
    let mut t = Table { header, rows: Vec::new() };
    for m in markers {
        let mut row = vec![model_id.to_string(), m.clone()];
        for table in tables {
            let e = table.entries.get(m);
            row.push(opt(e.map(|e| e.mic)));
            row.push(opt(e.map(|e| e.std)));
        }
        t.rows.push(row);
    }
    t
}

/// Per-dataset accuracy, CMFG and table size for one model.
pub fn dataset_level_table(data: &[ModelData], reports: &[metrics::MetricReport]) -> Table {
    let mut t = Table::new(&["model_id", "dataset_id", "has_test", "mic_markers", "accuracy", "cmfg"]);
    for (d, r) in data.iter().zip(reports) {
        for level in &r.datasets {
            t.push(vec![
                d.model_id.clone(),
                level.dataset_id.clone(),
                level.has_test.to_string(),
                level.mic_markers.to_string(),
                opt(level.accuracy),
                opt(level.cmfg.value),
            ]);
        }
    }
    t
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportData {
    #[serde(skip)]
    pub files: BTreeMap<String, Table>,
    /// File name → reason it was not produced.
    pub skipped: BTreeMap<String, String>,
}

pub const KDE_FILE: &str = "kde.csv";
pub const VIOLIN_CORRECT_FILE: &str = "violin_correct.csv";
pub const VIOLIN_INCORRECT_FILE: &str = "violin_incorrect.csv";
pub const VIOLIN_FAITHFUL_FILE: &str = "violin_faithful.csv";
pub const VIOLIN_UNFAITHFUL_FILE: &str = "violin_unfaithful.csv";
pub const MF_FILE: &str = "mf_scatter.csv";
pub const HEATMAP_FILE: &str = "mic_heatmap.csv";
pub const DATASET_LEVELS_FILE: &str = "dataset_levels.csv";

fn append(into: &mut Table, from: Table) {
    if into.header.is_empty() {
        *into = from;
    } else {
        into.rows.extend(from.rows);
    }
}

/// All report tables for every model in `annotated`.
pub fn build_report(
    annotated: &AnnotatedCorpus,
    options: &metrics::MetricOptions,
) -> Result<ReportData, metrics::MetricError> {
    let threshold = options.threshold;
    let mut out = ReportData::default();
    let mut data = Vec::new();
    let mut reports = Vec::new();
    for model in annotated.model_ids() {
        let d = ModelData::from_annotations(annotated, model, options)?;
        reports.push(metrics::compute_report(&d, options));
        data.push(d);
    }
    let all_tables: Vec<MicTable> = data.iter().flat_map(|d| d.tables.iter().cloned()).collect();
    out.files.insert(KDE_FILE.into(), kde_table(&all_tables));

    let mut correct = Table::new(&[]);
    let mut incorrect = Table::new(&[]);
    let mut faithful = Table::new(&[]);
    let mut unfaithful = Table::new(&[]);
    let mut heatmap = Table::new(&[]);
    let has_decisiveness = annotated.sentences.iter().any(|s| s.decisiveness.is_some());
    for d in &data {
        let model = d.model_id.as_str();
        let datasets: Vec<&str> = d.tables.iter().map(|t| t.dataset_id.as_str()).collect();
        let by_correct = |want: bool| {
            datasets.iter().map(move |ds| {
                let sents: Vec<&SentenceAnnotation> = annotated
                    .sentences_for(model, ds, Split::Train)
                    .filter(|s| s.correct == Some(want))
                    .collect();
                (*ds, sents)
            })
        };
        append(&mut correct, stratum_table(model, by_correct(true), threshold)?);
        append(&mut incorrect, stratum_table(model, by_correct(false), threshold)?);

        if has_decisiveness {
            let mut faith_by_dataset: BTreeMap<&str, BTreeMap<String, bool>> = BTreeMap::new();
            for ds in &datasets {
                let faith =
                    metrics::response_faithfulness(annotated, model, ds, Split::Train, ResponseConfidence::Mean);
                faith_by_dataset.insert(
                    ds,
                    faith
                        .into_iter()
                        .filter_map(|r| Some((r.query_id, r.faithfulness?.f >= FAITHFUL_THRESHOLD)))
                        .collect(),
                );
            }
            let by_faith = |want: bool| {
                let faith_by_dataset = &faith_by_dataset;
                datasets.iter().map(move |ds| {
                    let flags = &faith_by_dataset[ds];
                    let sents: Vec<&SentenceAnnotation> = annotated
                        .sentences_for(model, ds, Split::Train)
                        .filter(|s| flags.get(&s.query_id) == Some(&want))
                        .collect();
                    (*ds, sents)
                })
            };
            append(&mut faithful, stratum_table(model, by_faith(true), threshold)?);
            append(&mut unfaithful, stratum_table(model, by_faith(false), threshold)?);
        }
        let refs: Vec<&MicTable> = d.tables.iter().collect();
        let h = heatmap_table(model, &refs);
        if heatmap.header.is_empty() || heatmap.header == h.header {
            append(&mut heatmap, h);
        } else {
            // Models with different dataset sets get their own header block
            // widened to the union of columns.
            heatmap = merge_wide(heatmap, h);
        }
    }
    let empty_stratum = || Table::new(&["model_id", "dataset_id", "marker", "mic", "support", "std"]);
    let or_empty = |t: Table| if t.header.is_empty() { empty_stratum() } else { t };
    out.files.insert(VIOLIN_CORRECT_FILE.into(), or_empty(correct));
    out.files.insert(VIOLIN_INCORRECT_FILE.into(), or_empty(incorrect));
    if has_decisiveness {
        out.files.insert(VIOLIN_FAITHFUL_FILE.into(), or_empty(faithful));
        out.files.insert(VIOLIN_UNFAITHFUL_FILE.into(), or_empty(unfaithful));
        out.files.insert(MF_FILE.into(), mf_table(annotated, &all_tables, threshold));
    } else {
        for f in [VIOLIN_FAITHFUL_FILE, VIOLIN_UNFAITHFUL_FILE, MF_FILE] {
            out.skipped.insert(f.into(), "annotations carry no decisiveness scores".into());
        }
    }
    out.files.insert(
        HEATMAP_FILE.into(),
        if heatmap.header.is_empty() { Table::new(&["model_id", "marker"]) } else { heatmap },
    );
    out.files.insert(DATASET_LEVELS_FILE.into(), dataset_level_table(&data, &reports));
    Ok(out)
}

/// Union of two wide tables keyed by header name; missing cells are empty.
fn merge_wide(a: Table, b: Table) -> Table {
    let mut header = a.header.clone();
    for h in &b.header {
        if !header.contains(h) {
            header.push(h.clone());
        }
    }
    let mut out = Table { header: header.clone(), rows: Vec::new() };
    for t in [a, b] {
        for row in t.rows {
            let mut full = vec![String::new(); header.len()];
            for (h, v) in t.header.iter().zip(row) {
                let i = header.iter().position(|x| x == h).expect("union");
                full[i] = v;
            }
            out.rows.push(full);
        }
    }
    out
}
