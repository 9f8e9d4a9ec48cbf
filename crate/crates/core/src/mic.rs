//! Marker internal confidence (MIC) tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotatedCorpus, SentenceAnnotation, NO_HEDGE};
use crate::corpus::{Extra, Split};

pub const DEFAULT_THRESHOLD: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicEntry {
    pub marker: String,
    pub mic: f64,
    pub support: usize,
    /// Population std of the contributing confidences.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicTable {
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub threshold: usize,
    pub entries: BTreeMap<String, MicEntry>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MicError {
    #[error("threshold must be at least 1")]
    ZeroThreshold,
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("MIC file line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl MicTable {
    pub fn empty(model_id: &str, dataset_id: &str, split: Split, threshold: usize) -> Self {
        Self {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            split,
            threshold,
            entries: BTreeMap::new(),
        }
    }

    /// Build from (marker, confidence) observations.
    pub fn from_observations<'a, I>(
        model_id: &str,
        dataset_id: &str,
        split: Split,
        threshold: usize,
        observations: I,
    ) -> Result<Self, MicError>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        if threshold == 0 {
            return Err(MicError::ZeroThreshold);
        }
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (marker, c) in observations {
            if !(0.0..=1.0).contains(&c) {
                return Err(MicError::BadConfidence(c));
            }
            groups.entry(marker).or_default().push(c);
        }
        let mut table = Self::empty(model_id, dataset_id, split, threshold);
        if groups.is_empty() {
            log::warn!("no annotations for {model_id}/{dataset_id}/{split}; MIC table is empty");
        }
        for (marker, values) in groups {
            if values.len() < threshold {
                continue;
            }
            let mic = crate::stats::mean(&values).expect("non-empty");
            let std = crate::stats::population_std(&values).expect("non-empty");
            table.entries.insert(
                marker.to_string(),
                MicEntry { marker: marker.to_string(), mic, support: values.len(), std },
            );
        }
        Ok(table)
    }

    pub fn contains(&self, marker: &str) -> bool {
        self.entries.contains_key(marker)
    }

    pub fn mic(&self, marker: &str) -> Option<f64> {
        self.entries.get(marker).map(|e| e.mic)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mics(&self) -> Vec<f64> {
        self.entries.values().map(|e| e.mic).collect()
    }
}

/// MIC table from one (model, dataset, split) slice of annotations.
/// Multi-marker and confidence-less sentences are ignored.
pub fn build_mic_table<'a, I>(
    model_id: &str,
    dataset_id: &str,
    split: Split,
    annotations: I,
    threshold: usize,
) -> Result<MicTable, MicError>
where
    I: IntoIterator<Item = &'a SentenceAnnotation>,
{
    let obs = annotations.into_iter().filter_map(|s| Some((s.mic_marker()?, s.confidence?)));
    MicTable::from_observations(model_id, dataset_id, split, threshold, obs)
}

/// One table per (model, dataset) present in `annotated`, for `split`,
/// sorted by model then dataset.
pub fn build_tables(annotated: &AnnotatedCorpus, split: Split, threshold: usize) -> Result<Vec<MicTable>, MicError> {
    let mut groups: BTreeMap<(&str, &str), Vec<&SentenceAnnotation>> = BTreeMap::new();
    for s in annotated.sentences.iter().filter(|s| s.split == split) {
        groups.entry((s.model_id.as_str(), s.dataset_id.as_str())).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|((m, d), sents)| build_mic_table(m, d, split, sents, threshold))
        .collect()
}

/// Markers present in every table; empty for no tables.
pub fn shared_markers(tables: &[&MicTable]) -> BTreeSet<String> {
    let Some((first, rest)) = tables.split_first() else {
        return BTreeSet::new();
    };
    first
        .entries
        .keys()
        .filter(|m| rest.iter().all(|t| t.contains(m)))
        .cloned()
        .collect()
}

pub fn exclude_no_hedge(table: &MicTable) -> MicTable {
    let mut out = table.clone();
    out.entries.remove(NO_HEDGE);
    out
}

/// Flat export row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicRecord {
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    #[serde(rename = "T")]
    pub threshold: usize,
    pub marker: String,
    pub mic: f64,
    pub support: usize,
    pub std: f64,
}

pub fn records(tables: &[MicTable]) -> Vec<MicRecord> {
    tables
        .iter()
        .flat_map(|t| {
            t.entries.values().map(move |e| MicRecord {
                model_id: t.model_id.clone(),
                dataset_id: t.dataset_id.clone(),
                split: t.split,
                threshold: t.threshold,
                marker: e.marker.clone(),
                mic: e.mic,
                support: e.support,
                std: e.std,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Meta(Extra),
    Table { model_id: String, dataset_id: String, split: Split, #[serde(rename = "T")] threshold: usize },
    Entry(MicRecord),
}

/// Line-delimited export: an optional meta line, then for each table a
/// `table` line (so empty tables survive) followed by its `entry` lines.
pub fn write_jsonl<W: Write>(tables: &[MicTable], meta: Option<&Extra>, mut w: W) -> std::io::Result<()> {
    let mut put = |line: &Line| -> std::io::Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")
    };
    if let Some(meta) = meta {
        put(&Line::Meta(meta.clone()))?;
    }
    for t in tables {
        put(&Line::Table {
            model_id: t.model_id.clone(),
            dataset_id: t.dataset_id.clone(),
            split: t.split,
            threshold: t.threshold,
        })?;
        for r in records(std::slice::from_ref(t)) {
            put(&Line::Entry(r))?;
        }
    }
    Ok(())
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<(Option<Extra>, Vec<MicTable>), MicError> {
    let mut meta = None;
    let mut tables: Vec<MicTable> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let err = |message: String| MicError::Parse { line: i + 1, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line).map_err(|e| err(e.to_string()))? {
            Line::Meta(m) => meta = Some(m),
            Line::Table { model_id, dataset_id, split, threshold } => {
                tables.push(MicTable::empty(&model_id, &dataset_id, split, threshold))
            }
            Line::Entry(r) => {
                let t = tables
                    .iter_mut()
                    .rev()
                    .find(|t| t.model_id == r.model_id && t.dataset_id == r.dataset_id && t.split == r.split)
                    .ok_or_else(|| err("entry before its table line".into()))?;
                t.entries.insert(
                    r.marker.clone(),
                    MicEntry { marker: r.marker, mic: r.mic, support: r.support, std: r.std },
                );
            }
        }
    }
    Ok((meta, tables))
}

/// Comma-separated export with the run's config hash and seed on each row.
pub fn write_csv<W: Write>(tables: &[MicTable], config_hash: &str, seed: u64, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model_id", "dataset_id", "split", "T", "marker", "mic", "support", "std", "config_hash", "seed"])?;
    for r in records(tables) {
        out.write_record([
            r.model_id,
            r.dataset_id,
            r.split.to_string(),
            r.threshold.to_string(),
            r.marker,
            r.mic.to_string(),
            r.support.to_string(),
            r.std.to_string(),
            config_hash.to_string(),
            seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, f64)]) -> MicTable {
        let mut t = MicTable::empty("m", "d", Split::Train, 1);
        for (k, v) in entries {
            t.entries.insert(k.to_string(), MicEntry { marker: k.to_string(), mic: *v, support: 1, std: 0.0 });
        }
        t
    }

    fn build(obs: &[(&str, f64)], t: usize) -> MicTable {
        MicTable::from_observations("m", "d", Split::Train, t, obs.iter().copied()).unwrap()
    }

    #[test]
    fn mean_and_support() {
        let t = build(&[("E", 0.5), ("E", 0.7), ("E", 0.9)], 1);
        let e = &t.entries["E"];
        assert!((e.mic - 0.7).abs() < 1e-12);
        assert_eq!(e.support, 3);
        assert!((e.std - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(build(&[("E", 0.3)], 1).mic("E"), Some(0.3));
    }

    #[test]
    fn threshold_boundary() {
        for (n, present) in [(9, false), (10, true), (11, true)] {
            let obs: Vec<(&str, f64)> = (0..n).map(|_| ("likely", 0.5)).collect();
            assert_eq!(build(&obs, 10).contains("likely"), present, "support {n}");
        }
        assert_eq!(
            MicTable::from_observations("m", "d", Split::Train, 0, std::iter::empty()),
            Err(MicError::ZeroThreshold)
        );
        assert!(build(&[], 10).is_empty());
    }

    #[test]
    fn shared_and_exclusion() {
        let a = table(&[("A", 0.1), ("B", 0.2), ("C", 0.3)]);
        let b = table(&[("B", 0.1), ("C", 0.2), ("D", 0.3)]);
        let c = table(&[("C", 0.5)]);
        assert_eq!(shared_markers(&[&a, &b, &c]), BTreeSet::from(["C".to_string()]));
        assert_eq!(shared_markers(&[&a, &a]).len(), 3);
        assert!(shared_markers(&[&a, &table(&[("Z", 0.1)])]).is_empty());

        assert_eq!(exclude_no_hedge(&a), a);
        assert!(exclude_no_hedge(&table(&[(NO_HEDGE, 0.9)])).is_empty());
        assert_eq!(exclude_no_hedge(&table(&[(NO_HEDGE, 0.9), ("likely", 0.6)])), table(&[("likely", 0.6)]));
    }

    #[test]
    fn jsonl_round_trip_keeps_empty_tables() {
        let tables = vec![build(&[("a", 0.25), ("b", 0.5)], 1), MicTable::empty("m", "e", Split::Train, 1)];
        let mut buf = Vec::new();
        write_jsonl(&tables, None, &mut buf).unwrap();
        let (_, back) = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, tables);
        let mut csv = Vec::new();
        write_csv(&tables, "abc", 3, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("model_id,dataset_id,split,T,marker,mic,support,std,config_hash,seed"));
    }
}
