#![allow(dead_code)]

pub mod oracle;

use markerconf::annotate::{AnnotatedCorpus, MarkerState, ResponseAnnotation, SentenceAnnotation, NO_HEDGE};
use markerconf::corpus::Split;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oracle::{ODataset, OResponse, OSentence};

pub const MODEL: &str = "m";

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Random multi-dataset fixture: 3–6 datasets, 2–15 markers, 10–200
/// sentences per dataset. Confidences are multiples of 1/16 so sums are
/// exact and ties are real ties.
pub fn random_fixture(seed: u64) -> Vec<ODataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_datasets = rng.gen_range(3..=6);
    let n_markers = rng.gen_range(2..=15);
    let mut markers: Vec<String> = (0..n_markers - 1).map(|i| format!("mk{i:02}")).collect();
    markers.push(NO_HEDGE.to_string());
    let base: Vec<f64> = markers.iter().map(|_| rng.gen_range(0.1..0.9)).collect();
    let q = |x: f64| ((x.clamp(0.0, 1.0) * 16.0).round()) / 16.0;
    (0..n_datasets)
        .map(|d| {
            let shift: f64 = rng.gen_range(-0.15..0.15);
            // Each dataset favours a random subset of markers.
            let weights: Vec<f64> = markers.iter().map(|_| rng.gen_range(0.0f64..1.0).powi(2)).collect();
            let total: f64 = weights.iter().sum();
            let n_sent = rng.gen_range(10..=200);
            let acc_rate: f64 = rng.gen_range(0.2..0.9);
            let mut train = Vec::new();
            let mut test = Vec::new();
            let mut made = 0;
            while made < n_sent {
                let len = rng.gen_range(1..=4).min(n_sent - made);
                made += len;
                let sentences = (0..len)
                    .map(|_| {
                        let marker = if rng.gen_bool(0.05) {
                            None
                        } else {
                            let mut pick = rng.gen_range(0.0..total);
                            let mut idx = markers.len() - 1;
                            for (i, w) in weights.iter().enumerate() {
                                if pick < *w {
                                    idx = i;
                                    break;
                                }
                                pick -= w;
                            }
                            Some(idx)
                        };
                        let mean = marker.map_or(0.5, |i| base[i] + shift);
                        OSentence {
                            marker: marker.map(|i| markers[i].clone()),
                            conf: q(mean + rng.gen_range(-0.3..0.3)),
                            dec: (rng.gen_range(0.0f64..1.0) * 100.0).round() / 100.0,
                        }
                    })
                    .collect();
                let r = OResponse { correct: rng.gen_bool(acc_rate), punt: rng.gen_bool(0.08), sentences };
                if rng.gen_bool(0.6) {
                    train.push(r);
                } else {
                    test.push(r);
                }
            }
            if train.is_empty() {
                train.push(test.pop().expect("at least one response"));
            }
            if test.is_empty() && train.len() > 1 {
                test.push(train.pop().expect("len > 1"));
            }
            ODataset { name: format!("d{d}"), train, test }
        })
        .collect()
}

/// Annotation-level view of a fixture, as the pipeline would have written it.
pub fn to_annotations(ds: &[ODataset]) -> AnnotatedCorpus {
    let mut out = AnnotatedCorpus { k: 16, ..Default::default() };
    for d in ds {
        for (split, responses) in [(Split::Train, &d.train), (Split::Test, &d.test)] {
            for (qi, r) in responses.iter().enumerate() {
                let query_id = format!("q{qi:04}");
                out.responses.push(ResponseAnnotation {
                    model_id: MODEL.into(),
                    dataset_id: d.name.clone(),
                    split,
                    query_id: query_id.clone(),
                    correct: Some(r.correct),
                    punt: r.punt,
                    n_sentences: r.sentences.len(),
                });
                for (si, s) in r.sentences.iter().enumerate() {
                    let (state, marker, confidence) = match &s.marker {
                        None => (MarkerState::MultiDiscarded, None, None),
                        Some(m) if m == NO_HEDGE => (MarkerState::NoHedge, Some(m.clone()), Some(s.conf)),
                        Some(m) => (MarkerState::Single, Some(m.clone()), Some(s.conf)),
                    };
                    out.sentences.push(SentenceAnnotation {
                        model_id: MODEL.into(),
                        dataset_id: d.name.clone(),
                        split,
                        query_id: query_id.clone(),
                        sent_idx: si,
                        text: format!("sentence {si}"),
                        n_markers: match state {
                            MarkerState::NoHedge => 0,
                            MarkerState::Single => 1,
                            MarkerState::MultiDiscarded => 2,
                        },
                        marker_state: state,
                        marker,
                        confidence,
                        decisiveness: Some(s.dec),
                        correct: Some(r.correct),
                        punt: r.punt,
                    });
                }
            }
        }
    }
    out
}

/// Dataset whose train split holds `n` single-sentence responses per
/// (marker, confidence) pair listed.
pub fn dataset_from_mics(name: &str, mics: &[(&str, f64)], support: usize) -> ODataset {
    let train = mics
        .iter()
        .flat_map(|(m, c)| {
            (0..support).map(move |_| OResponse {
                correct: true,
                punt: false,
                sentences: vec![OSentence { marker: Some(m.to_string()), conf: *c, dec: *c }],
            })
        })
        .collect();
    ODataset { name: name.into(), train, test: Vec::new() }
}
