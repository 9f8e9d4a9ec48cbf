//! Brute-force reference for every metric, written against plain vectors
//! and maps. Nothing here calls into `markerconf`.

use std::collections::BTreeMap;

pub const NO_HEDGE: &str = "<no_hedge>";

#[derive(Debug, Clone)]
pub struct OSentence {
    /// `None` for a sentence with several distinct markers.
    pub marker: Option<String>,
    pub conf: f64,
    pub dec: f64,
}

#[derive(Debug, Clone)]
pub struct OResponse {
    pub correct: bool,
    pub punt: bool,
    pub sentences: Vec<OSentence>,
}

#[derive(Debug, Clone)]
pub struct ODataset {
    pub name: String,
    pub train: Vec<OResponse>,
    pub test: Vec<OResponse>,
}

pub type Mic = BTreeMap<String, f64>;

pub fn conf(yes: usize, na: usize, no: usize) -> f64 {
    let k = (yes + na + no) as f64;
    let mut bad = 0.0;
    for _ in 0..na {
        bad += 0.5;
    }
    for _ in 0..no {
        bad += 1.0;
    }
    1.0 - bad / k
}

fn avg(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn pop_sd(v: &[f64]) -> f64 {
    let m = avg(v);
    let mut s = 0.0;
    for x in v {
        s += (x - m) * (x - m);
    }
    (s / v.len() as f64).sqrt()
}

fn samp_sd(v: &[f64]) -> f64 {
    let m = avg(v);
    let mut s = 0.0;
    for x in v {
        s += (x - m) * (x - m);
    }
    (s / (v.len() - 1) as f64).sqrt()
}

pub fn coef_var(v: &[f64]) -> Option<f64> {
    let m = avg(v);
    if m == 0.0 {
        return None;
    }
    Some(pop_sd(v) / m.abs())
}

fn constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    if constant(x) || constant(y) {
        return None;
    }
    let (mx, my) = (avg(x), avg(y));
    let mut num = 0.0;
    let mut dx2 = 0.0;
    let mut dy2 = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        dx2 += (x[i] - mx) * (x[i] - mx);
        dy2 += (y[i] - my) * (y[i] - my);
    }
    Some((num / (dx2.sqrt() * dy2.sqrt())).clamp(-1.0, 1.0))
}

/// Rank by counting: 1 + (#smaller) + (#equal − 1)/2.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for a in v {
        let smaller = v.iter().filter(|b| *b < a).count() as f64;
        let equal = v.iter().filter(|b| *b == a).count() as f64;
        out.push(1.0 + smaller + (equal - 1.0) / 2.0);
    }
    out
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_r(&ranks(x), &ranks(y))
}

pub fn fisher(rs: &[f64]) -> f64 {
    let lim = 1.0 - 1e-6;
    let mut z = 0.0;
    for r in rs {
        let c = r.max(-lim).min(lim);
        z += 0.5 * ((1.0 + c) / (1.0 - c)).ln();
    }
    (z / rs.len() as f64).tanh()
}

pub fn pooled(groups: &[(usize, f64)]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (n, s) in groups {
        if *n >= 2 {
            num += (*n as f64 - 1.0) * s * s;
            den += *n as f64 - 1.0;
        }
    }
    if den == 0.0 {
        None
    } else {
        Some((num / den).sqrt())
    }
}

pub fn mic_table(train: &[OResponse], t: usize) -> Mic {
    let mut obs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in train {
        for s in &r.sentences {
            if let Some(m) = &s.marker {
                obs.entry(m.clone()).or_default().push(s.conf);
            }
        }
    }
    let mut out = Mic::new();
    for (m, v) in obs {
        if v.len() >= t {
            out.insert(m, avg(&v));
        }
    }
    out
}

pub fn mic_tables(ds: &[ODataset], t: usize, drop_no_hedge: bool) -> Vec<Mic> {
    ds.iter()
        .map(|d| {
            let mut m = mic_table(&d.train, t);
            if drop_no_hedge {
                m.remove(NO_HEDGE);
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agg {
    Marker,
    Sentence,
    Response,
}

/// (value, terms) of one table scored on one test set; `None` when nothing
/// is scorable.
fn mae(table: &Mic, test: &[OResponse], agg: Agg) -> Option<(f64, Vec<f64>)> {
    let mut per_marker: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    let mut per_response = Vec::new();
    for r in test {
        let mut errs = Vec::new();
        for s in &r.sentences {
            let Some(m) = &s.marker else { continue };
            let Some(v) = table.get(m) else { continue };
            let e = (v - s.conf).abs();
            per_marker.entry(m.clone()).or_default().push(e);
            all.push(e);
            errs.push(e);
        }
        if !errs.is_empty() {
            per_response.push(avg(&errs));
        }
    }
    if all.is_empty() {
        return None;
    }
    let terms = match agg {
        Agg::Marker => per_marker.values().map(|v| avg(v)).collect::<Vec<_>>(),
        Agg::Sentence => all,
        Agg::Response => per_response,
    };
    Some((avg(&terms), terms))
}

fn group(terms: &[f64]) -> (usize, f64) {
    (terms.len(), if terms.len() < 2 { 0.0 } else { samp_sd(terms) })
}

/// (value, pooled std).
pub fn imae(ds: &[ODataset], tables: &[Mic], agg: Agg) -> Option<(f64, Option<f64>)> {
    let mut vals = Vec::new();
    let mut groups = Vec::new();
    for (i, d) in ds.iter().enumerate() {
        if d.test.is_empty() {
            continue;
        }
        if let Some((v, terms)) = mae(&tables[i], &d.test, agg) {
            vals.push(v);
            groups.push(group(&terms));
        }
    }
    if vals.is_empty() {
        return None;
    }
    Some((avg(&vals), pooled(&groups)))
}

pub fn cmae(ds: &[ODataset], tables: &[Mic], agg: Agg, literal: bool) -> Option<(f64, Option<f64>)> {
    let eligible: Vec<usize> = (0..ds.len()).filter(|&i| !ds[i].train.is_empty() && !ds[i].test.is_empty()).collect();
    if eligible.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut count = 0.0;
    let mut groups = Vec::new();
    for &a in &eligible {
        for &b in &eligible {
            if a == b {
                continue;
            }
            if let Some((v, terms)) = mae(&tables[a], &ds[b].test, agg) {
                sum += v;
                count += 1.0;
                groups.push(group(&terms));
            }
        }
    }
    if count == 0.0 {
        return None;
    }
    let n = eligible.len() as f64;
    let div = if literal { n * (n - 1.0) / 2.0 } else { count };
    Some((sum / div, pooled(&groups)))
}

fn shared(tables: &[&Mic]) -> Vec<String> {
    let mut out = Vec::new();
    for k in tables[0].keys() {
        if tables.iter().all(|t| t.contains_key(k)) {
            out.push(k.clone());
        }
    }
    out
}

pub fn mcv(tables: &[Mic]) -> Option<f64> {
    if tables.len() < 2 {
        return None;
    }
    let refs: Vec<&Mic> = tables.iter().collect();
    let mut cvs = Vec::new();
    for m in shared(&refs) {
        let v: Vec<f64> = tables.iter().map(|t| t[&m]).collect();
        if let Some(c) = coef_var(&v) {
            cvs.push(c);
        }
    }
    if cvs.is_empty() {
        None
    } else {
        Some(avg(&cvs))
    }
}

pub fn dcv(tables: &[Mic]) -> Option<f64> {
    let mut cvs = Vec::new();
    for t in tables {
        if t.len() < 2 {
            continue;
        }
        let v: Vec<f64> = t.values().copied().collect();
        if let Some(c) = coef_var(&v) {
            cvs.push(c);
        }
    }
    if cvs.is_empty() {
        None
    } else {
        Some(avg(&cvs))
    }
}

pub fn mrc(tables: &[Mic]) -> Option<f64> {
    let mut rhos = Vec::new();
    for i in 0..tables.len() {
        for j in i + 1..tables.len() {
            let common = shared(&[&tables[i], &tables[j]]);
            if common.len() < 3 {
                continue;
            }
            let x: Vec<f64> = common.iter().map(|m| tables[i][m]).collect();
            let y: Vec<f64> = common.iter().map(|m| tables[j][m]).collect();
            if let Some(r) = spearman_rho(&x, &y) {
                rhos.push(r);
            }
        }
    }
    if rhos.is_empty() {
        None
    } else {
        Some(fisher(&rhos))
    }
}

/// MAC/MCC: `values[i]` is dataset i's accuracy or CMFG, `None` if absent.
pub fn marker_corr(tables: &[Mic], values: &[Option<f64>], spearman: bool) -> Option<f64> {
    let idx: Vec<usize> = (0..tables.len()).filter(|&i| values[i].is_some()).collect();
    if idx.len() < 3 {
        return None;
    }
    let used: Vec<&Mic> = idx.iter().map(|&i| &tables[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| values[i].unwrap()).collect();
    let mut rs = Vec::new();
    for m in shared(&used) {
        let x: Vec<f64> = used.iter().map(|t| t[&m]).collect();
        let r = if spearman { spearman_rho(&x, &y) } else { pearson_r(&x, &y) };
        if let Some(r) = r {
            rs.push(r);
        }
    }
    if rs.is_empty() {
        None
    } else {
        Some(fisher(&rs))
    }
}

pub fn accuracy(train: &[OResponse]) -> Option<f64> {
    if train.is_empty() {
        return None;
    }
    Some(train.iter().filter(|r| r.correct).count() as f64 / train.len() as f64)
}

/// F over a response's single-marker and unhedged sentences.
pub fn faith(r: &OResponse) -> Option<f64> {
    let diffs: Vec<f64> = r.sentences.iter().filter(|s| s.marker.is_some()).map(|s| (s.dec - s.conf).abs()).collect();
    if diffs.is_empty() {
        None
    } else {
        Some(1.0 - avg(&diffs))
    }
}

pub fn response_conf(r: &OResponse) -> Option<f64> {
    let c: Vec<f64> = r.sentences.iter().filter(|s| s.marker.is_some()).map(|s| s.conf).collect();
    if c.is_empty() {
        None
    } else {
        Some(avg(&c))
    }
}

pub fn bin(c: f64) -> usize {
    let mut b = 0;
    for i in 1..10 {
        if c >= i as f64 / 10.0 {
            b = i;
        }
    }
    b
}

/// CMFG from (confidence, F, punt) triples.
pub fn cmfg_items(items: &[(f64, f64, bool)]) -> Option<f64> {
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for (c, f, punt) in items {
        if !punt {
            bins[bin(*c)].push(*f);
        }
    }
    let means: Vec<f64> = bins.iter().filter(|b| !b.is_empty()).map(|b| avg(b)).collect();
    if means.is_empty() {
        None
    } else {
        Some(avg(&means))
    }
}

pub fn cmfg(train: &[OResponse]) -> Option<f64> {
    let items: Vec<(f64, f64, bool)> =
        train.iter().filter_map(|r| Some((response_conf(r)?, faith(r)?, r.punt))).collect();
    cmfg_items(&items)
}

pub fn mf(train: &[OResponse], t: usize) -> BTreeMap<String, f64> {
    let mut g: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in train {
        for s in &r.sentences {
            if let Some(m) = &s.marker {
                g.entry(m.clone()).or_default().push((s.dec - s.conf).abs());
            }
        }
    }
    g.into_iter().filter(|(_, v)| v.len() >= t.max(1)).map(|(k, v)| (k, avg(&v))).collect()
}

/// Every metric of one model, as computed by the reference.
#[derive(Debug, Clone)]
pub struct OReport {
    pub imae: [Option<(f64, Option<f64>)>; 3],
    pub cmae: [Option<(f64, Option<f64>)>; 3],
    pub mcv: Option<f64>,
    pub dcv: Option<f64>,
    pub mrc: Option<f64>,
    pub mac: [Option<f64>; 2],
    pub mcc: [Option<f64>; 2],
    pub cmfg: Vec<Option<f64>>,
    pub tables: Vec<Mic>,
}

pub fn report(ds: &[ODataset], t: usize, drop_no_hedge: bool, literal: bool) -> OReport {
    let tables = mic_tables(ds, t, drop_no_hedge);
    let aggs = [Agg::Marker, Agg::Sentence, Agg::Response];
    let acc: Vec<Option<f64>> = ds.iter().map(|d| accuracy(&d.train)).collect();
    let cm: Vec<Option<f64>> = ds.iter().map(|d| cmfg(&d.train)).collect();
    OReport {
        imae: aggs.map(|a| imae(ds, &tables, a)),
        cmae: aggs.map(|a| cmae(ds, &tables, a, literal)),
        mcv: mcv(&tables),
        dcv: dcv(&tables),
        mrc: mrc(&tables),
        mac: [marker_corr(&tables, &acc, false), marker_corr(&tables, &acc, true)],
        mcc: [marker_corr(&tables, &cm, false), marker_corr(&tables, &cm, true)],
        cmfg: cm,
        tables,
    }
}
