//! Numeric kernel shared by the MIC and metric code.
//!
//! Everything here is a pure function over slices of finite `f64`.
//! Dispersion inside [`cv`] uses the population standard deviation; the
//! pooled standard deviation and the KDE bandwidth use the sample one.

use thiserror::Error;

/// Clamp applied before `atanh` so that correlations of exactly ±1 stay finite.
pub const FISHER_EPS: f64 = 1e-6;

/// Bandwidth used when every KDE input is identical.
pub const KDE_FALLBACK_BANDWIDTH: f64 = 0.05;

/// Default number of KDE grid points.
pub const KDE_GRID_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("coefficient of variation is undefined for zero mean")]
    ZeroMean,
    #[error("correlation is undefined for a zero-variance series")]
    ZeroVariance,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("correlation {0} lies outside [-1, 1]")]
    OutOfRange(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn require_len(values: &[f64], needed: usize) -> Result<()> {
    if values.len() < needed {
        return Err(StatsError::InsufficientData { needed, got: values.len() });
    }
    Ok(())
}

pub fn mean(values: &[f64]) -> Result<f64> {
    require_len(values, 1)?;
    check_finite(values)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation (divides by `n`).
pub fn population_std(values: &[f64]) -> Result<f64> {
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((ss / values.len() as f64).sqrt())
}

/// Sample standard deviation (divides by `n - 1`).
pub fn sample_std(values: &[f64]) -> Result<f64> {
    require_len(values, 2)?;
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

/// Coefficient of variation: population std over the absolute mean.
pub fn cv(values: &[f64]) -> Result<f64> {
    require_len(values, 2)?;
    let m = mean(values)?;
    if m == 0.0 {
        return Err(StatsError::ZeroMean);
    }
    Ok(population_std(values)? / m.abs())
}

fn paired(x: &[f64], y: &[f64], needed: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    require_len(x, needed)?;
    check_finite(x)?;
    check_finite(y)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    paired(x, y, 3)?;
    // Rounded means leave centered sums of a constant vector slightly off 0.
    if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
        return Err(StatsError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    paired(x, y, 3)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mean of correlations taken in Fisher z space.
pub fn fisher_mean(correlations: &[f64]) -> Result<f64> {
    require_len(correlations, 1)?;
    check_finite(correlations)?;
    let bound = 1.0 - FISHER_EPS;
    let mut z = 0.0;
    for &r in correlations {
        if !(-1.0..=1.0).contains(&r) {
            return Err(StatsError::OutOfRange(r));
        }
        z += r.clamp(-bound, bound).atanh();
    }
    Ok((z / correlations.len() as f64).tanh())
}

/// One group's contribution to a pooled standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Group {
    pub n: usize,
    pub std: f64,
}

/// `sqrt(sum((n_i - 1) s_i^2) / sum(n_i - 1))`. Groups with `n < 2` are
/// dropped with a warning.
pub fn pooled_std(groups: &[Group]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0usize;
    for g in groups {
        if g.n < 2 {
            log::warn!("pooled_std: dropping group with n = {}", g.n);
            continue;
        }
        if !g.std.is_finite() || g.std < 0.0 {
            return Err(StatsError::InvalidArgument(format!("group std {}", g.std)));
        }
        num += (g.n - 1) as f64 * g.std * g.std;
        den += g.n - 1;
    }
    if den == 0 {
        return Err(StatsError::InsufficientData { needed: 2, got: 0 });
    }
    Ok((num / den as f64).sqrt())
}

/// Silverman's rule of thumb `1.06 * sd * n^(-1/5)`, with the fixed fallback
/// when the sample has no spread.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    require_len(values, 1)?;
    check_finite(values)?;
    let sd = if values.len() < 2 { 0.0 } else { sample_std(values)? };
    if sd == 0.0 {
        return Ok(KDE_FALLBACK_BANDWIDTH);
    }
    Ok(1.06 * sd * (values.len() as f64).powf(-0.2))
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// Gaussian kernel density estimate of `values` evaluated on `grid`.
///
/// Pass `bandwidth = None` for Silverman's rule.
pub fn kde(values: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    require_len(values, 1)?;
    check_finite(values)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(StatsError::InvalidArgument(format!("bandwidth {h}"))),
        None => silverman_bandwidth(values)?,
    };
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            let s: f64 = values
                .iter()
                .map(|&v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum();
            s * norm
        })
        .collect())
}

/// Trapezoid rule over a (possibly uneven) grid.
pub fn trapezoid(grid: &[f64], ys: &[f64]) -> f64 {
    grid.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Indices of strict interior local maxima (plateaus count once, at their left edge).
pub fn local_maxima(ys: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < ys.len() {
        if ys[i] > ys[i - 1] {
            let mut j = i;
            while j + 1 < ys.len() && ys[j + 1] == ys[i] {
                j += 1;
            }
            if j + 1 < ys.len() && ys[j + 1] < ys[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}
