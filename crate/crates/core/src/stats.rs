//! Loss-distribution summaries: moments, quantile-based risk measures, and
//! distributional distances.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Inverse-CDF quantile with linear interpolation between order statistics
/// (`q = x_{(h)}` with `h = (n−1)·level`, fractional `h` interpolated).
/// Input must be sorted ascending.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// One (level, VaR, ES) row.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct VarEs {
    pub level: f64,
    pub var: f64,
    pub es: f64,
}

/// Value-at-Risk (interpolated empirical quantile) and Expected Shortfall
/// (mean of samples ≥ VaR) of a loss sample at each level.
pub fn var_es(samples: &[f64], levels: &[f64]) -> Result<Vec<VarEs>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "risk measures need a nonempty sample".into(),
        ));
    }
    if let Some(l) = levels.iter().find(|l| !(0.0..1.0).contains(*l) || **l <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {l}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("loss samples must not be NaN"));
    Ok(levels
        .iter()
        .map(|&level| {
            let var = quantile_sorted(&sorted, level);
            let tail: Vec<f64> = sorted.iter().copied().filter(|&x| x >= var).collect();
            let es = if tail.is_empty() { var } else { mean(&tail) };
            VarEs { level, var, es }
        })
        .collect())
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    xb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// KS distance between an empirical law and the point mass at `point`:
/// `max(F(point⁻), 1 − F(point))`.
pub fn ks_to_point_mass(samples: &[f64], point: f64) -> f64 {
    assert!(!samples.is_empty());
    let n = samples.len() as f64;
    let below = samples.iter().filter(|&&x| x < point).count() as f64 / n;
    let at_or_below = samples.iter().filter(|&&x| x <= point).count() as f64 / n;
    below.max(1.0 - at_or_below)
}

/// Equal-width histogram.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|i| self.lo + i as f64 * self.bin_width)
            .collect()
    }
}

pub fn histogram(samples: &[f64], n_bins: usize, range: Option<(f64, f64)>) -> Histogram {
    assert!(n_bins > 0 && !samples.is_empty());
    let (lo, hi) = range.unwrap_or_else(|| {
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let width = ((hi - lo) / n_bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let idx = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    Histogram {
        lo,
        bin_width: width,
        counts,
    }
}
