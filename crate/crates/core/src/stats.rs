//! Small statistics toolbox: Kolmogorov-Smirnov distances, moment summaries
//! with standard errors, and z-scores for two-arm comparisons.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// 99%-level one-sample KS threshold coefficient: D* = 1.63 / sqrt(N).
pub const KS_COEFF_99: f64 = 1.63;

/// One-sample KS distance against a reference CDF. Sorts `samples` in place.
pub fn ks_one_sample(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty(), "KS needs at least one sample");
    samples.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

pub fn ks_threshold_one_sample_99(n: usize) -> f64 {
    KS_COEFF_99 / (n as f64).sqrt()
}

/// Two-sample KS distance. Sorts both slices in place.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs samples in both arms");
    a.sort_unstable_by(|x, y| x.partial_cmp(y).expect("non-NaN samples"));
    b.sort_unstable_by(|x, y| x.partial_cmp(y).expect("non-NaN samples"));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut d = 0.0f64;
    while ia < a.len() && ib < b.len() {
        if a[ia] <= b[ib] {
            ia += 1;
        } else {
            ib += 1;
        }
        d = d.max((ia as f64 / na - ib as f64 / nb).abs());
    }
    d
}

pub fn ks_threshold_two_sample_99(na: usize, nb: usize) -> f64 {
    KS_COEFF_99 * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}

/// Mean with standard error of the mean (sample std / sqrt(N)).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanErr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanErr {
    /// Two-pass summary in a fixed order, so results do not depend on how
    /// the caller parallelized the production of `values`.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0 };
        }
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = ss / (n - 1) as f64;
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
        }
    }
}

/// z-score for the difference of two means with independent errors. Exactly
/// equal means give 0 even when both errors vanish (bit-identical arms).
pub fn z_score(a: MeanErr, b: MeanErr) -> f64 {
    let diff = a.mean - b.mean;
    if diff == 0.0 {
        return 0.0;
    }
    let denom = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    if denom == 0.0 {
        // Deterministically different arms with zero sampling error: report
        // a saturated detection rather than an infinity.
        return f64::MAX.sqrt().copysign(diff);
    }
    diff / denom
}

/// max |E(t) - E(0)| / |E(0)| over a recorded series.
pub fn relative_drift(series: &[f64]) -> f64 {
    let e0 = series.first().copied().unwrap_or(0.0);
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    series
        .iter()
        .map(|&e| (e - e0).abs() / scale)
        .fold(0.0, f64::max)
}

/// Largest |z| across a set of observable comparisons.
pub fn max_abs_z(zs: &[f64]) -> f64 {
    zs.iter().map(|z| z.abs()).fold(0.0, f64::max)
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    v
}
