//! Monte Carlo reductions: estimates with standard errors, stabilized
//! log-space means, jackknife-corrected log estimators and a two-sample
//! Kolmogorov–Smirnov test.
//!
//! All reductions run over samples in ascending index order, so estimates
//! from a fixed seed are bit-stable no matter how the per-sample work was
//! scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite values at sample indices {indices:?}")]
    NonFiniteSamples { indices: Vec<usize> },
    #[error("all samples underflowed to zero; the mean has no representable log")]
    Underflow,
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl EstimateWithError {
    /// Deterministic value known exactly (zero standard error).
    pub fn exact(value: f64) -> Self {
        Self { mean: value, std_error: 0.0, samples: 1 }
    }

    /// Sample mean and standard error of the mean; needs two samples.
    pub fn from_samples(values: &[f64]) -> Result<Self, StatsError> {
        if values.len() < 2 {
            return Err(StatsError::TooFewSamples { needed: 2, got: values.len() });
        }
        let bad: Vec<usize> =
            values.iter().enumerate().filter(|(_, v)| !v.is_finite()).map(|(i, _)| i).collect();
        if !bad.is_empty() {
            return Err(StatsError::NonFiniteSamples { indices: bad });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        let std_error = (ss / (n - 1.0) / n).sqrt();
        Ok(Self { mean, std_error, samples: values.len() })
    }

    /// z-score of the estimate against a known constant.
    pub fn z_against(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target) / self.std_error
        }
    }

    /// z-score of the difference of two independent estimates.
    pub fn z_difference(&self, other: &EstimateWithError) -> f64 {
        let pooled = self.std_error.hypot(other.std_error);
        if pooled == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean) / pooled
        }
    }
}

/// Mean and SE of `value_i * exp(log_weight_i)`, exponentiating only after a
/// max-shift so large `|u|²_H` cannot overflow the weights.
pub fn weighted_mean_log_space(
    values: &[f64],
    log_weights: &[f64],
) -> Result<EstimateWithError, StatsError> {
    assert_eq!(values.len(), log_weights.len());
    if values.len() < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: values.len() });
    }
    let bad: Vec<usize> = values
        .iter()
        .zip(log_weights)
        .enumerate()
        .filter(|(_, (v, lw))| !v.is_finite() || !lw.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(StatsError::NonFiniteSamples { indices: bad });
    }
    let shift = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    let mut sum = 0.0;
    for (v, lw) in values.iter().zip(log_weights) {
        sum += v * (lw - shift).exp();
    }
    let mean_shifted = sum / n;
    let mut ss = 0.0;
    for (v, lw) in values.iter().zip(log_weights) {
        let d = v * (lw - shift).exp() - mean_shifted;
        ss += d * d;
    }
    let scale = shift.exp();
    Ok(EstimateWithError {
        mean: mean_shifted * scale,
        std_error: (ss / (n - 1.0) / n).sqrt() * scale,
        samples: values.len(),
    })
}

/// `-log` of the mean of `exp(log_values)`, with a delta-method standard
/// error and a first-order jackknife correction for the bias of the log.
pub fn neg_log_mean_exp(log_values: &[f64]) -> Result<EstimateWithError, StatsError> {
    let n = log_values.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    let bad: Vec<usize> =
        log_values.iter().enumerate().filter(|(_, v)| !v.is_finite()).map(|(i, _)| i).collect();
    if !bad.is_empty() {
        return Err(StatsError::NonFiniteSamples { indices: bad });
    }
    let shift = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = log_values.iter().map(|l| (l - shift).exp()).collect();
    let total: f64 = shifted.iter().sum();
    if total == 0.0 {
        return Err(StatsError::Underflow);
    }
    let nf = n as f64;
    let mean = total / nf;
    let theta = -(shift + mean.ln());

    // leave-one-out means for the jackknife
    let mut loo_sum = 0.0;
    for y in &shifted {
        let loo = (total - y) / (nf - 1.0);
        if loo <= 0.0 {
            return Err(StatsError::Underflow);
        }
        loo_sum += -(shift + loo.ln());
    }
    let jack = nf * theta - (nf - 1.0) * (loo_sum / nf);

    let ss = shifted.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>();
    let se_mean = (ss / (nf - 1.0) / nf).sqrt();
    // delta method: d(-log m)/dm = -1/m
    let std_error = se_mean / mean;
    Ok(EstimateWithError { mean: jack, std_error, samples: n })
}

/// Result of a two-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS test with the asymptotic Kolmogorov p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        let t = x.min(y);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    // Kolmogorov tail sum
    let mut p = 0.0;
    for k in 1..=100 {
        let term =
            2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    KsTest { statistic: d, p_value: p.clamp(0.0, 1.0) }
}

/// Runs `task(i, rs.substream(i))` for `i in 0..m` in parallel and returns
/// the results in sample order.
pub fn par_map_samples<T, F>(m: usize, rs: RandomSource, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, RandomSource) -> T + Sync,
{
    (0..m).into_par_iter().map(|i| task(i, rs.substream(i as u64))).collect()
}

/// Splits per-sample results into values and failure indices.
pub fn collect_samples<T, E>(results: Vec<Result<T, E>>) -> Result<Vec<T>, StatsError> {
    let mut failed = Vec::new();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(_) => failed.push(i),
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(StatsError::NonFiniteSamples { indices: failed })
    }
}
