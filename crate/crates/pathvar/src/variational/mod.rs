//! The variational side: the control objective
//!
//! ```text
//! J(u) = E[f∘W^u + ½|u|²_H]
//! ```
//!
//! its dual `-log E[e^{-f}]`, the smoothed-score drift that attains the dual
//! value for endpoint functionals, a stochastic optimizer over parametric
//! drift families, and the density transforms (truncate, blend, clip,
//! retard) that move an arbitrary change of measure into the bounded
//! drift class step by step.
//!
//! Weak duality `-log E[e^{-f}] ≤ J(u)` holds for every admissible drift;
//! equality is attained exactly at drifts pushing `ν` onto the tilted
//! measure `e^{-f} dν / E[e^{-f}]`, which for `f = g(W(1))` on the Wiener
//! family is the feedback drift `u̇(t,x) = ∂_x log P_{1-t}[e^{-g}](x)`.

mod optimizer;

pub use optimizer::{optimize_drift, OptimizerConfig};

use crate::drift::cm_norm_sq;
use crate::functional::Functional;
use crate::grid::{GridError, TimeGrid};
use crate::heat::{EndpointFn, HeatError};
use crate::measures::{perturb_compiled, sample_base, MeasureError, MeasureSpec};
use crate::policy::{DriftBasis, DriftSpec, FeedbackFrame, PolicyError};
use crate::rng::RandomSource;
use crate::stats::{
    collect_samples, neg_log_mean_exp, par_map_samples, EstimateWithError, StatsError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationalError {
    #[error("optimizer diverged at epoch {epoch}: J = {j:.3e} exceeds 10x the initial value")]
    Diverged { epoch: usize, j: f64 },
    #[error("density values must be strictly positive; offending index {index}")]
    NonPositiveDensity { index: usize },
    #[error("empty sample set")]
    Empty,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Heat(#[from] HeatError),
}

/// Both sides of the duality with their gap and, when an optimizer
/// produced the drift, its iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// `-log E[e^{-f}]`.
    pub lhs: EstimateWithError,
    /// `J` at the reported drift.
    pub rhs: EstimateWithError,
    /// `rhs - lhs`; nonnegative up to pooled noise.
    pub gap: f64,
    /// `(epoch, J estimate)` pairs from the optimizer, if any.
    pub optimizer_trace: Vec<(usize, f64)>,
}

// phase tags for the two sides of a duality estimate
const PHASE_LHS: u64 = 0x006c_6873;
const PHASE_RHS: u64 = 0x0072_6873;

/// `-log E[e^{-f}]` by Monte Carlo, with a delta-method standard error and
/// first-order jackknife bias correction of the log.
pub fn direct_log_laplace(
    f: &Functional,
    spec: &MeasureSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<EstimateWithError, VariationalError> {
    spec.validate()?;
    let draws = par_map_samples(samples, rs, |_, child| -> Result<f64, MeasureError> {
        let base = sample_base(spec, grid, child)?;
        Ok(-f.eval(&base.w))
    });
    Ok(neg_log_mean_exp(&collect_samples(draws)?)?)
}

/// Monte Carlo estimate of `J(u) = E[f∘W^u + ½|u|²_H]`.
pub fn evaluate_j(
    f: &Functional,
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<EstimateWithError, VariationalError> {
    spec.validate()?;
    let compiled = u.compile(grid, spec.driving_dim())?;
    let draws = par_map_samples(samples, rs, |_, child| -> Result<f64, MeasureError> {
        let base = sample_base(spec, grid, child)?;
        let pert = perturb_compiled(spec, &base, &compiled, child)?;
        Ok(f.eval(&pert.controlled.path) + 0.5 * cm_norm_sq(&pert.realized))
    });
    Ok(EstimateWithError::from_samples(&collect_samples(draws)?)?)
}

/// Joint estimate of `-log E[e^{-f}]` and `J(u)` on independent streams.
pub fn duality_gap(
    f: &Functional,
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<DualityReport, VariationalError> {
    let lhs = direct_log_laplace(f, spec, grid, samples, rs.substream(PHASE_LHS))?;
    let rhs = evaluate_j(f, spec, u, grid, samples, rs.substream(PHASE_RHS))?;
    Ok(DualityReport { gap: rhs.mean - lhs.mean, lhs, rhs, optimizer_trace: Vec::new() })
}

/// The smoothed-score feedback drift `u̇(t,x) = ∂_x log P_{1-t}[e^{-g}](x)`
/// for an endpoint functional `g` on the scalar Wiener family. Densities
/// are read at cell starts, so the smoothing time stays strictly positive.
pub fn foellmer_drift(g: EndpointFn) -> DriftSpec {
    DriftSpec::closed_loop(vec![DriftBasis::HeatScore { g }], vec![1.0], FeedbackFrame::Controlled)
}

/// Truncates a positive density sample-wise at `bound` and renormalizes by
/// the empirical mean, the first step in regularizing a change of measure.
pub fn truncate_density(values: &[f64], bound: f64) -> Result<Vec<f64>, VariationalError> {
    if values.is_empty() {
        return Err(VariationalError::Empty);
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite() || *v <= 0.0) {
        return Err(VariationalError::NonPositiveDensity { index });
    }
    let capped: Vec<f64> = values.iter().map(|v| v.min(bound)).collect();
    let mean = capped.iter().sum::<f64>() / capped.len() as f64;
    Ok(capped.iter().map(|v| v / mean).collect())
}

/// Blends a density toward the constant 1: `(L + a)/(1 + a)`, which
/// installs the lower bound `a/(1+a)` and preserves a unit empirical mean.
pub fn blend_density(values: &[f64], a: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&a), "blend weight must lie in [0,1]");
    values.iter().map(|v| (v + a) / (1.0 + a)).collect()
}
