//! Change-of-measure weights and reweighted expectations.
//!
//! The drift `u`, realized along a base sample with noise `β`, carries the
//! log-weight
//!
//! ```text
//! log ρ(-δ_β u) = -∫ u̇ dβ - ½ |u|²_H
//! ```
//!
//! and the change-of-variable identity states `E[f] = E[f∘W^u · ρ(-δ_β u)]`:
//! reweighting undoes the perturbation in law. The validators here estimate
//! both sides on independent streams and report the z-score of their gap,
//! so a correct implementation scores like noise and a corrupted weight
//! stands out. Weights travel in log space end to end; exponentials appear
//! only inside the max-shifted final reduction.
//!
//! For bounded drifts the weight has unit mean by construction; for general
//! closed-loop policies that normalization is not checkable in closed form,
//! so [`weight_normalization`] asserts it the only way available — by
//! Monte Carlo — and clipping a policy is the supported way to place it in
//! the bounded class outright.

use crate::drift::{cm_norm_sq, ito_integral, CameronMartinDrift};
use crate::functional::Functional;
use crate::grid::{GridError, Increments, TimeGrid};
use crate::measures::{perturb_compiled, sample_base, MeasureError, MeasureSpec};
use crate::policy::DriftSpec;
use crate::rng::RandomSource;
use crate::stats::{
    collect_samples, par_map_samples, weighted_mean_log_space, EstimateWithError, StatsError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GirsanovError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// One reweighted draw: `f` on the controlled path and the log-weight that
/// transports it back to the base law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub value: f64,
    pub log_weight: f64,
}

/// Both sides of the change-of-variable identity with their gap's z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportCheck {
    pub plain: EstimateWithError,
    pub reweighted: EstimateWithError,
    pub z: f64,
}

// phase tags keeping plain and reweighted streams disjoint
const PHASE_PLAIN: u64 = 0x706c_6169;
const PHASE_WEIGHTED: u64 = 0x7765_6967;

/// `log ρ(-δ_β u)` for a drift density realized along a base sample.
pub fn log_weight(realized: &CameronMartinDrift, dbeta: &Increments) -> Result<f64, GridError> {
    Ok(-ito_integral(realized, dbeta)? - 0.5 * cm_norm_sq(realized))
}

/// Per-sample values of `f∘W^u` paired with their log-weights.
pub fn weighted_samples(
    statistics: &[Functional],
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), GirsanovError> {
    spec.validate()?;
    let compiled = u.compile(grid, spec.driving_dim())?;
    let draws = par_map_samples(samples, rs, |_, child| -> Result<(Vec<f64>, f64), MeasureError> {
        let base = sample_base(spec, grid, child)?;
        let pert = perturb_compiled(spec, &base, &compiled, child)?;
        let lw = log_weight(&pert.realized, base.driving())?;
        let values = statistics.iter().map(|f| f.eval(&pert.controlled.path)).collect();
        Ok((values, lw))
    });
    let draws = collect_samples(draws)?;
    let mut log_weights = Vec::with_capacity(samples);
    let mut values = vec![Vec::with_capacity(samples); statistics.len()];
    for (v, lw) in draws {
        log_weights.push(lw);
        for (slot, x) in values.iter_mut().zip(v) {
            slot.push(x);
        }
    }
    Ok((values, log_weights))
}

/// One [`WeightedSample`] per base draw for a single statistic.
pub fn weighted_draws(
    f: &Functional,
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<Vec<WeightedSample>, GirsanovError> {
    let (values, log_weights) =
        weighted_samples(std::slice::from_ref(f), spec, u, grid, samples, rs)?;
    Ok(values[0]
        .iter()
        .zip(&log_weights)
        .map(|(v, lw)| WeightedSample { value: *v, log_weight: *lw })
        .collect())
}

/// Monte Carlo estimate of `E[f∘W^u · ρ(-δ_β u)]`.
pub fn reweighted_expectation(
    f: &Functional,
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<EstimateWithError, GirsanovError> {
    let draws = weighted_draws(f, spec, u, grid, samples, rs)?;
    let values: Vec<f64> = draws.iter().map(|d| d.value).collect();
    let log_weights: Vec<f64> = draws.iter().map(|d| d.log_weight).collect();
    Ok(weighted_mean_log_space(&values, &log_weights)?)
}

/// Monte Carlo estimate of `E[f]` under the base law.
pub fn plain_expectation(
    f: &Functional,
    spec: &MeasureSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<EstimateWithError, GirsanovError> {
    spec.validate()?;
    let draws = par_map_samples(samples, rs, |_, child| -> Result<f64, MeasureError> {
        let base = sample_base(spec, grid, child)?;
        Ok(f.eval(&base.w))
    });
    Ok(EstimateWithError::from_samples(&collect_samples(draws)?)?)
}

/// Estimate of the weight normalization `E[ρ(-δ_β u)]`, which must be 1 for
/// admissible drifts.
pub fn weight_normalization(
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<EstimateWithError, GirsanovError> {
    let one = Functional::new("one", "constant", |_| 1.0);
    reweighted_expectation(&one, spec, u, grid, samples, rs)
}

/// Compares plain and reweighted estimates of `E[f]` on independent
/// streams, so the pooled standard error is honest.
pub fn validate_change_of_variable(
    f: &Functional,
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<TransportCheck, GirsanovError> {
    let checks = validate_law_transport(std::slice::from_ref(f), spec, u, grid, samples, rs)?;
    Ok(checks.into_iter().next().expect("one statistic in, one check out"))
}

/// [`validate_change_of_variable`] for a battery of statistics sharing the
/// same sample paths.
pub fn validate_law_transport(
    statistics: &[Functional],
    spec: &MeasureSpec,
    u: &DriftSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<Vec<TransportCheck>, GirsanovError> {
    spec.validate()?;
    let plain_rs = rs.substream(PHASE_PLAIN);
    let weighted_rs = rs.substream(PHASE_WEIGHTED);
    let plain_draws =
        par_map_samples(samples, plain_rs, |_, child| -> Result<Vec<f64>, MeasureError> {
            let base = sample_base(spec, grid, child)?;
            Ok(statistics.iter().map(|f| f.eval(&base.w)).collect())
        });
    let plain_draws = collect_samples(plain_draws)?;
    let (values, log_weights) = weighted_samples(statistics, spec, u, grid, samples, weighted_rs)?;
    let mut out = Vec::with_capacity(statistics.len());
    for (j, weighted_values) in values.iter().enumerate() {
        let plain_j: Vec<f64> = plain_draws.iter().map(|v| v[j]).collect();
        let plain = EstimateWithError::from_samples(&plain_j)?;
        let reweighted = weighted_mean_log_space(weighted_values, &log_weights)?;
        let z = reweighted.z_difference(&plain);
        out.push(TransportCheck { plain, reweighted, z });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::brownian_increments;
    use crate::functional::FunctionalSpec;
    use crate::measures::{Coefficient, DiffusionSpec, LoopAtom, ParticleScheme, ParticlesSpec};
    use crate::policy::{clip_drift, DriftBasis, FeedbackFrame};

    fn families() -> Vec<MeasureSpec> {
        vec![
            MeasureSpec::Wiener { dim: 1 },
            MeasureSpec::Wiener { dim: 2 },
            MeasureSpec::Bridge { endpoint: vec![0.0] },
            MeasureSpec::Loop {
                atoms: vec![
                    LoopAtom { point: vec![1.0], weight: 0.5 },
                    LoopAtom { point: vec![-1.0], weight: 0.5 },
                ],
            },
            MeasureSpec::Particles(ParticlesSpec {
                sigma: 1.0,
                mean_reversion: 0.0,
                constant_drift: 0.0,
                repulsion: 1.0,
                initial: vec![0.0, 1.0],
                scheme: ParticleScheme::default(),
            }),
            MeasureSpec::Diffusion(DiffusionSpec {
                sigma: Coefficient::Const { value: 0.7 },
                drift: Coefficient::Tanh { amplitude: 0.5, rate: 1.0 },
                start: 0.0,
            }),
        ]
    }

    #[test]
    fn zero_drift_has_zero_log_weight() {
        let g = TimeGrid::new(16);
        let u = CameronMartinDrift::zero(g, 1);
        let dbeta = brownian_increments(g, 1, RandomSource::new(5));
        assert_eq!(log_weight(&u, &dbeta).unwrap(), 0.0);
    }

    #[test]
    fn constant_drift_log_weight_closed_form() {
        let g = TimeGrid::new(32);
        let c = 0.8;
        let u = CameronMartinDrift::constant(g, &[c]);
        let dbeta = brownian_increments(g, 1, RandomSource::new(6));
        let beta1: f64 = dbeta.values().iter().sum();
        let lw = log_weight(&u, &dbeta).unwrap();
        assert!((lw - (-c * beta1 - c * c / 2.0)).abs() < 1e-13);
    }

    #[test]
    fn weight_pair_identity() {
        let g = TimeGrid::new(24);
        let u = CameronMartinDrift::constant(g, &[1.3]);
        let dbeta = brownian_increments(g, 1, RandomSource::new(8));
        let sum = log_weight(&u, &dbeta).unwrap() + log_weight(&u.scale(-1.0), &dbeta).unwrap();
        assert!((sum + cm_norm_sq(&u)).abs() < 1e-13);
    }

    #[test]
    fn weights_normalize_across_families() {
        let g = TimeGrid::new(64);
        for spec in families() {
            let u = DriftSpec::constant(g, &vec![0.5; spec.driving_dim()]);
            let est = weight_normalization(&spec, &u, g, 4000, RandomSource::new(42)).unwrap();
            assert!(
                (est.mean - 1.0).abs() < 3.0 * est.std_error,
                "{spec:?}: E[ρ] = {} ± {}",
                est.mean,
                est.std_error
            );
        }
    }

    #[test]
    fn reweighting_recovers_the_constant_functional() {
        let g = TimeGrid::new(32);
        let one = Functional::new("one", "constant", |_| 1.0);
        let u = DriftSpec::constant(g, &[1.0]);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let est = reweighted_expectation(&one, &spec, &u, g, 4000, RandomSource::new(1)).unwrap();
        assert!((est.mean - 1.0).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn reweighting_undoes_a_wiener_shift() {
        // E[W(1)] = 0, and the reweighted shifted endpoint must agree
        let g = TimeGrid::new(64);
        let f = FunctionalSpec::LinearEndpoint { scale: 1.0 }.build();
        let u = DriftSpec::constant(g, &[1.0]);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let est = reweighted_expectation(&f, &spec, &u, g, 8000, RandomSource::new(2)).unwrap();
        assert!(est.mean.abs() < 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn transport_z_is_small_for_every_family_and_drift() {
        let g = TimeGrid::new(64);
        let f = FunctionalSpec::ClampedMidpoint { lo: -2.0, hi: 2.0 }.build();
        for spec in families() {
            let drifts = vec![
                DriftSpec::zero(g, spec.driving_dim()),
                DriftSpec::constant(g, &vec![0.5; spec.driving_dim()]),
                clip_drift(
                    DriftSpec::closed_loop(
                        vec![DriftBasis::State],
                        vec![0.5],
                        FeedbackFrame::Controlled,
                    ),
                    2.0,
                ),
            ];
            for u in drifts {
                let check =
                    validate_change_of_variable(&f, &spec, &u, g, 4000, RandomSource::new(77))
                        .unwrap();
                assert!(check.z.abs() < 3.5, "{spec:?}: z = {} for {u:?}", check.z);
            }
        }
    }

    #[test]
    fn corrupted_weight_is_detected() {
        // dropping the ½|u|²_H term scales the reweighted estimate by
        // e^{|u|²/2}, so a statistic with nonzero mean exposes it
        let g = TimeGrid::new(64);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let f = FunctionalSpec::RunningMaxClamp { lo: 0.0, hi: 2.0 }.build();
        let u = DriftSpec::constant(g, &[0.5]);
        let m = 20_000;
        let plain = plain_expectation(&f, &spec, g, m, RandomSource::new(3).substream(1)).unwrap();
        let (values, log_weights) = weighted_samples(
            std::slice::from_ref(&f),
            &spec,
            &u,
            g,
            m,
            RandomSource::new(3).substream(2),
        )
        .unwrap();
        let norm_sq = 0.25; // |u|²_H for u̇ ≡ 0.5
        let corrupted: Vec<f64> = log_weights.iter().map(|lw| lw + 0.5 * norm_sq).collect();
        let bad = weighted_mean_log_space(&values[0], &corrupted).unwrap();
        let z = bad.z_difference(&plain);
        assert!(z.abs() > 5.0, "corrupted weight went unnoticed: z = {z}");
    }

    #[test]
    fn corrupted_drift_sign_is_detected() {
        // weighting as if the drift were -u reverses the Itô term:
        // lw' = +∫u̇dβ - ½|u|², a gross mismatch against the true transport
        let g = TimeGrid::new(64);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let f = FunctionalSpec::RunningMaxClamp { lo: -2.0, hi: 2.0 }.build();
        let u = DriftSpec::constant(g, &[0.5]);
        let m = 20_000;
        let plain = plain_expectation(&f, &spec, g, m, RandomSource::new(14).substream(1)).unwrap();
        let compiled = u.compile(g, 1).unwrap();
        let mut values = Vec::with_capacity(m);
        let mut bad_lws = Vec::with_capacity(m);
        for i in 0..m as u64 {
            let child = RandomSource::new(14).substream(2).substream(i);
            let base = crate::measures::sample_base(&spec, g, child).unwrap();
            let pert = crate::measures::perturb_compiled(&spec, &base, &compiled, child).unwrap();
            values.push(f.eval(&pert.controlled.path));
            bad_lws.push(log_weight(&pert.realized.scale(-1.0), base.driving()).unwrap());
        }
        let bad = weighted_mean_log_space(&values, &bad_lws).unwrap();
        let z = bad.z_difference(&plain);
        assert!(z.abs() > 5.0, "sign-flipped weight went unnoticed: z = {z}");
    }

    #[test]
    fn law_transport_runs_a_battery() {
        // endpoint mean, mid-time second moment, running-max clamp, across
        // the wiener, bridge and loop families with u̇ ≡ 0.5
        let g = TimeGrid::new(32);
        let stats = vec![
            FunctionalSpec::LinearEndpoint { scale: 1.0 }.build(),
            Functional::new("mid-time-second-moment", "quadratic; integrable", |p| {
                let x = p.node(p.grid().steps() / 2)[0];
                x * x
            }),
            FunctionalSpec::RunningMaxClamp { lo: -2.0, hi: 2.0 }.build(),
        ];
        let families = [
            MeasureSpec::Wiener { dim: 1 },
            MeasureSpec::Bridge { endpoint: vec![0.0] },
            MeasureSpec::Loop {
                atoms: vec![
                    LoopAtom { point: vec![1.0], weight: 0.5 },
                    LoopAtom { point: vec![-1.0], weight: 0.5 },
                ],
            },
        ];
        let u = DriftSpec::constant(g, &[0.5]);
        for spec in families {
            let checks =
                validate_law_transport(&stats, &spec, &u, g, 4000, RandomSource::new(4)).unwrap();
            assert_eq!(checks.len(), 3);
            for (c, f) in checks.iter().zip(&stats) {
                assert!(c.z.abs() < 3.5, "{spec:?} / {}: z = {}", f.name(), c.z);
            }
        }
    }
}
