//! Numerical checker for the path-space Prékopa–Leindler inequality.
//!
//! For positive functionals `a, b, c` and `t ∈ [0,1]`, if the pointwise
//! hypothesis
//!
//! ```text
//! a∘W^{th+(1-t)k} e^{-½|th+(1-t)k|²_H} ≥ (b∘W^h e^{-½|h|²_H})^t (c∘W^k e^{-½|k|²_H})^{1-t}
//! ```
//!
//! holds for all bounded-density shifts `h, k`, then the expectations obey
//! `E[a] ≥ E[b]^t E[c]^{1-t}` (under a log-concave reweighting density as
//! well). The hypothesis quantifies over the whole of `H_b` —
//! untestable — so [`pl_hypothesis_probe`] samples a finite grid of drift
//! pairs and reports the observed violation rate; a zero rate certifies
//! only that no violation was found. [`pl_check`] then measures the
//! conclusion's margin in logs with a pooled standard error.

use crate::drift::{cm_norm_sq, CameronMartinDrift};
use crate::functional::Functional;
use crate::grid::{GridError, TimeGrid};
use crate::measures::{perturb_compiled, sample_base, MeasureError, MeasureSpec};
use crate::policy::{DriftSpec, PolicyError};
use crate::rng::RandomSource;
use crate::stats::{collect_samples, par_map_samples, StatsError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrekopaError {
    #[error(
        "functional `{name}` must be positive on sampled paths; got {value} at sample {index}"
    )]
    NonPositive { name: String, value: f64, index: usize },
    #[error("blend parameter t={t} outside [0,1]")]
    BadBlend { t: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One inequality instance: three positive functionals, the blend `t`, and
/// an optional reweighting density.
#[derive(Debug, Clone)]
pub struct PlInstance {
    pub a: Functional,
    pub b: Functional,
    pub c: Functional,
    pub t: f64,
    pub theta_density: Option<Functional>,
}

impl PlInstance {
    fn validate(&self) -> Result<(), PrekopaError> {
        if !(0.0..=1.0).contains(&self.t) {
            return Err(PrekopaError::BadBlend { t: self.t });
        }
        Ok(())
    }
}

/// Margin of the conclusion in logs, `log E[a] - t log E[b] - (1-t) log E[c]`,
/// with its pooled standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlCheck {
    pub margin: f64,
    pub std_error: f64,
    pub z: f64,
    pub log_mean_a: f64,
    pub log_mean_b: f64,
    pub log_mean_c: f64,
}

/// Violations smaller than this ratio-relative slack are attributed to
/// rounding, not to the hypothesis.
const PROBE_SLACK: f64 = 1e-9;

/// Fraction of sampled base paths where the pointwise hypothesis fails by
/// more than `1e-9` relative, for one deterministic drift pair `(h, k)`.
pub fn pl_hypothesis_probe(
    inst: &PlInstance,
    spec: &MeasureSpec,
    h: &CameronMartinDrift,
    k: &CameronMartinDrift,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<f64, PrekopaError> {
    inst.validate()?;
    spec.validate()?;
    let t = inst.t;
    let blend = h.scale(t).add(&k.scale(1.0 - t))?;
    let half_blend = 0.5 * cm_norm_sq(&blend);
    let half_h = 0.5 * cm_norm_sq(h);
    let half_k = 0.5 * cm_norm_sq(k);
    let drift_blend = DriftSpec::open_loop(blend).compile(grid, spec.driving_dim())?;
    let drift_h = DriftSpec::open_loop(h.clone()).compile(grid, spec.driving_dim())?;
    let drift_k = DriftSpec::open_loop(k.clone()).compile(grid, spec.driving_dim())?;

    let flags = par_map_samples(samples, rs, |i, child| -> Result<bool, PrekopaError> {
        let base = sample_base(spec, grid, child)?;
        let on_blend = perturb_compiled(spec, &base, &drift_blend, child)?.controlled.path;
        let on_h = perturb_compiled(spec, &base, &drift_h, child)?.controlled.path;
        let on_k = perturb_compiled(spec, &base, &drift_k, child)?.controlled.path;
        let va = inst.a.eval(&on_blend);
        let vb = inst.b.eval(&on_h);
        let vc = inst.c.eval(&on_k);
        for (name, v) in [(inst.a.name(), va), (inst.b.name(), vb), (inst.c.name(), vc)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(PrekopaError::NonPositive { name: name.into(), value: v, index: i });
            }
        }
        let lhs = va.ln() - half_blend;
        let rhs = t * (vb.ln() - half_h) + (1.0 - t) * (vc.ln() - half_k);
        Ok(lhs - rhs < -PROBE_SLACK * lhs.abs().max(rhs.abs()).max(1.0))
    });
    let flags = flags.into_iter().collect::<Result<Vec<bool>, _>>()?;
    Ok(flags.iter().filter(|v| **v).count() as f64 / samples as f64)
}

// independent streams for the three expectations in the conclusion
const PHASE_A: u64 = 0x0070_6c61;
const PHASE_B: u64 = 0x0070_6c62;
const PHASE_C: u64 = 0x0070_6c63;

/// Checks the conclusion `E[a] ≥ E[b]^t E[c]^{1-t}` (expectations
/// reweighted by the instance density, self-normalized, when present). The
/// three expectations run on independent streams, so the pooled standard
/// error is honest.
pub fn pl_check(
    inst: &PlInstance,
    spec: &MeasureSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<PlCheck, PrekopaError> {
    inst.validate()?;
    spec.validate()?;
    let (la, se_a) = log_expectation(
        &inst.a,
        inst.theta_density.as_ref(),
        spec,
        grid,
        samples,
        rs.substream(PHASE_A),
    )?;
    let (lb, se_b) = log_expectation(
        &inst.b,
        inst.theta_density.as_ref(),
        spec,
        grid,
        samples,
        rs.substream(PHASE_B),
    )?;
    let (lc, se_c) = log_expectation(
        &inst.c,
        inst.theta_density.as_ref(),
        spec,
        grid,
        samples,
        rs.substream(PHASE_C),
    )?;
    let t = inst.t;
    let margin = la - t * lb - (1.0 - t) * lc;
    let std_error =
        (se_a * se_a + t * t * se_b * se_b + (1.0 - t) * (1.0 - t) * se_c * se_c).sqrt();
    let z = if std_error == 0.0 {
        if margin == 0.0 {
            0.0
        } else {
            f64::INFINITY * margin.signum()
        }
    } else {
        margin / std_error
    };
    Ok(PlCheck { margin, std_error, z, log_mean_a: la, log_mean_b: lb, log_mean_c: lc })
}

/// Midpoint concavity probe for the reweighting density: the rate of
/// sampled paths where `-log d∘W^{(h+k)/2}` falls below the chord average
/// by more than the rounding slack. A zero rate supports (never proves) the
/// log-concavity hypothesis on the segment.
pub fn theta_concavity_probe(
    density: &Functional,
    spec: &MeasureSpec,
    h: &CameronMartinDrift,
    k: &CameronMartinDrift,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<f64, PrekopaError> {
    spec.validate()?;
    let mid = h.scale(0.5).add(&k.scale(0.5))?;
    let drift_mid = DriftSpec::open_loop(mid).compile(grid, spec.driving_dim())?;
    let drift_h = DriftSpec::open_loop(h.clone()).compile(grid, spec.driving_dim())?;
    let drift_k = DriftSpec::open_loop(k.clone()).compile(grid, spec.driving_dim())?;
    let flags = par_map_samples(samples, rs, |i, child| -> Result<bool, PrekopaError> {
        let base = sample_base(spec, grid, child)?;
        let at = |drift: &crate::policy::CompiledDrift| -> Result<f64, PrekopaError> {
            let path = perturb_compiled(spec, &base, drift, child)?.controlled.path;
            let v = density.eval(&path);
            if !v.is_finite() || v <= 0.0 {
                return Err(PrekopaError::NonPositive {
                    name: density.name().into(),
                    value: v,
                    index: i,
                });
            }
            Ok(-v.ln())
        };
        let m = at(&drift_mid)?;
        let lh = at(&drift_h)?;
        let lk = at(&drift_k)?;
        let chord = 0.5 * (lh + lk);
        Ok(m < chord - PROBE_SLACK * chord.abs().max(1.0))
    });
    let flags = flags.into_iter().collect::<Result<Vec<bool>, _>>()?;
    Ok(flags.iter().filter(|v| **v).count() as f64 / samples as f64)
}

/// `log` of the (optionally `d`-reweighted, self-normalized) expectation of
/// `f`, with a delta-method standard error.
fn log_expectation(
    f: &Functional,
    density: Option<&Functional>,
    spec: &MeasureSpec,
    grid: TimeGrid,
    samples: usize,
    rs: RandomSource,
) -> Result<(f64, f64), PrekopaError> {
    let draws = par_map_samples(samples, rs, |_, child| -> Result<(f64, f64), MeasureError> {
        let base = sample_base(spec, grid, child)?;
        let v = f.eval(&base.w);
        let d = density.map(|d| d.eval(&base.w)).unwrap_or(1.0);
        Ok((v, d))
    });
    let draws = collect_samples(draws)?;
    for (i, (v, d)) in draws.iter().enumerate() {
        if !v.is_finite() || *v <= 0.0 {
            return Err(PrekopaError::NonPositive { name: f.name().into(), value: *v, index: i });
        }
        if !d.is_finite() || *d <= 0.0 {
            return Err(PrekopaError::NonPositive {
                name: density.map(|d| d.name()).unwrap_or("density").into(),
                value: *d,
                index: i,
            });
        }
    }
    let m = samples as f64;
    let mean_num = draws.iter().map(|(v, d)| v * d).sum::<f64>() / m;
    let mean_den = draws.iter().map(|(_, d)| *d).sum::<f64>() / m;
    let mut var_num = 0.0;
    let mut var_den = 0.0;
    let mut cov = 0.0;
    for (v, d) in &draws {
        let dn = v * d - mean_num;
        let dd = d - mean_den;
        var_num += dn * dn;
        var_den += dd * dd;
        cov += dn * dd;
    }
    var_num /= m - 1.0;
    var_den /= m - 1.0;
    cov /= m - 1.0;
    // delta method for log(num/den); the density-free case has var_den = 0
    let rel_var = var_num / (mean_num * mean_num) + var_den / (mean_den * mean_den)
        - 2.0 * cov / (mean_num * mean_den);
    let se = (rel_var.max(0.0) / m).sqrt();
    Ok(((mean_num / mean_den).ln(), se))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wiener1() -> MeasureSpec {
        MeasureSpec::Wiener { dim: 1 }
    }

    fn constant_functional(v: f64) -> Functional {
        Functional::new(format!("const({v})"), "constant", move |_| v)
    }

    fn exp_neg_endpoint(scale: f64) -> Functional {
        Functional::new(format!("exp(-{scale} W(1))"), "log-linear, all moments finite", move |p| {
            (-scale * p.node(p.grid().steps())[0]).exp()
        })
    }

    fn instance(a: Functional, b: Functional, c: Functional, t: f64) -> PlInstance {
        PlInstance { a, b, c, t, theta_density: None }
    }

    #[test]
    fn constants_satisfy_the_hypothesis_on_a_drift_grid() {
        // a=b=c=1 reduces the hypothesis to convexity of |·|²_H
        let g = TimeGrid::new(16);
        let inst = instance(
            constant_functional(1.0),
            constant_functional(1.0),
            constant_functional(1.0),
            0.3,
        );
        let rates: Vec<f64> = [-1.0, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .flat_map(|ch| {
                [-1.0, -0.5, 0.0, 0.5, 1.0].iter().map(move |ck| (*ch, *ck)).collect::<Vec<_>>()
            })
            .map(|(ch, ck)| {
                let h = CameronMartinDrift::constant(g, &[ch]);
                let k = CameronMartinDrift::constant(g, &[ck]);
                pl_hypothesis_probe(&inst, &wiener1(), &h, &k, g, 50, RandomSource::new(1)).unwrap()
            })
            .collect();
        assert!(rates.iter().all(|r| *r == 0.0), "{rates:?}");
    }

    #[test]
    fn equal_drifts_never_violate() {
        let g = TimeGrid::new(16);
        let inst =
            instance(exp_neg_endpoint(1.0), exp_neg_endpoint(1.0), exp_neg_endpoint(1.0), 0.7);
        let h = CameronMartinDrift::from_rate_fn(g, |t| t - 0.3);
        let rate =
            pl_hypothesis_probe(&inst, &wiener1(), &h, &h.clone(), g, 200, RandomSource::new(2))
                .unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn adversarial_instance_violates_everywhere() {
        let g = TimeGrid::new(8);
        let inst = instance(
            constant_functional(0.5),
            constant_functional(1.0),
            constant_functional(1.0),
            0.5,
        );
        let zero = CameronMartinDrift::zero(g, 1);
        let rate = pl_hypothesis_probe(
            &inst,
            &wiener1(),
            &zero,
            &zero.clone(),
            g,
            100,
            RandomSource::new(3),
        )
        .unwrap();
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn log_linear_family_is_an_equality_case() {
        // a=b=c=exp(-W(1)): the hypothesis holds by H-norm convexity and the
        // conclusion is an equality, so the margin is statistical zero
        let g = TimeGrid::new(32);
        let inst =
            instance(exp_neg_endpoint(1.0), exp_neg_endpoint(1.0), exp_neg_endpoint(1.0), 0.4);
        let h = CameronMartinDrift::constant(g, &[0.8]);
        let k = CameronMartinDrift::constant(g, &[-0.6]);
        let rate =
            pl_hypothesis_probe(&inst, &wiener1(), &h, &k, g, 300, RandomSource::new(4)).unwrap();
        assert_eq!(rate, 0.0);
        let check = pl_check(&inst, &wiener1(), g, 20_000, RandomSource::new(5)).unwrap();
        assert!(check.z.abs() < 3.0, "{check:?}");
    }

    #[test]
    fn constants_conclusion_is_exact() {
        let g = TimeGrid::new(8);
        let inst = instance(
            constant_functional(1.0),
            constant_functional(1.0),
            constant_functional(1.0),
            0.25,
        );
        let check = pl_check(&inst, &wiener1(), g, 100, RandomSource::new(6)).unwrap();
        assert_eq!(check.margin, 0.0);
        assert_eq!(check.z, 0.0);
    }

    #[test]
    fn scaling_a_shifts_the_margin_exactly() {
        let g = TimeGrid::new(16);
        let base =
            instance(exp_neg_endpoint(0.5), exp_neg_endpoint(0.5), exp_neg_endpoint(0.5), 0.5);
        let doubled = PlInstance {
            a: Functional::new("2a", "scaled", |p: &crate::grid::DiscretePath| {
                2.0 * (-0.5 * p.node(p.grid().steps())[0]).exp()
            }),
            ..base.clone()
        };
        let m0 = pl_check(&base, &wiener1(), g, 2000, RandomSource::new(7)).unwrap().margin;
        let m1 = pl_check(&doubled, &wiener1(), g, 2000, RandomSource::new(7)).unwrap().margin;
        assert!((m1 - m0 - 2.0f64.ln()).abs() < 1e-12, "{m0} -> {m1}");
    }

    #[test]
    fn hypothesis_violating_instance_still_reports_a_margin() {
        let g = TimeGrid::new(8);
        let inst = instance(
            constant_functional(0.5),
            constant_functional(1.0),
            constant_functional(1.0),
            0.5,
        );
        let check = pl_check(&inst, &wiener1(), g, 100, RandomSource::new(8)).unwrap();
        assert!((check.margin - 0.5f64.ln()).abs() < 1e-12);
        assert!(check.margin < 0.0, "non-certifying margin is reported, not hidden");
    }

    #[test]
    fn reweighted_equality_family_keeps_zero_margin() {
        let g = TimeGrid::new(32);
        let mut inst =
            instance(exp_neg_endpoint(1.0), exp_neg_endpoint(1.0), exp_neg_endpoint(1.0), 0.6);
        inst.theta_density = Some(exp_neg_endpoint(0.5));
        let check = pl_check(&inst, &wiener1(), g, 20_000, RandomSource::new(9)).unwrap();
        assert!(check.z.abs() < 3.0, "{check:?}");
    }

    #[test]
    fn log_linear_density_passes_the_concavity_probe() {
        // -log d∘W^h = W(1) + h(1) is affine in h, hence concave
        let g = TimeGrid::new(16);
        let d = exp_neg_endpoint(1.0);
        let h = CameronMartinDrift::constant(g, &[1.0]);
        let k = CameronMartinDrift::constant(g, &[-1.0]);
        let rate =
            theta_concavity_probe(&d, &wiener1(), &h, &k, g, 200, RandomSource::new(10)).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn nonpositive_functionals_are_rejected() {
        let g = TimeGrid::new(8);
        let signed = Functional::new("endpoint", "signed", |p: &crate::grid::DiscretePath| {
            p.node(p.grid().steps())[0]
        });
        let inst = instance(signed, constant_functional(1.0), constant_functional(1.0), 0.5);
        let err = pl_check(&inst, &wiener1(), g, 200, RandomSource::new(11)).unwrap_err();
        assert!(matches!(err, PrekopaError::NonPositive { .. }));
    }
}
