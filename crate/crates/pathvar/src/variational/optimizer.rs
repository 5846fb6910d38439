//! Stochastic search for the variational infimum over a parametric drift
//! family.
//!
//! The optimizer moves the closed-loop core's weight vector θ by projected
//! SGD with common random numbers: each epoch draws a fresh pool of base
//! samples, and every objective or gradient evaluation inside the epoch
//! reuses that pool, so finite differences subtract correlated noise. For
//! weight-affine open-loop families on the Wiener measure the gradient is
//! computed pathwise through the functional's node gradient instead, which
//! removes the finite-difference error entirely. The whole trajectory is a
//! deterministic function of the seed.

use crate::drift::cm_norm_sq;
use crate::functional::Functional;
use crate::grid::TimeGrid;
use crate::measures::{perturb_compiled, sample_base, BasePair, MeasureError, MeasureSpec};
use crate::policy::{DriftBasis, DriftSpec};
use crate::rng::RandomSource;
use crate::stats::{collect_samples, par_map_samples};
use serde::{Deserialize, Serialize};

use super::{direct_log_laplace, evaluate_j, DualityReport, VariationalError};

/// SGD schedule and sampling controls; the defaults run 50 epochs of step
/// `0.1/√epoch` on pools of 10⁴ samples with relative finite-difference
/// step 1e-3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub epochs: usize,
    pub pool_size: usize,
    pub step: f64,
    pub fd_step_rel: f64,
    /// Abort when the epoch objective exceeds ten times the initial one.
    pub divergence_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            pool_size: 10_000,
            step: 0.1,
            fd_step_rel: 1e-3,
            divergence_factor: 10.0,
        }
    }
}

const PHASE_POOL: u64 = 0x706f_6f6c;
const PHASE_FINAL_LHS: u64 = 0x666c_6873;
const PHASE_FINAL_RHS: u64 = 0x6672_6873;

/// Minimizes `J` over the weights of `family`'s closed-loop core and
/// reports the best parameters with a fresh-sample duality report.
pub fn optimize_drift(
    f: &Functional,
    spec: &MeasureSpec,
    family: &DriftSpec,
    config: &OptimizerConfig,
    grid: TimeGrid,
    final_samples: usize,
    rs: RandomSource,
) -> Result<(Vec<f64>, DualityReport), VariationalError> {
    spec.validate()?;
    let mut theta: Vec<f64> =
        family.weights().expect("drift family needs a closed-loop parameter core").to_vec();
    let pathwise = pathwise_basis(family, spec, f, grid);

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best_theta = theta.clone();
    let mut best_j = f64::INFINITY;
    let mut initial_j = None;

    for epoch in 0..config.epochs {
        let pool = draw_pool(
            spec,
            grid,
            config.pool_size,
            rs.substream(PHASE_POOL).substream(epoch as u64),
        )?;
        let j_here = pool_objective(f, spec, family, &theta, grid, &pool)?;
        trace.push((epoch, j_here));
        let first = *initial_j.get_or_insert(j_here);
        if j_here > config.divergence_factor * first.abs().max(1.0) {
            return Err(VariationalError::Diverged { epoch, j: j_here });
        }
        if j_here < best_j {
            best_j = j_here;
            best_theta = theta.clone();
        }

        let grad = match &pathwise {
            Some(basis) => pathwise_gradient(f, spec, family, &theta, basis, grid, &pool)?,
            None => finite_difference_gradient(f, spec, family, &theta, config, grid, &pool)?,
        };
        let step = config.step / ((epoch + 1) as f64).sqrt();
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
    }

    // final pass on the last iterate
    let pool = draw_pool(
        spec,
        grid,
        config.pool_size,
        rs.substream(PHASE_POOL).substream(config.epochs as u64),
    )?;
    let j_last = pool_objective(f, spec, family, &theta, grid, &pool)?;
    trace.push((config.epochs, j_last));
    if j_last < best_j {
        best_theta = theta;
    }

    let lhs = direct_log_laplace(f, spec, grid, final_samples, rs.substream(PHASE_FINAL_LHS))?;
    let best = family.with_weights(&best_theta);
    let rhs = evaluate_j(f, spec, &best, grid, final_samples, rs.substream(PHASE_FINAL_RHS))?;
    let report = DualityReport { gap: rhs.mean - lhs.mean, lhs, rhs, optimizer_trace: trace };
    Ok((best_theta, report))
}

fn draw_pool(
    spec: &MeasureSpec,
    grid: TimeGrid,
    size: usize,
    rs: RandomSource,
) -> Result<Vec<(BasePair, RandomSource)>, VariationalError> {
    let draws =
        par_map_samples(size, rs, |_, child| -> Result<(BasePair, RandomSource), MeasureError> {
            Ok((sample_base(spec, grid, child)?, child))
        });
    Ok(collect_samples(draws)?)
}

fn pool_objective(
    f: &Functional,
    spec: &MeasureSpec,
    family: &DriftSpec,
    theta: &[f64],
    grid: TimeGrid,
    pool: &[(BasePair, RandomSource)],
) -> Result<f64, VariationalError> {
    let drift = family.with_weights(theta);
    let compiled = drift.compile(grid, spec.driving_dim())?;
    let values: Vec<Result<f64, MeasureError>> = pool
        .iter()
        .map(|(base, child)| {
            let pert = perturb_compiled(spec, base, &compiled, *child)?;
            Ok(f.eval(&pert.controlled.path) + 0.5 * cm_norm_sq(&pert.realized))
        })
        .collect();
    let values = collect_samples(values)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-cell densities of each basis function when the family admits the
/// pathwise gradient: a bare closed-loop core of path-independent basis
/// maps on the Wiener family, with a differentiable functional.
fn pathwise_basis(
    family: &DriftSpec,
    spec: &MeasureSpec,
    f: &Functional,
    grid: TimeGrid,
) -> Option<Vec<Vec<f64>>> {
    if !matches!(spec, MeasureSpec::Wiener { dim: 1 }) || !f.has_node_gradient() {
        return None;
    }
    let DriftSpec::ClosedLoop { basis, .. } = family else { return None };
    let mut out = Vec::with_capacity(basis.len());
    for b in basis {
        let cells: Vec<f64> = match b {
            DriftBasis::Constant => vec![1.0; grid.steps()],
            DriftBasis::Time => (0..grid.steps()).map(|k| grid.node(k)).collect(),
            DriftBasis::Schedule { values } => values.clone(),
            _ => return None,
        };
        out.push(cells);
    }
    Some(out)
}

/// Exact gradient for weight-affine open-loop families on the Wiener
/// measure: `∂J/∂θ_i = E[⟨∇f(X), Φ_i⟩] + ⟨u̇_θ, φ_i⟩_H` with `Φ_i` the
/// induced path of basis `i`.
fn pathwise_gradient(
    f: &Functional,
    spec: &MeasureSpec,
    family: &DriftSpec,
    theta: &[f64],
    basis_cells: &[Vec<f64>],
    grid: TimeGrid,
    pool: &[(BasePair, RandomSource)],
) -> Result<Vec<f64>, VariationalError> {
    let n = grid.steps();
    let dt = grid.dt();
    let drift = family.with_weights(theta);
    let compiled = drift.compile(grid, spec.driving_dim())?;

    // induced paths Φ_i at the nodes
    let mut basis_paths = Vec::with_capacity(basis_cells.len());
    for cells in basis_cells {
        let mut path = vec![0.0; n + 1];
        for k in 0..n {
            path[k + 1] = path[k] + cells[k] * dt;
        }
        basis_paths.push(path);
    }

    let mut grad = vec![0.0; theta.len()];
    // kinetic part: ⟨Σ_j θ_j φ_j, φ_i⟩_H
    for (i, phi_i) in basis_cells.iter().enumerate() {
        for k in 0..n {
            let mut u_dot = 0.0;
            for (j, phi_j) in basis_cells.iter().enumerate() {
                u_dot += theta[j] * phi_j[k];
            }
            grad[i] += u_dot * phi_i[k] * dt;
        }
    }
    // transport part, averaged over the pool
    let mut transport = vec![0.0; theta.len()];
    for (base, child) in pool {
        let pert = perturb_compiled(spec, base, &compiled, *child)?;
        let df =
            f.node_gradient(&pert.controlled.path).expect("pathwise mode requires a node gradient");
        for (i, phi_path) in basis_paths.iter().enumerate() {
            let mut dot = 0.0;
            for k in 0..=n {
                dot += df[k] * phi_path[k];
            }
            transport[i] += dot;
        }
    }
    for (g, t) in grad.iter_mut().zip(&transport) {
        *g += t / pool.len() as f64;
    }
    Ok(grad)
}

fn finite_difference_gradient(
    f: &Functional,
    spec: &MeasureSpec,
    family: &DriftSpec,
    theta: &[f64],
    config: &OptimizerConfig,
    grid: TimeGrid,
    pool: &[(BasePair, RandomSource)],
) -> Result<Vec<f64>, VariationalError> {
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let h = config.fd_step_rel * theta[i].abs().max(1.0);
        let mut up = theta.to_vec();
        up[i] += h;
        let mut down = theta.to_vec();
        down[i] -= h;
        let j_up = pool_objective(f, spec, family, &up, grid, pool)?;
        let j_down = pool_objective(f, spec, family, &down, grid, pool)?;
        grad[i] = (j_up - j_down) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::FunctionalSpec;
    use crate::policy::FeedbackFrame;

    #[test]
    fn constant_family_recovers_the_linear_optimum() {
        // f = W(1): J(θ) = θ + θ²/2, minimized at θ* = -1 with J* = -1/2
        let g = TimeGrid::new(64);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let f = FunctionalSpec::LinearEndpoint { scale: 1.0 }.build();
        let family = DriftSpec::closed_loop(
            vec![DriftBasis::Constant],
            vec![0.0],
            FeedbackFrame::Controlled,
        );
        // the pathwise gradient 1 + θ is deterministic here, so a unit first
        // step lands on the optimum immediately
        let config =
            OptimizerConfig { epochs: 12, pool_size: 500, step: 1.0, ..Default::default() };
        let (theta, report) =
            optimize_drift(&f, &spec, &family, &config, g, 80_000, RandomSource::new(14)).unwrap();
        assert!((theta[0] + 1.0).abs() < 0.05, "theta {theta:?}");
        assert!((report.rhs.mean + 0.5).abs() < 0.02, "{report:?}");
        assert!(report.gap.abs() < 0.02 + 3.0 * report.lhs.std_error.hypot(report.rhs.std_error));
        assert_eq!(report.optimizer_trace.len(), 13);
    }

    #[test]
    fn zero_functional_keeps_theta_at_zero() {
        let g = TimeGrid::new(16);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let f = Functional::new("zero", "constant", |_| 0.0)
            .with_node_gradient(|p| vec![0.0; (p.grid().steps() + 1) * p.dim()]);
        let family = DriftSpec::closed_loop(
            vec![DriftBasis::Constant],
            vec![0.0],
            FeedbackFrame::Controlled,
        );
        let config = OptimizerConfig { epochs: 10, pool_size: 50, ..Default::default() };
        let (theta, report) =
            optimize_drift(&f, &spec, &family, &config, g, 1000, RandomSource::new(15)).unwrap();
        assert!(theta[0].abs() < 1e-9, "theta {theta:?}");
        assert!(report.rhs.mean.abs() < 1e-9);
    }

    #[test]
    fn affine_feedback_family_approaches_the_quadratic_optimum() {
        // f = W(1)²/2: the dual value is ½ log 2; a constant-coefficient
        // affine feedback family lands within a few percent of it
        let g = TimeGrid::new(64);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let f = FunctionalSpec::QuadraticEndpoint { scale: 0.5 }.build();
        let family = DriftSpec::closed_loop(
            vec![DriftBasis::State, DriftBasis::Constant],
            vec![0.0, 0.0],
            FeedbackFrame::Controlled,
        );
        let config =
            OptimizerConfig { epochs: 40, pool_size: 2000, step: 0.5, ..Default::default() };
        let (theta, report) =
            optimize_drift(&f, &spec, &family, &config, g, 20_000, RandomSource::new(16)).unwrap();
        let target = 0.5 * std::f64::consts::LN_2;
        assert!(
            (report.rhs.mean - target).abs() < 0.035,
            "J* = {} vs {target}, θ = {theta:?}",
            report.rhs.mean
        );
        // weak duality with honest noise allowance
        let pooled = report.lhs.std_error.hypot(report.rhs.std_error);
        assert!(report.gap > -3.0 * pooled, "{report:?}");
    }

    #[test]
    fn optimizer_is_deterministic_given_the_seed() {
        let g = TimeGrid::new(16);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let f = FunctionalSpec::QuadraticEndpoint { scale: 0.5 }.build();
        let family =
            DriftSpec::closed_loop(vec![DriftBasis::State], vec![0.0], FeedbackFrame::Controlled);
        let config = OptimizerConfig { epochs: 5, pool_size: 100, ..Default::default() };
        let run =
            || optimize_drift(&f, &spec, &family, &config, g, 500, RandomSource::new(99)).unwrap();
        let (theta_a, report_a) = run();
        let (theta_b, report_b) = run();
        assert_eq!(theta_a, theta_b);
        assert_eq!(report_a.optimizer_trace, report_b.optimizer_trace);
        assert_eq!(report_a.rhs.mean, report_b.rhs.mean);
    }

    #[test]
    fn divergence_guard_fires_on_an_explosive_family() {
        // state feedback with a huge positive weight blows the objective up
        let g = TimeGrid::new(32);
        let spec = MeasureSpec::Wiener { dim: 1 };
        let f = FunctionalSpec::QuadraticEndpoint { scale: 0.5 }.build();
        let family =
            DriftSpec::closed_loop(vec![DriftBasis::State], vec![8.0], FeedbackFrame::Controlled);
        // a big step pushes θ further up before the next epoch evaluates J
        let config =
            OptimizerConfig { epochs: 20, pool_size: 100, step: 40.0, ..Default::default() };
        let err =
            optimize_drift(&f, &spec, &family, &config, g, 100, RandomSource::new(17)).unwrap_err();
        assert!(matches!(err, VariationalError::Diverged { .. }), "{err:?}");
    }
}
