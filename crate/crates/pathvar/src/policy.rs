//! Drift policies: the admissible perturbation directions.
//!
//! A [`DriftSpec`] describes how a drift density is produced along a
//! trajectory. Open-loop drifts carry a fixed cell density; closed-loop
//! drifts evaluate a weighted basis of feedback maps `(t, x) -> R^d` at each
//! cell start; the `retarded` wrapper delays the inner density by a lag `η`
//! (zero-filled on `[0, η)`), and the `clipped` wrapper caps the density
//! component-wise, which places any policy in the bounded class the
//! reweighting identities require.
//!
//! Closed-loop feedback can be anchored in one of two frames:
//!
//! * [`FeedbackFrame::Controlled`] — the density at time `t` is
//!   `φ(t, X^u(t))`, the convention of stochastic control (and of the
//!   smoothed-score drift, where it attains the variational optimum);
//! * [`FeedbackFrame::Base`] — the density is `φ(t, W(t))`, an explicit
//!   functional of the base path; exact inverse drifts live here.
//!
//! Either frame yields an adapted density, so the change-of-measure and
//! transport identities hold for both; they simply name different
//! perturbations.

use crate::drift::CameronMartinDrift;
use crate::grid::TimeGrid;
use crate::heat::{EndpointFn, GaussHermite, HeatError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("basis and weight counts differ: {basis} vs {weights}")]
    BasisWeightMismatch { basis: usize, weights: usize },
    #[error("schedule length {len} does not match the grid ({steps} cells)")]
    ScheduleLength { len: usize, steps: usize },
    #[error("open-loop density is on a {density} grid, expected {steps} cells of dim {dim}")]
    OpenLoopShape { density: String, steps: usize, dim: usize },
    #[error("retarded lag {lag} is not a positive multiple of 1/{steps} in (0, 1]")]
    LagOffGrid { lag: f64, steps: usize },
    #[error("clip bound must be positive, got {bound}")]
    NonPositiveBound { bound: f64 },
    #[error(transparent)]
    Heat(#[from] HeatError),
}

fn not_positive(v: f64) -> bool {
    !v.is_finite() || v <= 0.0
}

/// Which trajectory closed-loop feedback reads its state from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackFrame {
    Controlled,
    Base,
}

/// One feedback map `(t, x) -> R^d` of a closed-loop basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftBasis {
    /// `1` in every component.
    Constant,
    /// `t` in every component.
    Time,
    /// The state itself: component `c` of the output reads component `c` of
    /// the feedback state.
    State,
    /// Per-cell scalar schedule `b_k`, broadcast to every component.
    Schedule { values: Vec<f64> },
    /// Per-cell scalar schedule times the state, `a_k * x_c`.
    StateSchedule { values: Vec<f64> },
    /// Heat-semigroup smoothed score `∂_x log P_{1-t}[e^{-g}](x)`;
    /// scalar driving noise only.
    HeatScore { g: EndpointFn },
}

/// A drift policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftSpec {
    OpenLoop { density: CameronMartinDrift },
    ClosedLoop { basis: Vec<DriftBasis>, weights: Vec<f64>, frame: FeedbackFrame },
    Retarded { inner: Box<DriftSpec>, lag: f64 },
    Clipped { inner: Box<DriftSpec>, bound: f64 },
}

impl DriftSpec {
    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        DriftSpec::OpenLoop { density: CameronMartinDrift::zero(grid, dim) }
    }

    pub fn open_loop(density: CameronMartinDrift) -> Self {
        DriftSpec::OpenLoop { density }
    }

    /// Open-loop drift with constant rate on every cell.
    pub fn constant(grid: TimeGrid, rate: &[f64]) -> Self {
        DriftSpec::OpenLoop { density: CameronMartinDrift::constant(grid, rate) }
    }

    pub fn closed_loop(basis: Vec<DriftBasis>, weights: Vec<f64>, frame: FeedbackFrame) -> Self {
        DriftSpec::ClosedLoop { basis, weights, frame }
    }

    /// Affine feedback `u̇(t_k, x) = a_k x + b_k` in the given frame.
    pub fn affine_feedback(a: Vec<f64>, b: Vec<f64>, frame: FeedbackFrame) -> Self {
        DriftSpec::ClosedLoop {
            basis: vec![
                DriftBasis::StateSchedule { values: a },
                DriftBasis::Schedule { values: b },
            ],
            weights: vec![1.0, 1.0],
            frame,
        }
    }

    /// True when the realized density never reads the trajectory, so a single
    /// evaluation is exact.
    pub fn is_deterministic(&self) -> bool {
        match self {
            DriftSpec::OpenLoop { .. } => true,
            DriftSpec::ClosedLoop { basis, .. } => basis.iter().all(|b| {
                matches!(b, DriftBasis::Constant | DriftBasis::Time | DriftBasis::Schedule { .. })
            }),
            DriftSpec::Retarded { inner, .. } | DriftSpec::Clipped { inner, .. } => {
                inner.is_deterministic()
            }
        }
    }

    /// Weights of the innermost closed-loop core, if any; this is the
    /// parameter vector a drift-family optimizer moves.
    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            DriftSpec::ClosedLoop { weights, .. } => Some(weights),
            DriftSpec::Retarded { inner, .. } | DriftSpec::Clipped { inner, .. } => inner.weights(),
            DriftSpec::OpenLoop { .. } => None,
        }
    }

    /// Same policy with the closed-loop core's weights replaced.
    pub fn with_weights(&self, theta: &[f64]) -> DriftSpec {
        match self {
            DriftSpec::ClosedLoop { basis, frame, .. } => DriftSpec::ClosedLoop {
                basis: basis.clone(),
                weights: theta.to_vec(),
                frame: *frame,
            },
            DriftSpec::Retarded { inner, lag } => {
                DriftSpec::Retarded { inner: Box::new(inner.with_weights(theta)), lag: *lag }
            }
            DriftSpec::Clipped { inner, bound } => {
                DriftSpec::Clipped { inner: Box::new(inner.with_weights(theta)), bound: *bound }
            }
            DriftSpec::OpenLoop { .. } => self.clone(),
        }
    }

    /// Validates the policy against a grid and driving dimension and
    /// precomputes whatever the per-sample evaluators need.
    pub fn compile(&self, grid: TimeGrid, dim: usize) -> Result<CompiledDrift, PolicyError> {
        let node = compile_node(self, grid, dim)?;
        Ok(CompiledDrift { grid, dim, node })
    }
}

/// Component-wise clamp of the inner density to `[-bound, bound]`.
pub fn clip_drift(inner: DriftSpec, bound: f64) -> DriftSpec {
    DriftSpec::Clipped { inner: Box::new(inner), bound }
}

/// Inner density delayed by `lag` (a multiple of the cell width), zero on
/// `[0, lag)`.
pub fn retard_drift(inner: DriftSpec, lag: f64) -> DriftSpec {
    DriftSpec::Retarded { inner: Box::new(inner), lag }
}

enum CompiledNode {
    Open(CameronMartinDrift),
    Closed { basis: Vec<CompiledBasis>, weights: Vec<f64>, frame: FeedbackFrame },
    Retarded { inner: Box<CompiledNode>, lag_cells: usize },
    Clipped { inner: Box<CompiledNode>, bound: f64 },
}

enum CompiledBasis {
    Constant,
    Time,
    State,
    Schedule(Vec<f64>),
    StateSchedule(Vec<f64>),
    HeatScore { g: EndpointFn, quadrature: GaussHermite },
}

fn compile_node(spec: &DriftSpec, grid: TimeGrid, dim: usize) -> Result<CompiledNode, PolicyError> {
    match spec {
        DriftSpec::OpenLoop { density } => {
            if density.grid().steps() != grid.steps() || density.dim() != dim {
                return Err(PolicyError::OpenLoopShape {
                    density: format!("{}x{}", density.grid().steps(), density.dim()),
                    steps: grid.steps(),
                    dim,
                });
            }
            Ok(CompiledNode::Open(density.clone()))
        }
        DriftSpec::ClosedLoop { basis, weights, frame } => {
            if basis.len() != weights.len() {
                return Err(PolicyError::BasisWeightMismatch {
                    basis: basis.len(),
                    weights: weights.len(),
                });
            }
            let compiled = basis
                .iter()
                .map(|b| match b {
                    DriftBasis::Constant => Ok(CompiledBasis::Constant),
                    DriftBasis::Time => Ok(CompiledBasis::Time),
                    DriftBasis::State => Ok(CompiledBasis::State),
                    DriftBasis::Schedule { values } => {
                        if values.len() != grid.steps() {
                            return Err(PolicyError::ScheduleLength {
                                len: values.len(),
                                steps: grid.steps(),
                            });
                        }
                        Ok(CompiledBasis::Schedule(values.clone()))
                    }
                    DriftBasis::StateSchedule { values } => {
                        if values.len() != grid.steps() {
                            return Err(PolicyError::ScheduleLength {
                                len: values.len(),
                                steps: grid.steps(),
                            });
                        }
                        Ok(CompiledBasis::StateSchedule(values.clone()))
                    }
                    DriftBasis::HeatScore { g } => {
                        Ok(CompiledBasis::HeatScore { g: *g, quadrature: GaussHermite::new(64) })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(CompiledNode::Closed { basis: compiled, weights: weights.clone(), frame: *frame })
        }
        DriftSpec::Retarded { inner, lag } => {
            let cells = lag * grid.steps() as f64;
            let rounded = cells.round();
            if !(*lag > 0.0 && *lag <= 1.0 && (cells - rounded).abs() < 1e-9 && rounded >= 1.0) {
                return Err(PolicyError::LagOffGrid { lag: *lag, steps: grid.steps() });
            }
            Ok(CompiledNode::Retarded {
                inner: Box::new(compile_node(inner, grid, dim)?),
                lag_cells: rounded as usize,
            })
        }
        DriftSpec::Clipped { inner, bound } => {
            if not_positive(*bound) {
                return Err(PolicyError::NonPositiveBound { bound: *bound });
            }
            Ok(CompiledNode::Clipped {
                inner: Box::new(compile_node(inner, grid, dim)?),
                bound: *bound,
            })
        }
    }
}

/// A validated policy bound to a grid and driving dimension.
pub struct CompiledDrift {
    grid: TimeGrid,
    dim: usize,
    node: CompiledNode,
}

impl CompiledDrift {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fresh per-trajectory evaluator; call [`DriftEval::density`] once per
    /// cell in ascending order.
    pub fn evaluator(&self) -> DriftEval<'_> {
        DriftEval { dim: self.dim, node: EvalNode::new(&self.node, self.dim) }
    }
}

/// Stateful per-trajectory density evaluator.
pub struct DriftEval<'a> {
    dim: usize,
    node: EvalNode<'a>,
}

impl DriftEval<'_> {
    /// Density at the start of cell `k`, given the controlled and base states
    /// at `t_k`. Must be called for `k = 0, 1, 2, ...` in order.
    pub fn density(
        &mut self,
        k: usize,
        t: f64,
        controlled: &[f64],
        base: &[f64],
        out: &mut [f64],
    ) -> Result<(), PolicyError> {
        debug_assert_eq!(out.len(), self.dim);
        self.node.density(k, t, controlled, base, out)
    }
}

enum EvalNode<'a> {
    Open(&'a CameronMartinDrift),
    Closed { basis: &'a [CompiledBasis], weights: &'a [f64], frame: FeedbackFrame },
    Retarded { inner: Box<EvalNode<'a>>, lag_cells: usize, dim: usize, history: Vec<f64> },
    Clipped { inner: Box<EvalNode<'a>>, bound: f64 },
}

impl<'a> EvalNode<'a> {
    fn new(node: &'a CompiledNode, dim: usize) -> Self {
        match node {
            CompiledNode::Open(d) => EvalNode::Open(d),
            CompiledNode::Closed { basis, weights, frame } => {
                EvalNode::Closed { basis, weights, frame: *frame }
            }
            CompiledNode::Retarded { inner, lag_cells } => EvalNode::Retarded {
                inner: Box::new(EvalNode::new(inner, dim)),
                lag_cells: *lag_cells,
                dim,
                history: Vec::new(),
            },
            CompiledNode::Clipped { inner, bound } => {
                EvalNode::Clipped { inner: Box::new(EvalNode::new(inner, dim)), bound: *bound }
            }
        }
    }

    fn density(
        &mut self,
        k: usize,
        t: f64,
        controlled: &[f64],
        base: &[f64],
        out: &mut [f64],
    ) -> Result<(), PolicyError> {
        match self {
            EvalNode::Open(d) => {
                out.copy_from_slice(d.cell(k));
                Ok(())
            }
            EvalNode::Closed { basis, weights, frame } => {
                let x = match frame {
                    FeedbackFrame::Controlled => controlled,
                    FeedbackFrame::Base => base,
                };
                out.fill(0.0);
                for (b, w) in basis.iter().zip(weights.iter()) {
                    match b {
                        CompiledBasis::Constant => {
                            for o in out.iter_mut() {
                                *o += w;
                            }
                        }
                        CompiledBasis::Time => {
                            for o in out.iter_mut() {
                                *o += w * t;
                            }
                        }
                        CompiledBasis::State => {
                            for (c, o) in out.iter_mut().enumerate() {
                                *o += w * x[c];
                            }
                        }
                        CompiledBasis::Schedule(v) => {
                            for o in out.iter_mut() {
                                *o += w * v[k];
                            }
                        }
                        CompiledBasis::StateSchedule(v) => {
                            for (c, o) in out.iter_mut().enumerate() {
                                *o += w * v[k] * x[c];
                            }
                        }
                        CompiledBasis::HeatScore { g, quadrature } => {
                            let score = quadrature.heat_score(g, 1.0 - t, x[0])?;
                            out[0] += w * score;
                        }
                    }
                }
                Ok(())
            }
            EvalNode::Retarded { inner, lag_cells, dim, history } => {
                debug_assert_eq!(history.len(), k * *dim, "cells must be visited in order");
                let start = history.len();
                history.resize(start + *dim, 0.0);
                inner.density(k, t, controlled, base, &mut history[start..])?;
                if k >= *lag_cells {
                    let from = (k - *lag_cells) * *dim;
                    out.copy_from_slice(&history[from..from + *dim]);
                } else {
                    out.fill(0.0);
                }
                Ok(())
            }
            EvalNode::Clipped { inner, bound } => {
                inner.density(k, t, controlled, base, out)?;
                for o in out.iter_mut() {
                    *o = o.clamp(-*bound, *bound);
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn realize_deterministic(spec: &DriftSpec, grid: TimeGrid) -> Vec<f64> {
        let compiled = spec.compile(grid, 1).unwrap();
        let mut eval = compiled.evaluator();
        let mut out = vec![0.0];
        let mut all = Vec::new();
        for k in 0..grid.steps() {
            eval.density(k, grid.node(k), &[0.0], &[0.0], &mut out).unwrap();
            all.push(out[0]);
        }
        all
    }

    #[test]
    fn clip_above_sup_is_identity() {
        let g = TimeGrid::new(8);
        let u = DriftSpec::constant(g, &[0.7]);
        let clipped = clip_drift(u.clone(), 5.0);
        assert_eq!(realize_deterministic(&u, g), realize_deterministic(&clipped, g));
    }

    #[test]
    fn clip_saturates_constant_density() {
        let g = TimeGrid::new(4);
        let clipped = clip_drift(DriftSpec::constant(g, &[3.0]), 1.5);
        assert_eq!(realize_deterministic(&clipped, g), vec![1.5; 4]);
        let clipped_neg = clip_drift(DriftSpec::constant(g, &[-3.0]), 1.5);
        assert_eq!(realize_deterministic(&clipped_neg, g), vec![-1.5; 4]);
    }

    #[test]
    fn full_lag_zeroes_the_drift() {
        let g = TimeGrid::new(6);
        let retarded = retard_drift(DriftSpec::constant(g, &[2.0]), 1.0);
        assert_eq!(realize_deterministic(&retarded, g), vec![0.0; 6]);
    }

    #[test]
    fn lag_shifts_the_schedule() {
        let g = TimeGrid::new(4);
        let inner =
            DriftSpec::open_loop(CameronMartinDrift::from_density(g, 1, vec![1.0, 2.0, 3.0, 4.0]));
        let retarded = retard_drift(inner, 0.5);
        assert_eq!(realize_deterministic(&retarded, g), vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn lag_off_grid_is_rejected() {
        let g = TimeGrid::new(4);
        let r = retard_drift(DriftSpec::constant(g, &[1.0]), 0.3);
        assert!(matches!(r.compile(g, 1), Err(PolicyError::LagOffGrid { .. })));
    }

    #[test]
    fn feedback_frames_read_different_states() {
        let g = TimeGrid::new(2);
        let mk = |frame| DriftSpec::closed_loop(vec![DriftBasis::State], vec![1.0], frame);
        for (frame, expect) in [(FeedbackFrame::Controlled, 7.0), (FeedbackFrame::Base, -2.0)] {
            let compiled = mk(frame).compile(g, 1).unwrap();
            let mut eval = compiled.evaluator();
            let mut out = vec![0.0];
            eval.density(0, 0.0, &[7.0], &[-2.0], &mut out).unwrap();
            assert_eq!(out[0], expect);
        }
    }

    #[test]
    fn retarded_density_ignores_late_states() {
        // the density at cell k must depend only on states at cells <= k - lag
        let g = TimeGrid::new(8);
        let spec = retard_drift(
            DriftSpec::closed_loop(vec![DriftBasis::State], vec![1.0], FeedbackFrame::Base),
            0.25,
        );
        let compiled = spec.compile(g, 1).unwrap();
        let run = |states: &[f64]| {
            let mut eval = compiled.evaluator();
            let mut out = vec![0.0];
            let mut densities = Vec::new();
            for k in 0..8 {
                eval.density(k, g.node(k), &[0.0], &states[k..=k], &mut out).unwrap();
                densities.push(out[0]);
            }
            densities
        };
        let mut states: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let before = run(&states);
        // surgery after cell 3 must not move the density at cell 5 (lag 2)
        states[4] = 100.0;
        states[7] = -50.0;
        let after = run(&states);
        assert_eq!(before[..6], after[..6]);
        assert_ne!(before[6..], after[6..]);
    }

    #[test]
    fn weights_roundtrip_through_wrappers() {
        let spec = clip_drift(
            retard_drift(
                DriftSpec::closed_loop(
                    vec![DriftBasis::State, DriftBasis::Constant],
                    vec![0.5, -1.0],
                    FeedbackFrame::Controlled,
                ),
                0.5,
            ),
            2.0,
        );
        assert_eq!(spec.weights(), Some(&[0.5, -1.0][..]));
        let moved = spec.with_weights(&[1.0, 2.0]);
        assert_eq!(moved.weights(), Some(&[1.0, 2.0][..]));
        assert!(matches!(moved, DriftSpec::Clipped { .. }));
    }
}
