//! Cameron–Martin drifts, stochastic integrals and Wick exponentials.
//!
//! A drift `u` is stored through its density `u̇`, constant on each grid
//! cell, so the induced path `u(t_k) = Σ_{j<k} u̇_j Δt` starts at 0 and the
//! squared norm `|u|²_H = Σ_k |u̇_k|² Δt` is an exact cell sum. Integrals
//! against an integrator `m` use the left-endpoint (Itô) convention
//! `δ_m v = Σ_k v̇_k · Δm_k`, and the quadratic variation of any admitted
//! integrator is fixed to `Δt · I` — the Brownian contract — which makes the
//! log-Wick exponential
//!
//! ```text
//! log ρ(δ_m v) = δ_m v − ½ |v|²_H
//! ```
//!
//! exact at the scheme level: `log ρ(δv) + log ρ(−δv) = −|v|²_H` holds
//! bit-for-bit, not just to rounding.

use crate::grid::{check_compat, DiscretePath, GridError, Increments, TimeGrid};
use crate::rng::RandomSource;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// An element of the Cameron–Martin space, represented by its cell density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameronMartinDrift {
    grid: TimeGrid,
    dim: usize,
    /// Row-major cell densities `u̇_k`, length `N * dim`.
    density: Vec<f64>,
}

impl CameronMartinDrift {
    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        assert!(dim >= 1);
        Self { grid, dim, density: vec![0.0; grid.steps() * dim] }
    }

    /// Drift with the given per-cell density values (`N * dim`, row-major).
    pub fn from_density(grid: TimeGrid, dim: usize, density: Vec<f64>) -> Self {
        assert!(dim >= 1);
        assert_eq!(density.len(), grid.steps() * dim, "density must cover every cell");
        Self { grid, dim, density }
    }

    /// Constant density `rate` on every cell.
    pub fn constant(grid: TimeGrid, rate: &[f64]) -> Self {
        let dim = rate.len();
        let mut density = Vec::with_capacity(grid.steps() * dim);
        for _ in 0..grid.steps() {
            density.extend_from_slice(rate);
        }
        Self::from_density(grid, dim, density)
    }

    /// Scalar density given by `rate(t_k)` at each cell start.
    pub fn from_rate_fn(grid: TimeGrid, rate: impl Fn(f64) -> f64) -> Self {
        let density = (0..grid.steps()).map(|k| rate(grid.node(k))).collect();
        Self::from_density(grid, 1, density)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.density[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.density[k * self.dim..(k + 1) * self.dim]
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            dim: self.dim,
            density: self.density.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, GridError> {
        check_compat(self.grid, other.grid, self.dim, other.dim)?;
        Ok(Self {
            grid: self.grid,
            dim: self.dim,
            density: self.density.iter().zip(&other.density).map(|(a, b)| a + b).collect(),
        })
    }

    /// Cell increments `u̇_k Δt` of the induced path.
    pub fn increments(&self) -> Increments {
        let dt = self.grid.dt();
        Increments::from_values(self.grid, self.dim, self.density.iter().map(|v| v * dt).collect())
    }

    /// The induced path `u(t_k) = Σ_{j<k} u̇_j Δt`, starting at 0.
    pub fn path(&self) -> DiscretePath {
        self.increments().path()
    }

    /// Squared Cameron–Martin norm `Σ_k |u̇_k|² Δt`.
    pub fn norm_sq(&self) -> f64 {
        let dt = self.grid.dt();
        self.density.iter().map(|v| v * v).sum::<f64>() * dt
    }
}

/// Squared `H`-norm of a drift; see [`CameronMartinDrift::norm_sq`].
pub fn cm_norm_sq(u: &CameronMartinDrift) -> f64 {
    u.norm_sq()
}

/// Itô integral `δ_m v = Σ_k v̇_k · Δm_k` with the left-endpoint convention.
pub fn ito_integral(v: &CameronMartinDrift, dm: &Increments) -> Result<f64, GridError> {
    check_compat(v.grid(), dm.grid(), v.dim(), dm.dim())?;
    let mut acc = 0.0;
    for k in 0..v.grid().steps() {
        let vd = v.cell(k);
        let mc = dm.cell(k);
        for c in 0..v.dim() {
            acc += vd[c] * mc[c];
        }
    }
    Ok(acc)
}

/// Log of the Wick exponential, `δ_m v − ½ |v|²_H`.
///
/// The quadratic-variation term is taken as `Δt · I` per the Brownian
/// contract on admitted integrators.
pub fn log_wick(v: &CameronMartinDrift, dm: &Increments) -> Result<f64, GridError> {
    Ok(ito_integral(v, dm)? - 0.5 * cm_norm_sq(v))
}

/// Independent `N(0, Δt · I_dim)` increments for every cell.
pub fn brownian_increments(grid: TimeGrid, dim: usize, rs: RandomSource) -> Increments {
    let mut rng = rs.rng();
    let scale = grid.dt().sqrt();
    let values = (0..grid.steps() * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    Increments::from_values(grid, dim, values)
}
