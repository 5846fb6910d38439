//! Uniform time grids and discrete paths.
//!
//! The unit interval is split into `N` equal cells with nodes `t_k = k/N`;
//! a [`DiscretePath`] stores one `R^n` value per node and stands in for a
//! continuous path on `[0,1]`. Increments live on cells, one `R^n` vector
//! per cell, and are the common currency between Brownian sampling,
//! stochastic integrals and the Euler loops in the measure families.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("grid mismatch: {left} vs {right} steps")]
    GridMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("non-finite value at node {node}, component {component}")]
    NonFinite { node: usize, component: usize },
}

/// Uniform partition of `[0,1]` with nodes `t_k = k/N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
}

impl TimeGrid {
    /// A grid with `steps >= 1` cells.
    pub fn new(steps: usize) -> Self {
        assert!(steps >= 1, "a time grid needs at least one cell");
        Self { steps }
    }

    /// Number of cells `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Cell width `1/N`.
    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// Node `t_k = k/N`; valid for `k <= N`.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        k as f64 / self.steps as f64
    }

    /// `1 - t_k`, exact at the endpoints.
    pub fn remaining(&self, k: usize) -> f64 {
        (self.steps - k) as f64 / self.steps as f64
    }
}

/// A path sampled on the nodes of a [`TimeGrid`], with values in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    grid: TimeGrid,
    dim: usize,
    /// Row-major node values, length `(N+1) * dim`.
    values: Vec<f64>,
}

impl DiscretePath {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        assert!(dim >= 1, "paths need at least one component");
        Self { grid, dim, values: vec![0.0; (grid.steps() + 1) * dim] }
    }

    /// Wraps raw node values; length must be `(N+1) * dim`.
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Self {
        assert!(dim >= 1, "paths need at least one component");
        assert_eq!(values.len(), (grid.steps() + 1) * dim, "node values must cover every node");
        Self { grid, dim, values }
    }

    /// Path starting at `start` with the given cell increments.
    pub fn from_increments(start: &[f64], increments: &Increments) -> Self {
        let dim = increments.dim();
        assert_eq!(start.len(), dim);
        let grid = increments.grid();
        let mut values = Vec::with_capacity((grid.steps() + 1) * dim);
        values.extend_from_slice(start);
        let mut state = start.to_vec();
        for k in 0..grid.steps() {
            for (c, s) in state.iter_mut().enumerate() {
                *s += increments.cell(k)[c];
            }
            values.extend_from_slice(&state);
        }
        Self { grid, dim, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Value at node `k` as a slice of length `dim`.
    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-cell differences of node values.
    pub fn increments(&self) -> Increments {
        let n = self.grid.steps();
        let mut values = vec![0.0; n * self.dim];
        for k in 0..n {
            for c in 0..self.dim {
                values[k * self.dim + c] = self.node(k + 1)[c] - self.node(k)[c];
            }
        }
        Increments { grid: self.grid, dim: self.dim, values }
    }

    /// Node-wise sum with another path on the same grid and dimension.
    pub fn add(&self, other: &DiscretePath) -> Result<DiscretePath, GridError> {
        check_compat(self.grid, other.grid, self.dim, other.dim)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(DiscretePath { grid: self.grid, dim: self.dim, values })
    }

    /// Largest absolute node-wise difference over nodes `0..=node_limit`.
    pub fn sup_distance(&self, other: &DiscretePath, node_limit: usize) -> Result<f64, GridError> {
        check_compat(self.grid, other.grid, self.dim, other.dim)?;
        let mut sup: f64 = 0.0;
        for k in 0..=node_limit.min(self.grid.steps()) {
            for c in 0..self.dim {
                sup = sup.max((self.node(k)[c] - other.node(k)[c]).abs());
            }
        }
        Ok(sup)
    }

    pub fn ensure_finite(&self) -> Result<(), GridError> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(GridError::NonFinite { node: i / self.dim, component: i % self.dim });
            }
        }
        Ok(())
    }
}

/// Per-cell `R^dim` increments of a process on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Increments {
    grid: TimeGrid,
    dim: usize,
    /// Row-major cell values, length `N * dim`.
    values: Vec<f64>,
}

impl Increments {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        assert!(dim >= 1);
        Self { grid, dim, values: vec![0.0; grid.steps() * dim] }
    }

    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Self {
        assert!(dim >= 1);
        assert_eq!(values.len(), grid.steps() * dim, "increments must cover every cell");
        Self { grid, dim, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cumulative path starting at 0.
    pub fn path(&self) -> DiscretePath {
        DiscretePath::from_increments(&vec![0.0; self.dim], self)
    }

    /// Cell-wise sum with another increment set.
    pub fn add(&self, other: &Increments) -> Result<Increments, GridError> {
        check_compat(self.grid, other.grid, self.dim, other.dim)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Increments { grid: self.grid, dim: self.dim, values })
    }
}

pub(crate) fn check_compat(
    ga: TimeGrid,
    gb: TimeGrid,
    da: usize,
    db: usize,
) -> Result<(), GridError> {
    if ga.steps() != gb.steps() {
        return Err(GridError::GridMismatch { left: ga.steps(), right: gb.steps() });
    }
    if da != db {
        return Err(GridError::DimMismatch { left: da, right: db });
    }
    Ok(())
}
