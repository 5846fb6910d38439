//! Gauss–Hermite quadrature and heat-semigroup score evaluation.
//!
//! The smoothed score `∂_x log P_τ[e^{-g}](x)` of an endpoint potential `g`
//! is the feedback rate that steers a Brownian path toward the endpoint law
//! tilted by `e^{-g}`. It is computed with a 64-node Gauss–Hermite rule and
//! log-sum-exp shifting, so potentials with large values do not underflow
//! the quadrature.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeatError {
    #[error("quadrature underflow: every node weight of exp(-g) vanished at x={x}, tau={tau}")]
    QuadratureUnderflow { x: f64, tau: f64 },
}

/// Endpoint potentials `g: R -> R` with closed-form heat smoothing used in
/// tests; evaluated pointwise everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EndpointFn {
    /// `g(x) = scale * x`
    Linear { scale: f64 },
    /// `g(x) = scale * x^2`
    Quadratic { scale: f64 },
}

impl EndpointFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            EndpointFn::Linear { scale } => scale * x,
            EndpointFn::Quadratic { scale } => scale * x * x,
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the weight
/// `e^{-x^2}` (physicists' convention).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64 / 2.0).sqrt();
            jac[(k - 1, k)] = off;
            jac[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let first = eig.eigenvectors[(0, i)];
                (node, std::f64::consts::PI.sqrt() * first * first)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// `∂_x log P_τ[e^{-g}](x)` where `P_τ` is the heat semigroup at time τ.
    ///
    /// Uses the score identity `∂_x log E[φ(x + √τ Z)] = E[Z φ]/(√τ E[φ])`
    /// with `φ = e^{-g}`, evaluated after recentering the exponents.
    pub fn heat_score(&self, g: &EndpointFn, tau: f64, x: f64) -> Result<f64, HeatError> {
        assert!(tau > 0.0, "heat score needs strictly positive smoothing time");
        let spread = (2.0 * tau).sqrt();
        let mut exponents = Vec::with_capacity(self.nodes.len());
        let mut shift = f64::NEG_INFINITY;
        for (&xi, &w) in self.nodes.iter().zip(&self.weights) {
            let e = w.ln() - g.eval(x + spread * xi);
            shift = shift.max(e);
            exponents.push(e);
        }
        if !shift.is_finite() {
            return Err(HeatError::QuadratureUnderflow { x, tau });
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (&xi, e) in self.nodes.iter().zip(&exponents) {
            let t = (e - shift).exp();
            num += xi * t;
            den += t;
        }
        if den == 0.0 {
            return Err(HeatError::QuadratureUnderflow { x, tau });
        }
        Ok((2.0 / tau).sqrt() * num / den)
    }
}
