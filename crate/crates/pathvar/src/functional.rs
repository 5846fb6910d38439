//! Path functionals and the named catalog the CLI exposes.
//!
//! A [`Functional`] wraps an arbitrary map `DiscretePath -> R` together with
//! a name and the caller's integrability note; the toolkit itself cannot
//! check moment hypotheses, so it records the assertion instead. Functionals
//! read the first path component by convention, which makes one catalog work
//! across every family (the diffusion family stacks its state first).

use crate::grid::DiscretePath;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

type EvalFn = dyn Fn(&DiscretePath) -> f64 + Send + Sync;
type GradFn = dyn Fn(&DiscretePath) -> Vec<f64> + Send + Sync;

/// A named scalar functional on paths.
#[derive(Clone)]
pub struct Functional {
    name: String,
    integrability_note: String,
    eval: Arc<EvalFn>,
    node_gradient: Option<Arc<GradFn>>,
}

impl Functional {
    pub fn new(
        name: impl Into<String>,
        integrability_note: impl Into<String>,
        eval: impl Fn(&DiscretePath) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            integrability_note: integrability_note.into(),
            eval: Arc::new(eval),
            node_gradient: None,
        }
    }

    /// Attaches the gradient with respect to the flat node-value vector.
    pub fn with_node_gradient(
        mut self,
        gradient: impl Fn(&DiscretePath) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.node_gradient = Some(Arc::new(gradient));
        self
    }

    pub fn eval(&self, path: &DiscretePath) -> f64 {
        (self.eval)(path)
    }

    /// Gradient of the functional in the node values, when available.
    pub fn node_gradient(&self, path: &DiscretePath) -> Option<Vec<f64>> {
        self.node_gradient.as_ref().map(|g| g(path))
    }

    pub fn has_node_gradient(&self) -> bool {
        self.node_gradient.is_some()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn integrability_note(&self) -> &str {
        &self.integrability_note
    }
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional").field("name", &self.name).finish()
    }
}

/// The fixed functional catalog; every entry reads the first path component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum FunctionalSpec {
    /// `scale * x(1)`
    LinearEndpoint { scale: f64 },
    /// `scale * x(1)^2`
    QuadraticEndpoint { scale: f64 },
    /// `clamp(x(t_mid), lo, hi)` at the node nearest `t = 1/2`
    ClampedMidpoint { lo: f64, hi: f64 },
    /// `clamp(max_k x(t_k), lo, hi)`
    RunningMaxClamp { lo: f64, hi: f64 },
}

impl FunctionalSpec {
    pub fn build(&self) -> Functional {
        match *self {
            FunctionalSpec::LinearEndpoint { scale } => Functional::new(
                format!("linear-endpoint({scale})"),
                "linear in a Gaussian-tailed endpoint; all exponential moments finite",
                move |p: &DiscretePath| scale * p.node(p.grid().steps())[0],
            )
            .with_node_gradient(move |p: &DiscretePath| {
                let mut g = vec![0.0; (p.grid().steps() + 1) * p.dim()];
                g[p.grid().steps() * p.dim()] = scale;
                g
            }),
            FunctionalSpec::QuadraticEndpoint { scale } => Functional::new(
                format!("quadratic-endpoint({scale})"),
                "quadratic in the endpoint; e^{-f} integrable for scale > -1/2 under the Wiener law",
                move |p: &DiscretePath| {
                    let x = p.node(p.grid().steps())[0];
                    scale * x * x
                },
            )
            .with_node_gradient(move |p: &DiscretePath| {
                let mut g = vec![0.0; (p.grid().steps() + 1) * p.dim()];
                g[p.grid().steps() * p.dim()] = 2.0 * scale * p.node(p.grid().steps())[0];
                g
            }),
            FunctionalSpec::ClampedMidpoint { lo, hi } => Functional::new(
                format!("clamped-midpoint({lo},{hi})"),
                "bounded",
                move |p: &DiscretePath| p.node(p.grid().steps() / 2)[0].clamp(lo, hi),
            )
            .with_node_gradient(move |p: &DiscretePath| {
                let mut g = vec![0.0; (p.grid().steps() + 1) * p.dim()];
                let k = p.grid().steps() / 2;
                let x = p.node(k)[0];
                if x > lo && x < hi {
                    g[k * p.dim()] = 1.0;
                }
                g
            }),
            FunctionalSpec::RunningMaxClamp { lo, hi } => Functional::new(
                format!("running-max-clamp({lo},{hi})"),
                "bounded",
                move |p: &DiscretePath| {
                    let mut best = f64::NEG_INFINITY;
                    for k in 0..=p.grid().steps() {
                        best = best.max(p.node(k)[0]);
                    }
                    best.clamp(lo, hi)
                },
            ),
        }
    }
}
