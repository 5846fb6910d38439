//! The four measure families behind a single contract.
//!
//! Each family supplies three maps on a common grid:
//!
//! * [`sample_base`] — draw a coupled pair `(W, β)`: the path `W` under the
//!   family's law and the Brownian motion `β` that drives it;
//! * [`perturb`] — push a base pair through a drift `u`, producing the
//!   controlled path `W^u` (and, where the family admits one, the shift
//!   `w^u` with `W^u = W + w^u`);
//! * [`beta_functional`] — recover the driving `β` from a path alone.
//!
//! The contract ties them together: `W^0 = W` exactly, and
//! `β ∘ W^u = β + u`, i.e. feeding the controlled path back through the
//! β-functional returns the shifted noise. For the Wiener and bridge
//! families both identities hold at machine precision; the Euler families
//! hold them wherever no sub-stepping fired and to `O(Δt)` otherwise.
//!
//! Families:
//!
//! * **wiener** — `β = W`, perturbation is the additive shift `W + u`.
//! * **bridge(a)** — the path pinned to `a` at `t = 1`, built from its
//!   driving noise as `W(t_k) = a t_k + (1-t_k) Σ_{j<k} Δβ_j/(1-t_j)`;
//!   the final node is `a` by construction, never by division at `t = 1`.
//! * **loop(atoms)** — a finite mixture of bridges with kernel drift
//!   `h'/h`; sampling draws an endpoint atom, samples that bridge, and
//!   recomputes `β` through the loop functional (not the bridge one).
//! * **particles** — the ordered repelling system of
//!   [`particles::integrate_particles`]; `β` is recovered from the
//!   compensated martingale part, scaled by `1/σ`.
//! * **diffusion** — a scalar state `X` with `dX = σ(X)dβ + b(X)dt`
//!   stacked with its own driving noise, `W = (X, β)`; the driving
//!   dimension is 1 while the path dimension is 2.

use crate::drift::{brownian_increments, CameronMartinDrift};
use crate::grid::{DiscretePath, GridError, Increments, TimeGrid};
use crate::policy::{CompiledDrift, DriftSpec, PolicyError};
use crate::rng::RandomSource;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod kernel;
mod particles;

pub use kernel::{loop_kernel, LoopKernel};
pub use particles::{integrate_particles, ParticleScheme};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid measure spec at {field}: {message}")]
    InvalidSpec { field: String, message: String },
    #[error("path dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loop kernel underflow at t={t}: every atom exponent below -700")]
    KernelUnderflow { t: f64 },
    #[error("particle sub-step budget exhausted in cell {cell}")]
    SubStepBudget { cell: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn not_positive(v: f64) -> bool {
    !v.is_finite() || v <= 0.0
}

/// One endpoint atom of a loop mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopAtom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// The repelling particle system `dZ_i = σ dB_i + (b Z_i + c) dt + γ Σ dt/(Z_i - Z_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlesSpec {
    pub sigma: f64,
    /// Linear drift coefficient `b`.
    pub mean_reversion: f64,
    /// Constant drift `c`.
    pub constant_drift: f64,
    /// Pairwise repulsion strength `γ`.
    pub repulsion: f64,
    /// Strictly increasing initial configuration `z₀`.
    pub initial: Vec<f64>,
    #[serde(default)]
    pub scheme: ParticleScheme,
}

/// Scalar coefficient functions for the diffusion family; all variants are
/// Lipschitz, and the caller vouches for boundedness where it matters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Coefficient {
    Const {
        value: f64,
    },
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// `amplitude * tanh(rate * x)` — bounded and Lipschitz.
    Tanh {
        amplitude: f64,
        rate: f64,
    },
}

impl Coefficient {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Const { value } => *value,
            Coefficient::Affine { slope, intercept } => slope * x + intercept,
            Coefficient::Tanh { amplitude, rate } => amplitude * (rate * x).tanh(),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Coefficient::Const { .. })
    }
}

/// Scalar diffusion `dX = σ(X) dβ + b(X) dt`, `X(0) = start`, observed
/// jointly with its driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub sigma: Coefficient,
    pub drift: Coefficient,
    pub start: f64,
}

/// Descriptor of the base measure `ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MeasureSpec {
    Wiener { dim: usize },
    Bridge { endpoint: Vec<f64> },
    Loop { atoms: Vec<LoopAtom> },
    Particles(ParticlesSpec),
    Diffusion(DiffusionSpec),
}

impl MeasureSpec {
    /// Dimension of sampled paths.
    pub fn path_dim(&self) -> usize {
        match self {
            MeasureSpec::Wiener { dim } => *dim,
            MeasureSpec::Bridge { endpoint } => endpoint.len(),
            MeasureSpec::Loop { atoms } => atoms[0].point.len(),
            MeasureSpec::Particles(p) => p.initial.len(),
            MeasureSpec::Diffusion(_) => 2,
        }
    }

    /// Dimension of the driving Brownian motion, and therefore of every
    /// admissible drift. Equal to [`Self::path_dim`] except for the
    /// diffusion family, whose stacked path carries its scalar noise.
    pub fn driving_dim(&self) -> usize {
        match self {
            MeasureSpec::Diffusion(_) => 1,
            other => other.path_dim(),
        }
    }

    /// Checks the family invariants, reporting the offending field.
    pub fn validate(&self) -> Result<(), MeasureError> {
        let fail = |field: &str, message: String| {
            Err(MeasureError::InvalidSpec { field: field.to_string(), message })
        };
        match self {
            MeasureSpec::Wiener { dim } => {
                if *dim == 0 {
                    return fail("wiener.dim", "dimension must be positive".into());
                }
            }
            MeasureSpec::Bridge { endpoint } => {
                if endpoint.is_empty() {
                    return fail("bridge.endpoint", "endpoint must be non-empty".into());
                }
                if endpoint.iter().any(|v| !v.is_finite()) {
                    return fail("bridge.endpoint", "endpoint must be finite".into());
                }
            }
            MeasureSpec::Loop { atoms } => {
                if atoms.is_empty() {
                    return fail("loop.atoms", "need at least one atom".into());
                }
                let dim = atoms[0].point.len();
                if dim == 0 {
                    return fail("loop.atoms", "atom points must be non-empty".into());
                }
                if atoms.iter().any(|a| a.point.len() != dim) {
                    return fail("loop.atoms", "all atoms must share one dimension".into());
                }
                if atoms.iter().any(|a| not_positive(a.weight)) {
                    return fail("loop.atoms", "weights must be strictly positive".into());
                }
                let total: f64 = atoms.iter().map(|a| a.weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return fail(
                        "loop.atoms",
                        format!("weights sum to {total}, expected 1 within 1e-12"),
                    );
                }
            }
            MeasureSpec::Particles(p) => {
                if p.initial.is_empty() {
                    return fail("particles.z0", "need at least one particle".into());
                }
                if not_positive(p.sigma) {
                    return fail(
                        "particles.sigma",
                        format!("sigma must be positive, got {}", p.sigma),
                    );
                }
                if p.repulsion < 0.0 {
                    return fail("particles.gamma", "repulsion must be nonnegative".into());
                }
                if p.sigma * p.sigma > 2.0 * p.repulsion {
                    return fail(
                        "particles.sigma",
                        format!(
                            "collision-freedom requires sigma^2 <= 2*gamma; got sigma^2 = {} > {}",
                            p.sigma * p.sigma,
                            2.0 * p.repulsion
                        ),
                    );
                }
                if p.initial.windows(2).any(|w| w[1] <= w[0] || w[1].is_nan() || w[0].is_nan()) {
                    return fail(
                        "particles.z0",
                        "initial configuration must be strictly increasing".into(),
                    );
                }
                if not_positive(p.scheme.gap_floor) {
                    return fail("particles.scheme.gap_floor", "gap floor must be positive".into());
                }
            }
            MeasureSpec::Diffusion(d) => {
                if !d.start.is_finite() {
                    return fail("diffusion.start", "start must be finite".into());
                }
            }
        }
        Ok(())
    }
}

/// A coupled sample: the path `W` under `ν` and the Brownian motion `β`
/// driving it (same grid; `β(0) = 0`; `β` carries the driving dimension).
///
/// The pair also keeps the driving increments it was built from, so a
/// perturbation consumes the very numbers the sampler produced; `β` is
/// their cumulative path.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePair {
    pub w: DiscretePath,
    pub beta: DiscretePath,
    driving: Increments,
}

impl BasePair {
    pub fn new(w: DiscretePath, driving: Increments) -> Self {
        Self { beta: driving.path(), w, driving }
    }

    /// The cell increments of `β`.
    pub fn driving(&self) -> &Increments {
        &self.driving
    }
}

/// The image of a base pair under a drift.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledPath {
    /// The realized `W^u`.
    pub path: DiscretePath,
    /// Shift `w^u` with `path = W + w^u`, exact at the nodes, when the
    /// family provides one.
    pub shift: Option<CameronMartinDrift>,
}

/// A controlled path together with the density of `u` realized along it —
/// the element of `H` the reweighting and kinetic-energy formulas consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub controlled: ControlledPath,
    pub realized: CameronMartinDrift,
}

/// Draws a coupled `(W, β)` under the family of `spec`.
///
/// The same `rs` passed to [`perturb`] couples the two: with `u = 0` the
/// perturbed path reproduces `W` exactly, including any sub-step refinement
/// noise in the particle family.
pub fn sample_base(
    spec: &MeasureSpec,
    grid: TimeGrid,
    rs: RandomSource,
) -> Result<BasePair, MeasureError> {
    spec.validate()?;
    match spec {
        MeasureSpec::Wiener { dim } => {
            let dbeta = brownian_increments(grid, *dim, rs);
            let base = BasePair::new(dbeta.path(), dbeta);
            Ok(base)
        }
        MeasureSpec::Bridge { endpoint } => {
            let dbeta = brownian_increments(grid, endpoint.len(), rs);
            let w = bridge_path(grid, endpoint, &dbeta, None)?;
            Ok(BasePair::new(w, dbeta))
        }
        MeasureSpec::Loop { atoms } => {
            // the atom draw comes first so the increment stream is aligned
            // across atom choices
            let mut rng = rs.rng();
            let pick: f64 = rng.gen();
            let mut cum = 0.0;
            let mut chosen = &atoms[atoms.len() - 1];
            for atom in atoms {
                cum += atom.weight;
                if pick < cum {
                    chosen = atom;
                    break;
                }
            }
            let dim = chosen.point.len();
            let scale = grid.dt().sqrt();
            let values = (0..grid.steps() * dim)
                .map(|_| {
                    let z: f64 =
                        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    z * scale
                })
                .collect();
            let dbridge = Increments::from_values(grid, dim, values);
            let pinned = bridge_path(grid, &chosen.point, &dbridge, None)?;
            // β under the loop measure is the loop functional of the path,
            // not the bridge noise that happened to build it; the sample is
            // then rebuilt through the canonical Euler recursion so a
            // zero-drift perturbation reproduces it bit for bit
            let driving = beta_functional(spec, &pinned)?.increments();
            let provisional = BasePair::new(pinned, driving.clone());
            let zero = DriftSpec::zero(grid, dim);
            let w = perturb_full(spec, &provisional, &zero, rs)?.controlled.path;
            Ok(BasePair::new(w, driving))
        }
        MeasureSpec::Particles(p) => {
            let dbeta = brownian_increments(grid, p.initial.len(), rs);
            let w = integrate_particles(p, &dbeta, rs)?;
            Ok(BasePair::new(w, dbeta))
        }
        MeasureSpec::Diffusion(d) => {
            let dbeta = brownian_increments(grid, 1, rs);
            let mut x = d.start;
            let mut w = DiscretePath::zeros(grid, 2);
            let beta = dbeta.path();
            w.node_mut(0)[0] = x;
            for k in 0..grid.steps() {
                x += d.sigma.eval(x) * dbeta.cell(k)[0] + d.drift.eval(x) * grid.dt();
                w.node_mut(k + 1)[0] = x;
                w.node_mut(k + 1)[1] = beta.node(k + 1)[0];
            }
            Ok(BasePair::new(w, dbeta))
        }
    }
}

/// Applies the drift `u` to a base pair, returning the controlled path.
pub fn perturb(
    spec: &MeasureSpec,
    base: &BasePair,
    u: &DriftSpec,
    rs: RandomSource,
) -> Result<ControlledPath, MeasureError> {
    Ok(perturb_full(spec, base, u, rs)?.controlled)
}

/// [`perturb`] plus the realized drift density.
pub fn perturb_full(
    spec: &MeasureSpec,
    base: &BasePair,
    u: &DriftSpec,
    rs: RandomSource,
) -> Result<Perturbation, MeasureError> {
    let compiled = u.compile(base.w.grid(), spec.driving_dim())?;
    perturb_compiled(spec, base, &compiled, rs)
}

/// [`perturb_full`] with a pre-validated policy; Monte Carlo drivers use
/// this to compile the drift once per estimate rather than once per sample.
pub fn perturb_compiled(
    spec: &MeasureSpec,
    base: &BasePair,
    u: &CompiledDrift,
    rs: RandomSource,
) -> Result<Perturbation, MeasureError> {
    let grid = base.w.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let dim = spec.driving_dim();
    if base.w.dim() != spec.path_dim() {
        return Err(MeasureError::DimensionMismatch {
            expected: spec.path_dim(),
            got: base.w.dim(),
        });
    }
    if u.dim() != dim || u.grid().steps() != n {
        return Err(MeasureError::DimensionMismatch { expected: dim, got: u.dim() });
    }
    let dbeta = base.driving();
    let mut eval = u.evaluator();
    let mut realized = CameronMartinDrift::zero(grid, dim);

    match spec {
        MeasureSpec::Wiener { .. } => {
            let mut path = DiscretePath::zeros(grid, dim);
            path.node_mut(0).copy_from_slice(base.w.node(0));
            let mut state = base.w.node(0).to_vec();
            for k in 0..n {
                let rate = realized.cell_mut(k);
                eval.density(k, grid.node(k), &state, base.w.node(k), rate)?;
                for c in 0..dim {
                    state[c] += dbeta.cell(k)[c] + rate[c] * dt;
                }
                path.node_mut(k + 1).copy_from_slice(&state);
            }
            let shift = Some(realized.clone());
            Ok(Perturbation { controlled: ControlledPath { path, shift }, realized })
        }
        MeasureSpec::Bridge { endpoint } => {
            let path =
                bridge_path_with_policy(grid, endpoint, dbeta, &mut eval, &base.w, &mut realized)?;
            let shift = Some(shift_between(&base.w, &path));
            Ok(Perturbation { controlled: ControlledPath { path, shift }, realized })
        }
        MeasureSpec::Loop { atoms } => {
            let mut path = DiscretePath::zeros(grid, dim);
            path.node_mut(0).copy_from_slice(base.w.node(0));
            let mut state = base.w.node(0).to_vec();
            for k in 0..n {
                let rate = realized.cell_mut(k);
                eval.density(k, grid.node(k), &state, base.w.node(k), rate)?;
                let kernel = loop_kernel(grid.node(k), &state, atoms)?;
                for c in 0..dim {
                    state[c] += dbeta.cell(k)[c] + rate[c] * dt + kernel.drift[c] * dt;
                }
                path.node_mut(k + 1).copy_from_slice(&state);
            }
            let shift = Some(shift_between(&base.w, &path));
            Ok(Perturbation { controlled: ControlledPath { path, shift }, realized })
        }
        MeasureSpec::Particles(p) => {
            let ctx = particles::CellContext::new(p, rs);
            let mut path = DiscretePath::zeros(grid, dim);
            let mut state = p.initial.clone();
            path.node_mut(0).copy_from_slice(&state);
            for k in 0..n {
                let rate = realized.cell_mut(k);
                eval.density(k, grid.node(k), &state, base.w.node(k), rate)?;
                ctx.advance(k, &mut state, dbeta.cell(k), rate, dt)?;
                path.node_mut(k + 1).copy_from_slice(&state);
            }
            let shift = Some(shift_between(&base.w, &path));
            Ok(Perturbation { controlled: ControlledPath { path, shift }, realized })
        }
        MeasureSpec::Diffusion(d) => {
            let mut path = DiscretePath::zeros(grid, 2);
            let mut x = d.start;
            let mut noise = 0.0; // β + u along the controlled pair
            path.node_mut(0)[0] = x;
            for k in 0..n {
                let rate = realized.cell_mut(k);
                let controlled_state = [x, noise];
                eval.density(k, grid.node(k), &controlled_state, base.w.node(k), rate)?;
                let shifted = dbeta.cell(k)[0] + rate[0] * dt;
                x += d.sigma.eval(x) * shifted + d.drift.eval(x) * dt;
                noise += shifted;
                path.node_mut(k + 1)[0] = x;
                path.node_mut(k + 1)[1] = noise;
            }
            // the stacked path decomposes as W + w^u only for constant σ
            let shift = d.sigma.is_const().then(|| shift_between(&base.w, &path));
            Ok(Perturbation { controlled: ControlledPath { path, shift }, realized })
        }
    }
}

/// Recovers the driving Brownian path from a path under `spec`.
///
/// Wiener: the identity. Bridge: the cell-by-cell inversion of the sampler;
/// the final cell's driving increment never enters a pinned path, so the
/// recovered `β` is exact on nodes `0..=N-1` and extended flat to node `N`.
/// Loop and particles: left-endpoint quadrature of the compensator, the
/// exact inverse of the Euler recursion wherever no sub-stepping fired.
/// Diffusion: the stacked noise component.
pub fn beta_functional(
    spec: &MeasureSpec,
    path: &DiscretePath,
) -> Result<DiscretePath, MeasureError> {
    if path.dim() != spec.path_dim() {
        return Err(MeasureError::DimensionMismatch { expected: spec.path_dim(), got: path.dim() });
    }
    let grid = path.grid();
    let n = grid.steps();
    let dt = grid.dt();
    match spec {
        MeasureSpec::Wiener { .. } => Ok(path.clone()),
        MeasureSpec::Bridge { endpoint } => {
            let dim = endpoint.len();
            let mut beta = DiscretePath::zeros(grid, dim);
            // Δβ_k = ΔW_k - aΔt + Δt (W_{k+1} - a t_{k+1})/(1 - t_{k+1}),
            // the right-endpoint form that inverts the sampler exactly;
            // defined for k+1 <= N-1, so node N keeps the last value.
            for k in 0..n.saturating_sub(1) {
                let rem_next = grid.remaining(k + 1);
                for (c, a) in endpoint.iter().enumerate() {
                    let w_next = path.node(k + 1)[c];
                    let w_cur = path.node(k)[c];
                    let centered_next = w_next - a * grid.node(k + 1);
                    let inc = w_next - w_cur - a * dt + dt * centered_next / rem_next;
                    beta.node_mut(k + 1)[c] = beta.node(k)[c] + inc;
                }
            }
            for c in 0..dim {
                beta.node_mut(n)[c] = beta.node(n - 1)[c];
            }
            Ok(beta)
        }
        MeasureSpec::Loop { atoms } => {
            let dim = spec.path_dim();
            let mut beta = DiscretePath::zeros(grid, dim);
            let mut compensator = vec![0.0; dim];
            for k in 0..n {
                let kernel = loop_kernel(grid.node(k), path.node(k), atoms)?;
                for (c, comp) in compensator.iter_mut().enumerate() {
                    beta.node_mut(k + 1)[c] = path.node(k + 1)[c] - (*comp + kernel.drift[c] * dt);
                    *comp += kernel.drift[c] * dt;
                }
                // the path starts at 0, so node 0 is already correct
            }
            Ok(beta)
        }
        MeasureSpec::Particles(p) => {
            let dim = p.initial.len();
            let mut beta = DiscretePath::zeros(grid, dim);
            let mut compensator: Vec<f64> = vec![0.0; dim];
            for k in 0..n {
                let z = path.node(k);
                for i in 0..dim {
                    let mut repulsion = 0.0;
                    for j in 0..dim {
                        if j != i {
                            repulsion += 1.0 / (z[i] - z[j]);
                        }
                    }
                    compensator[i] +=
                        (p.mean_reversion * z[i] + p.constant_drift + p.repulsion * repulsion) * dt;
                    beta.node_mut(k + 1)[i] =
                        (path.node(k + 1)[i] - p.initial[i] - compensator[i]) / p.sigma;
                }
            }
            Ok(beta)
        }
        MeasureSpec::Diffusion(_) => {
            let mut beta = DiscretePath::zeros(grid, 1);
            for k in 0..=n {
                beta.node_mut(k)[0] = path.node(k)[1];
            }
            Ok(beta)
        }
    }
}

/// Base pair seen by a drift composed after `v`: the controlled path with
/// its noise shifted by the realized `v`, which is `β ∘ W^v` by the
/// recovery identity.
pub fn composed_base(base: &BasePair, after_v: &Perturbation) -> Result<BasePair, MeasureError> {
    let driving = base.driving().add(&after_v.realized.increments())?;
    Ok(BasePair::new(after_v.controlled.path.clone(), driving))
}

/// Residual of the composition law `W^u ∘ W^v = W^{v + u∘W^v}`:
/// the sup-norm gap between applying `u` after `v` and applying the single
/// combined drift to the original base.
pub fn compose_check(
    spec: &MeasureSpec,
    u: &DriftSpec,
    v: &DriftSpec,
    base: &BasePair,
    rs: RandomSource,
) -> Result<f64, MeasureError> {
    let inner = perturb_full(spec, base, v, rs)?;
    let shifted = composed_base(base, &inner)?;
    let outer = perturb_full(spec, &shifted, u, rs)?;
    // u realized along W^v is exactly the composed drift's extra density
    let combined = DriftSpec::open_loop(inner.realized.add(&outer.realized)?);
    let direct = perturb_full(spec, base, &combined, rs)?;
    let limit = outer.controlled.path.grid().steps();
    Ok(outer.controlled.path.sup_distance(&direct.controlled.path, limit)?)
}

/// Residual of the recovery identity `β ∘ W^u = β + u`: feeds the
/// controlled path through the β-functional and compares with
/// `base.β + realized u`. For the bridge family the comparison stops at
/// node `N-1`, where the functional is informative.
pub fn condition_iv_residual(
    spec: &MeasureSpec,
    base: &BasePair,
    u: &DriftSpec,
    rs: RandomSource,
) -> Result<f64, MeasureError> {
    let pert = perturb_full(spec, base, u, rs)?;
    let recovered = beta_functional(spec, &pert.controlled.path)?;
    let expected = base.driving().add(&pert.realized.increments())?.path();
    let limit = match spec {
        MeasureSpec::Bridge { .. } => base.w.grid().steps() - 1,
        _ => base.w.grid().steps(),
    };
    Ok(recovered.sup_distance(&expected, limit)?)
}

/// Shift drift whose induced path is exactly `to - from` at every node.
fn shift_between(from: &DiscretePath, to: &DiscretePath) -> CameronMartinDrift {
    let grid = from.grid();
    let n = grid.steps();
    let dim = from.dim().min(to.dim());
    let dt = grid.dt();
    let mut density = vec![0.0; n * dim];
    for k in 0..n {
        for c in 0..dim {
            let d_next = to.node(k + 1)[c] - from.node(k + 1)[c];
            let d_cur = to.node(k)[c] - from.node(k)[c];
            density[k * dim + c] = (d_next - d_cur) / dt;
        }
    }
    CameronMartinDrift::from_density(grid, dim, density)
}

/// The pinned-path construction `W(t_k) = a t_k + (1-t_k) Σ_{j<k} Δξ_j/(1-t_j)`
/// shared by the bridge sampler and the bridge perturbation; `policy`, when
/// present, adds its density to the driving increments cell by cell.
fn bridge_path(
    grid: TimeGrid,
    endpoint: &[f64],
    driving: &Increments,
    policy: Option<(&mut crate::policy::DriftEval<'_>, &DiscretePath, &mut CameronMartinDrift)>,
) -> Result<DiscretePath, MeasureError> {
    match policy {
        None => {
            let dim = endpoint.len();
            let n = grid.steps();
            let mut path = DiscretePath::zeros(grid, dim);
            let mut sum = vec![0.0; dim];
            for k in 0..n {
                let rem = grid.remaining(k);
                for c in 0..dim {
                    sum[c] += driving.cell(k)[c] / rem;
                    path.node_mut(k + 1)[c] =
                        endpoint[c] * grid.node(k + 1) + grid.remaining(k + 1) * sum[c];
                }
            }
            Ok(path)
        }
        Some((eval, base, realized)) => {
            let dim = endpoint.len();
            let n = grid.steps();
            let dt = grid.dt();
            let mut path = DiscretePath::zeros(grid, dim);
            let mut sum = vec![0.0; dim];
            let mut state = vec![0.0; dim];
            for k in 0..n {
                let rate = realized.cell_mut(k);
                eval.density(k, grid.node(k), &state, base.node(k), rate)?;
                let rem = grid.remaining(k);
                for c in 0..dim {
                    sum[c] += (driving.cell(k)[c] + rate[c] * dt) / rem;
                    state[c] = endpoint[c] * grid.node(k + 1) + grid.remaining(k + 1) * sum[c];
                    path.node_mut(k + 1)[c] = state[c];
                }
            }
            Ok(path)
        }
    }
}

fn bridge_path_with_policy(
    grid: TimeGrid,
    endpoint: &[f64],
    driving: &Increments,
    eval: &mut crate::policy::DriftEval<'_>,
    base: &DiscretePath,
    realized: &mut CameronMartinDrift,
) -> Result<DiscretePath, MeasureError> {
    bridge_path(grid, endpoint, driving, Some((eval, base, realized)))
}

#[cfg(test)]
mod tests;
