//! Experiment configuration: a single JSON document, fully echoed into
//! every summary so outputs are self-describing.

use anyhow::{bail, Context, Result};
use pathvar::heat::EndpointFn;
use pathvar::policy::{DriftBasis, FeedbackFrame};
use pathvar::variational::OptimizerConfig;
use pathvar::{CameronMartinDrift, DriftSpec, Functional, FunctionalSpec, MeasureSpec, TimeGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GirsanovValidate,
    LawTransport,
    Duality,
    EntropyCriterion,
    ComposeCheck,
    Prekopa,
    ParticlesSim,
    BridgeVsLoop,
}

/// Grid-independent drift description; expanded against the grid at run
/// time so one config works for any `grid_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftConfig {
    Zero,
    Constant {
        rate: Vec<f64>,
    },
    ClosedLoop {
        basis: Vec<DriftBasis>,
        weights: Vec<f64>,
        frame: FeedbackFrame,
    },
    Clipped {
        bound: f64,
        inner: Box<DriftConfig>,
    },
    Retarded {
        lag: f64,
        inner: Box<DriftConfig>,
    },
    /// Heat-smoothed score drift for an endpoint potential.
    Foellmer {
        g: EndpointFn,
    },
}

impl DriftConfig {
    pub fn build(&self, grid: TimeGrid, dim: usize) -> DriftSpec {
        match self {
            DriftConfig::Zero => DriftSpec::zero(grid, dim),
            DriftConfig::Constant { rate } => {
                DriftSpec::OpenLoop { density: CameronMartinDrift::constant(grid, rate) }
            }
            DriftConfig::ClosedLoop { basis, weights, frame } => {
                DriftSpec::closed_loop(basis.clone(), weights.clone(), *frame)
            }
            DriftConfig::Clipped { bound, inner } => {
                pathvar::clip_drift(inner.build(grid, dim), *bound)
            }
            DriftConfig::Retarded { lag, inner } => {
                pathvar::retard_drift(inner.build(grid, dim), *lag)
            }
            DriftConfig::Foellmer { g } => pathvar::variational::foellmer_drift(*g),
        }
    }
}

/// Positive functionals for the product-inequality experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PositiveFunctionalConfig {
    Constant {
        value: f64,
    },
    /// `exp(-scale * x(1))`
    ExpNegLinearEndpoint {
        scale: f64,
    },
    /// `exp(-scale * x(1)^2)`
    ExpNegQuadraticEndpoint {
        scale: f64,
    },
}

impl PositiveFunctionalConfig {
    pub fn build(&self) -> Result<Functional> {
        Ok(match *self {
            PositiveFunctionalConfig::Constant { value } => {
                if !value.is_finite() || value <= 0.0 {
                    bail!("pl functional: constant value must be positive, got {value}");
                }
                Functional::new(format!("const({value})"), "constant", move |_| value)
            }
            PositiveFunctionalConfig::ExpNegLinearEndpoint { scale } => Functional::new(
                format!("exp(-{scale} x(1))"),
                "log-linear endpoint; all moments finite under Gaussian tails",
                move |p| (-scale * p.node(p.grid().steps())[0]).exp(),
            ),
            PositiveFunctionalConfig::ExpNegQuadraticEndpoint { scale } => Functional::new(
                format!("exp(-{scale} x(1)^2)"),
                "log-quadratic endpoint",
                move |p| {
                    let x = p.node(p.grid().steps())[0];
                    (-scale * x * x).exp()
                },
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlConfig {
    pub t: f64,
    pub a: PositiveFunctionalConfig,
    pub b: PositiveFunctionalConfig,
    pub c: PositiveFunctionalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_density: Option<PositiveFunctionalConfig>,
    /// Constant drift rates probed pairwise for the hypothesis (5 levels
    /// give the 5x5 grid).
    #[serde(default = "default_probe_levels")]
    pub probe_levels: Vec<f64>,
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
}

fn default_probe_levels() -> Vec<f64> {
    vec![-1.0, -0.5, 0.0, 0.5, 1.0]
}

fn default_probe_samples() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleConfig {
    DeterministicShift,
    /// Constant-coefficient affine feedback `u̇ = state * x + constant`.
    GaussianLinear {
        state: f64,
        constant: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AssertionOverrides {
    /// Upper bound on |z| for transport checks (default 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_z: Option<f64>,
    /// Upper bound on the duality gap (in addition to weak duality).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gap: Option<f64>,
    /// Relative tolerance for the particle gap-moment law (default 0.05).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_law_rel_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub measure: MeasureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_v: Option<DriftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub statistics: Vec<FunctionalSpec>,
    pub grid_n: usize,
    pub samples_m: usize,
    pub seed: u64,
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_oracle: Option<OracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pl: Option<PlConfig>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub write_paths: bool,
    #[serde(default)]
    pub assertions: AssertionOverrides,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).context("config does not match the expected schema")?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.grid_n == 0 {
            bail!("grid_n: must be positive");
        }
        if self.samples_m < 2 {
            bail!("samples_m: need at least 2 samples");
        }
        self.measure.validate().map_err(|e| anyhow::anyhow!("measure: {e}"))?;
        match self.experiment {
            Experiment::GirsanovValidate => {
                if self.drift.is_none() {
                    bail!("girsanov-validate: field `drift` is required");
                }
            }
            Experiment::LawTransport => {
                if self.drift.is_none() {
                    bail!("law-transport: field `drift` is required");
                }
                if self.statistics.is_empty() {
                    bail!("law-transport: field `statistics` must list at least one functional");
                }
            }
            Experiment::Duality => {
                if self.functional.is_none() {
                    bail!("duality: field `functional` is required");
                }
                if self.drift.is_none() && self.optimizer.is_none() {
                    bail!(
                        "duality: provide `drift` for a fixed-drift gap or `optimizer` to search"
                    );
                }
                if self.optimizer.is_some() {
                    match &self.drift {
                        None => bail!(
                            "duality: the optimizer needs a `drift` family with a closed-loop core"
                        ),
                        Some(d) => {
                            if !has_closed_loop_core(d) {
                                bail!("duality: drift.{}: the optimizer moves closed-loop weights; give a closed-loop core", drift_kind(d));
                            }
                        }
                    }
                }
            }
            Experiment::EntropyCriterion => {
                if self.drift.is_none() {
                    bail!("entropy-criterion: field `drift` is required");
                }
            }
            Experiment::ComposeCheck => {
                if self.drift.is_none() || self.drift_v.is_none() {
                    bail!("compose-check: fields `drift` and `drift_v` are required");
                }
            }
            Experiment::Prekopa => {
                let pl = self.pl.as_ref().context("prekopa: field `pl` is required")?;
                if !(0.0..=1.0).contains(&pl.t) {
                    bail!("pl.t: must lie in [0,1], got {}", pl.t);
                }
            }
            Experiment::ParticlesSim => {
                if !matches!(self.measure, MeasureSpec::Particles(_)) {
                    bail!("particles-sim: measure.family must be `particles`");
                }
            }
            Experiment::BridgeVsLoop => match &self.measure {
                MeasureSpec::Loop { atoms } if atoms.len() == 1 => {}
                MeasureSpec::Loop { .. } => {
                    bail!("bridge-vs-loop: measure.loop must carry exactly one atom")
                }
                _ => bail!("bridge-vs-loop: measure.family must be `loop`"),
            },
        }
        Ok(())
    }
}

fn has_closed_loop_core(d: &DriftConfig) -> bool {
    match d {
        DriftConfig::ClosedLoop { .. } => true,
        DriftConfig::Clipped { inner, .. } | DriftConfig::Retarded { inner, .. } => {
            has_closed_loop_core(inner)
        }
        _ => false,
    }
}

fn drift_kind(d: &DriftConfig) -> &'static str {
    match d {
        DriftConfig::Zero => "zero",
        DriftConfig::Constant { .. } => "constant",
        DriftConfig::ClosedLoop { .. } => "closed-loop",
        DriftConfig::Clipped { .. } => "clipped",
        DriftConfig::Retarded { .. } => "retarded",
        DriftConfig::Foellmer { .. } => "foellmer",
    }
}
