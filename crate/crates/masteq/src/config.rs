//! Configuration file schema and resolution into runnable objects.
//!
//! A run is described by four TOML tables: `problem`, `controller`,
//! `estimate`, and `output`. Every key is optional; command-line flags
//! override file keys, and whatever remains unset falls back to the
//! built-in defaults. The fully resolved configuration is echoed into
//! every report so a run can be reproduced from its own output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjoint::EstimateMode;
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::model::{enumerate_states, Channel, Network, RateLaw, TimeFactor};
use crate::problems::{self, BenchmarkProblem};

pub const PROBLEM_NAMES: [&str; 4] = [
    "two-state",
    "isomerization",
    "isomerization-const",
    "tcell",
];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub problem: ProblemTable,
    pub controller: ControllerTable,
    pub estimate: EstimateTable,
    pub output: OutputTable,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProblemTable {
    /// One of the built-in names, or "custom" with a network definition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// First component of the two-state initial value, or the parameter
    /// of the isomerization initial distribution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Chain length of the isomerization problem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<i64>,
    /// Truncated start: keep only this many chain states around the mode
    /// of the initial distribution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Use the literal published form of the second T-cell birth rate
    /// instead of the symmetric reading.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub literal_prime: Option<bool>,
    /// Custom network: species names, one per dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub species: Option<Vec<String>>,
    /// Custom network: inclusive per-species lattice bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(i64, i64)>>,
    /// Custom network: the delta-distributed initial state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<FactorSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<ChannelSpec>>,
}

/// Named scalar time modulation of a custom channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FactorSpec {
    pub name: String,
    /// "sin" or "hill-decay".
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<i32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ChannelSpec {
    /// Jump vector, one entry per species.
    pub change: Vec<i64>,
    pub rate: RateSpec,
    /// Name of the time factor the channel is modulated by.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
    /// Signed coefficient the channel enters its block with.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// State-dependent rate of a custom channel. Species are referenced by
/// name. Kinds: "constant" (value), "linear" (species, coeff),
/// "mass-action-pair" (a, b, coeff), "homeostatic-birth" (multiplier,
/// pair, shifted, shift, coeff).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RateSpec {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub species: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coeff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifted: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ControllerTable {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction_period: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_min: Option<f64>,
    /// Upper step bound; unset means unbounded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_krylov_dim: Option<usize>,
    /// Propagate with the dense matrix exponential instead of Arnoldi.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense: Option<bool>,
    /// Adapt the state space (grow on outflow, periodic shrink).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fsp: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_moan_niesen: Option<bool>,
    /// Use the 1/(m+1) step exponent instead of 1/m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classic_exponent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateTable {
    /// "dual" (signed, needs the full dual), "dual-norm" (needs dual
    /// norms), or "primal-only". The short aliases e1/e2/e3 also work.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Tolerance of the dual solve; defaults to 10 times the primal tol.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_dual: Option<f64>,
    /// Component index of the controlled functional, in the full state
    /// ordering; defaults to the problem's conventional component.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functional_component: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct OutputTable {
    /// Directory the default-named outputs go to.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

/// Everything a subcommand needs to run one solve.
pub struct Resolved {
    /// Fully populated copy of the configuration, for report echoes.
    pub echo: FileConfig,
    pub problem: BenchmarkProblem,
    pub config: ControllerConfig,
    pub mode: EstimateMode,
    pub eps_dual: f64,
    pub functional_component: usize,
    pub fsp: bool,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("parsing {}: {e}", path.display())))
    }

    /// Fills defaults, builds the problem, and validates the controller
    /// settings. `command` names the subcommand for default file names.
    pub fn resolve(&self, command: &str) -> Result<Resolved> {
        let name = self
            .problem
            .name
            .clone()
            .ok_or_else(|| Error::InvalidConfig("no problem selected".into()))?;
        let problem = build_problem(&self.problem, &name, &self.controller)?;

        let defaults = ControllerConfig::default();
        let tol = self.controller.tol.unwrap_or(defaults.tol);
        let t_final = self.controller.t_final.unwrap_or(problem.t_final);
        let eps_dual = self.estimate.eps_dual.unwrap_or(10.0 * tol);
        let config = ControllerConfig {
            tol,
            t_final,
            eps_dual,
            order: self.controller.order.unwrap_or(defaults.order),
            s_max: self.controller.s_max.unwrap_or(defaults.s_max),
            reduction_period: self
                .controller
                .reduction_period
                .unwrap_or(defaults.reduction_period),
            dt_init: self.controller.dt_init.unwrap_or(defaults.dt_init),
            dt_min: self.controller.dt_min.unwrap_or(defaults.dt_min),
            dt_max: self.controller.dt_max.unwrap_or(f64::INFINITY),
            safety: self.controller.safety.unwrap_or(defaults.safety),
            max_states: self.controller.max_states.unwrap_or(defaults.max_states),
            fixed_dt: self.controller.fixed_dt,
            fixed_krylov_dim: self.controller.fixed_krylov_dim,
            dense_propagation: self.controller.dense.unwrap_or(false),
            record_moan_niesen: self.controller.record_moan_niesen.unwrap_or(false),
            classic_exponent: self.controller.classic_exponent.unwrap_or(false),
            quad_points: self.controller.quad_points.unwrap_or(defaults.quad_points),
            estimate: parse_mode(self.estimate.mode.as_deref().unwrap_or("primal-only"))?,
            ..defaults
        };
        config.validate()?;

        let functional_component = self
            .estimate
            .functional_component
            .unwrap_or(problem.functional_component);
        if functional_component >= problem.full_space.len() {
            return Err(Error::InvalidConfig(format!(
                "functional component {functional_component} outside the {}-state space",
                problem.full_space.len()
            )));
        }
        let fsp = self
            .controller
            .fsp
            .unwrap_or(problem.initial_space.len() < problem.full_space.len());

        let dir = self.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
        let stem = format!("{name}-{command}");
        let csv_path = dir.join(
            self.output
                .csv
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{stem}.csv"))),
        );
        let json_path = dir.join(
            self.output
                .json
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{stem}.json"))),
        );

        let mut echo = self.clone();
        echo.problem.name = Some(name);
        echo.controller.tol = Some(config.tol);
        echo.controller.t_final = Some(config.t_final);
        echo.controller.order = Some(config.order);
        echo.controller.s_max = Some(config.s_max);
        echo.controller.reduction_period = Some(config.reduction_period);
        echo.controller.dt_init = Some(config.dt_init);
        echo.controller.dt_min = Some(config.dt_min);
        if config.dt_max.is_finite() {
            echo.controller.dt_max = Some(config.dt_max);
        }
        echo.controller.safety = Some(config.safety);
        echo.controller.max_states = Some(config.max_states);
        echo.controller.dense = Some(config.dense_propagation);
        echo.controller.fsp = Some(fsp);
        echo.controller.record_moan_niesen = Some(config.record_moan_niesen);
        echo.controller.classic_exponent = Some(config.classic_exponent);
        echo.controller.quad_points = Some(config.quad_points);
        echo.estimate.mode = Some(mode_name(config.estimate).into());
        echo.estimate.eps_dual = Some(eps_dual);
        echo.estimate.functional_component = Some(functional_component);
        echo.output.dir = Some(dir);
        echo.output.csv = Some(csv_path.clone());
        echo.output.json = Some(json_path.clone());

        Ok(Resolved {
            echo,
            problem,
            config,
            mode: parse_mode(self.estimate.mode.as_deref().unwrap_or("primal-only"))?,
            eps_dual,
            functional_component,
            fsp,
            csv_path,
            json_path,
        })
    }
}

pub fn parse_mode(s: &str) -> Result<EstimateMode> {
    match s {
        "dual" | "e1" => Ok(EstimateMode::E1),
        "dual-norm" | "e2" => Ok(EstimateMode::E2),
        "primal-only" | "e3" => Ok(EstimateMode::E3),
        other => Err(Error::InvalidConfig(format!(
            "unknown estimate mode '{other}': use dual, dual-norm, or primal-only"
        ))),
    }
}

pub fn mode_name(mode: EstimateMode) -> &'static str {
    match mode {
        EstimateMode::E1 => "dual",
        EstimateMode::E2 => "dual-norm",
        EstimateMode::E3 => "primal-only",
    }
}

fn build_problem(
    p: &ProblemTable,
    name: &str,
    controller: &ControllerTable,
) -> Result<BenchmarkProblem> {
    let sigma_default = match name {
        "two-state" => 1.0,
        _ => 1.0 / 3.0,
    };
    let sigma = p.sigma.unwrap_or(sigma_default);
    let problem = match name {
        "two-state" => problems::two_state(sigma)?,
        "isomerization" => problems::isomerization(p.n.unwrap_or(2000), (sigma, 1.0 - sigma), true)?,
        "isomerization-const" => {
            problems::isomerization(p.n.unwrap_or(2000), (sigma, 1.0 - sigma), false)?
        }
        "tcell" => problems::tcell(p.literal_prime.unwrap_or(false))?,
        "custom" => build_custom(p, controller)?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown problem '{other}': known problems are {}",
                PROBLEM_NAMES.join(", ")
            )))
        }
    };
    match p.window {
        Some(w) => problem.with_chain_window(w),
        None => Ok(problem),
    }
}

fn build_custom(p: &ProblemTable, controller: &ControllerTable) -> Result<BenchmarkProblem> {
    let missing = |key: &str| Error::InvalidConfig(format!("custom problem needs problem.{key}"));
    let species = p.species.as_ref().ok_or_else(|| missing("species"))?;
    let bounds = p.bounds.as_ref().ok_or_else(|| missing("bounds"))?;
    let initial = p
        .initial_state
        .as_ref()
        .ok_or_else(|| missing("initial-state"))?;
    let channel_specs = p.channels.as_ref().ok_or_else(|| missing("channels"))?;
    let t_final = controller
        .t_final
        .ok_or_else(|| Error::InvalidConfig("custom problem needs controller.t-final".into()))?;
    if bounds.len() != species.len() || initial.len() != species.len() {
        return Err(Error::InvalidConfig(
            "bounds and initial-state must have one entry per species".into(),
        ));
    }

    let species_index = |name: &str| -> Result<usize> {
        species
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown species '{name}'")))
    };
    let factor_specs = p.factors.clone().unwrap_or_default();
    let mut factors = Vec::new();
    for f in &factor_specs {
        factors.push(match f.kind.as_str() {
            "sin" => TimeFactor::Sin,
            "hill-decay" => TimeFactor::HillDecay {
                t_scale: f
                    .t_scale
                    .ok_or_else(|| Error::InvalidConfig("hill-decay needs t-scale".into()))?,
                power: f
                    .power
                    .ok_or_else(|| Error::InvalidConfig("hill-decay needs power".into()))?,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown time factor kind '{other}': use sin or hill-decay"
                )))
            }
        });
    }
    let factor_index = |name: &str| -> Result<usize> {
        factor_specs
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown time factor '{name}'")))
    };

    let mut channels = Vec::new();
    for (i, spec) in channel_specs.iter().enumerate() {
        if spec.change.len() != species.len() {
            return Err(Error::InvalidConfig(format!(
                "channel {i}: change vector must have one entry per species"
            )));
        }
        let r = &spec.rate;
        let need = |field: &str, v: Option<f64>| -> Result<f64> {
            v.ok_or_else(|| {
                Error::InvalidConfig(format!("channel {i}: rate kind '{}' needs {field}", r.kind))
            })
        };
        let need_species = |field: &str, v: &Option<String>| -> Result<usize> {
            let name = v.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!("channel {i}: rate kind '{}' needs {field}", r.kind))
            })?;
            species_index(name)
        };
        let law = match r.kind.as_str() {
            "constant" => RateLaw::Constant {
                value: need("value", r.value)?,
            },
            "linear" => RateLaw::Linear {
                species: need_species("species", &r.species)?,
                coeff: r.coeff.unwrap_or(1.0),
            },
            "mass-action-pair" => RateLaw::MassActionPair {
                a: need_species("a", &r.a)?,
                b: need_species("b", &r.b)?,
                coeff: r.coeff.unwrap_or(1.0),
            },
            "homeostatic-birth" => {
                let pair = r.pair.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("channel {i}: homeostatic-birth needs pair"))
                })?;
                RateLaw::HomeostaticBirth {
                    multiplier: need_species("multiplier", &r.multiplier)?,
                    pair: (species_index(&pair.0)?, species_index(&pair.1)?),
                    shifted: need_species("shifted", &r.shifted)?,
                    shift: need("shift", r.shift)?,
                    coeff: r.coeff.unwrap_or(1.0),
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "channel {i}: unknown rate kind '{other}'"
                )))
            }
        };
        channels.push(Channel {
            change: spec.change.clone(),
            law,
            factor: spec.factor.as_deref().map(factor_index).transpose()?,
            weight: spec.weight.unwrap_or(1.0),
        });
    }

    let network = Network {
        species: species.len(),
        channels,
        bounds: bounds.clone(),
        factors,
    };
    if !network.within_bounds(initial) {
        return Err(Error::InvalidConfig(
            "initial-state lies outside the bounds".into(),
        ));
    }
    let cap = controller
        .max_states
        .unwrap_or(ControllerConfig::default().max_states);
    let full_space = enumerate_states(&network, &[initial.clone()], bounds, None, cap)?;
    let mut p0 = vec![0.0; full_space.len()];
    p0[full_space.index_of(initial).unwrap()] = 1.0;
    Ok(BenchmarkProblem {
        name: "custom".into(),
        network,
        full_space: full_space.clone(),
        initial_space: full_space,
        p0,
        t_final,
        functional_component: 0,
        analytic: None,
    })
}
