//! Adaptive run loop.
//!
//! Each step attempt goes through: an occasional shrink of the working
//! state space, an outflow check that grows the space until the exit
//! rate fits the budget, Krylov propagation of the Magnus matrix with a
//! per-step residual target, a Magnus defect check with step rejection,
//! and finally the next step-size proposal capped by the Krylov cost of
//! the current step. Per-step residual budgets split the tolerance
//! equally across the three error sources at the rate tol/t_final.

use crate::adjoint::{
    self, DualMode, DualTrajectory, ErrorLedger, EstimateMode, StepContribution,
};
use crate::error::{Error, Result};
use crate::fsp::{self, StateProjection};
use crate::krylov::{self, KrylovResult, VecNorm};
use crate::linalg::{self, dense_expm, norm_inf, SparseMatrix};
use crate::magnus::{self, CommutatorCache};
use crate::model::{Network, PropensityModel, StateSpace};

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Global l1 error budget at t_final.
    pub tol: f64,
    pub t_final: f64,
    /// Magnus order, 2 or 4.
    pub order: usize,
    /// Largest Krylov dimension per exponential.
    pub s_max: usize,
    /// Shrink the state space every this many accepted steps.
    pub reduction_period: usize,
    pub dt_init: f64,
    pub dt_min: f64,
    /// Upper step bound; additionally clamped to t_final at run time.
    pub dt_max: f64,
    pub safety: f64,
    pub estimate: EstimateMode,
    /// Tolerance of the dual solve (estimate modes E1/E2).
    pub eps_dual: f64,
    pub max_states: usize,
    /// Disables all step adaptivity when set.
    pub fixed_dt: Option<f64>,
    /// Forces every exponential to use exactly this Krylov dimension.
    pub fixed_krylov_dim: Option<usize>,
    /// Propagate with a dense matrix exponential instead of Arnoldi.
    pub dense_propagation: bool,
    /// Record the spectral-norm diagnostic per accepted step.
    pub record_moan_niesen: bool,
    /// Use the classical 1/(order+1) exponent in the step proposal.
    pub classic_exponent: bool,
    /// Reject a step when the realized Magnus defect exceeds this many
    /// times its budget.
    pub reject_factor: f64,
    pub residual_norm: VecNorm,
    pub require_probability: bool,
    /// Gauss-Legendre points for the factor integrals.
    pub quad_points: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            tol: 1e-3,
            t_final: 1.0,
            order: 2,
            s_max: 40,
            reduction_period: 10,
            dt_init: 1e-2,
            dt_min: 1e-9,
            dt_max: f64::INFINITY,
            safety: 0.9,
            estimate: EstimateMode::E3,
            eps_dual: 1e-2,
            max_states: 200_000,
            fixed_dt: None,
            fixed_krylov_dim: None,
            dense_propagation: false,
            record_moan_niesen: false,
            classic_exponent: false,
            reject_factor: 2.0,
            residual_norm: VecNorm::L1,
            require_probability: true,
            quad_points: 2,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad("tol must be positive and finite");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be positive and finite");
        }
        if self.order != 2 && self.order != 4 {
            return bad("order must be 2 or 4");
        }
        if !(2..=64).contains(&self.s_max) {
            return bad("s_max must lie in [2, 64]");
        }
        if self.reduction_period == 0 {
            return bad("reduction period must be at least 1");
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad("step bounds must satisfy 0 < dt_min <= dt_init <= dt_max");
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad("safety factor must lie in (0, 1]");
        }
        if self.eps_dual <= 0.0 {
            return bad("eps_dual must be positive");
        }
        if self.reject_factor < 1.0 {
            return bad("reject factor must be at least 1");
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad("fixed dt must be positive");
            }
        }
        if let Some(s) = self.fixed_krylov_dim {
            if s == 0 || s > self.s_max {
                return bad("fixed Krylov dimension must lie in [1, s_max]");
            }
        }
        if !(1..=5).contains(&self.quad_points) {
            return bad("quadrature points must lie in [1, 5]");
        }
        Ok(())
    }
}

/// Where the generator comes from: a network that can be reassembled on
/// a moving state space, or a fixed prebuilt model (dual solves).
pub enum ModelSource<'a> {
    Adaptive {
        network: &'a Network,
        space: StateSpace,
    },
    Fixed(PropensityModel),
}

pub struct RunInput<'a> {
    pub source: ModelSource<'a>,
    pub p0: Vec<f64>,
    /// Enables grow/shrink of the state space (Adaptive source only).
    pub fsp: bool,
    /// ||z||_inf of the controlled functional.
    pub z_norm: f64,
    pub dual: Option<&'a DualTrajectory>,
    /// When set, node data is captured for building a dual trajectory.
    pub capture: Option<DualMode>,
}

impl<'a> RunInput<'a> {
    pub fn new(source: ModelSource<'a>, p0: Vec<f64>) -> Self {
        RunInput {
            source,
            p0,
            fsp: false,
            z_norm: 1.0,
            dual: None,
            capture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Step start time.
    pub t: f64,
    pub dt: f64,
    pub krylov_dim: usize,
    pub rho_norm: f64,
    pub magnus_norm: f64,
    /// dt-weighted outflow estimate.
    pub outflow: f64,
    pub space_size: usize,
    pub moan_niesen: f64,
    pub rejected: bool,
}

/// Node data captured during a run, in local (forward) time.
#[derive(Debug, Clone)]
pub struct CapturedNodes {
    pub times: Vec<f64>,
    pub vectors: Option<Vec<Vec<f64>>>,
    pub norms: Vec<f64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub p: Vec<f64>,
    pub space: StateSpace,
    pub ledger: ErrorLedger,
    pub records: Vec<StepRecord>,
    /// Matrix-vector products on propagation matrices (Arnoldi
    /// applications plus residual evaluations), at the spmv layer.
    pub mvp: usize,
    /// Diagnostic spmv work (spectral-norm estimates), kept out of `mvp`.
    pub diagnostic_spmv: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub captured: Option<CapturedNodes>,
}

/// Step proposal from the realized Magnus defect: the budget-equalizing
/// step scaled by the safety factor, kept within [dt/4, 2 dt] and the
/// global bounds.
#[allow(clippy::too_many_arguments)]
pub fn propose_dt_magnus(
    dt: f64,
    residual: f64,
    tol: f64,
    t_final: f64,
    order: usize,
    safety: f64,
    dt_min: f64,
    dt_max: f64,
    classic: bool,
) -> f64 {
    if residual <= 0.0 {
        return (2.0 * dt).min(dt_max).max(dt_min);
    }
    let expo = if classic {
        1.0 / (order as f64 + 1.0)
    } else {
        1.0 / order as f64
    };
    let raw = (dt * (tol / t_final) / residual).powf(expo) * dt;
    (safety * raw).clamp(0.25 * dt, 2.0 * dt).clamp(dt_min, dt_max)
}

/// Arnoldi-side cap: growing the step by more than s_max/s_n would push
/// the next exponential past the dimension limit.
pub fn cap_dt_arnoldi(dt_magnus: f64, s_n: usize, s_max: usize, dt: f64) -> f64 {
    let cap = s_max as f64 / s_n.max(1) as f64 * dt;
    dt_magnus.min(cap)
}

fn control_weight(
    dual: Option<&DualTrajectory>,
    estimate: EstimateMode,
    a: f64,
    b: f64,
) -> f64 {
    match (dual, estimate) {
        (Some(d), EstimateMode::E1 | EstimateMode::E2) => {
            (d.norm_weight(a, b) / d.z_norm).clamp(1e-6, 1.0)
        }
        _ => 1.0,
    }
}

enum Attempt {
    Accepted(Box<StepData>),
    Rejected(StepRecord),
}

struct StepData {
    propagated: Vec<f64>,
    krylov: KrylovResult,
    magnus_vec: Option<Vec<f64>>,
    magnus_norm: f64,
    outflow: f64,
    fluxes: Vec<(Vec<i64>, f64)>,
}

struct Engine<'a> {
    network: Option<&'a Network>,
    model: PropensityModel,
    cache: CommutatorCache,
    proj: Option<StateProjection>,
    p: Vec<f64>,
    config: &'a ControllerConfig,
    dual: Option<&'a DualTrajectory>,
    fsp_on: bool,
    time_dependent: bool,
    dt_max_eff: f64,
}

impl<'a> Engine<'a> {
    fn reassemble(&mut self, space: &StateSpace) -> Result<()> {
        let network = self.network.expect("adaptive source required");
        self.model = network.assemble(space)?;
        self.cache = magnus::precompute_commutators(&self.model)?;
        Ok(())
    }

    /// Adds one frontier ring to the working space, carrying p over.
    /// Returns false when the space cannot grow any further.
    fn expand_space(&mut self, cap: usize) -> Result<bool> {
        let proj = self.proj.as_ref().unwrap();
        let grown = proj.expand(self.network.unwrap(), cap)?;
        if grown.space.len() == proj.space.len() {
            return Ok(false);
        }
        self.p = grown.space.embed_from(&proj.space, &self.p);
        self.reassemble(&grown.space.clone())?;
        self.proj = Some(grown);
        Ok(true)
    }

    fn propagate(&self, omega: &SparseMatrix, p: &[f64], target: f64) -> Result<KrylovResult> {
        if self.config.dense_propagation {
            let e = dense_expm(&omega.to_dense())?;
            let propagated = e.mul_vec(p);
            Ok(KrylovResult {
                residual: vec![0.0; propagated.len()],
                propagated,
                residual_norm: 0.0,
                dim: 0,
                happy: true,
                applications: 0,
            })
        } else if let Some(s) = self.config.fixed_krylov_dim {
            krylov::expm_apply_fixed(omega, p, s, self.config.residual_norm)
        } else {
            krylov::expm_apply(omega, p, target, self.config.s_max, self.config.residual_norm)
        }
    }

    /// One full step attempt at [t, t + dt]. Expansion side effects
    /// persist even when the attempt is rejected.
    fn attempt(&mut self, t: f64, dt: f64) -> Result<Attempt> {
        let cfg = self.config;
        let t_final = cfg.t_final;
        let w = control_weight(self.dual, cfg.estimate, t, t + dt);
        let reject = |dim: usize, rho: f64, mg: f64, out: f64, size: usize| StepRecord {
            step: 0,
            t,
            dt,
            krylov_dim: dim,
            rho_norm: rho,
            magnus_norm: mg,
            outflow: out,
            space_size: size,
            moan_niesen: 0.0,
            rejected: true,
        };

        // grow the space until the standing exit rate fits the budget
        let mut expansions = 0;
        if self.fsp_on {
            loop {
                let rate = fsp::outflow_rate(&self.model, &self.p, t + 0.5 * dt)?;
                if w * rate < cfg.tol / t_final {
                    break;
                }
                if expansions >= 5 || !self.expand_space(cfg.max_states)? {
                    if cfg.fixed_dt.is_some() {
                        break;
                    }
                    return Ok(Attempt::Rejected(reject(
                        0,
                        0.0,
                        0.0,
                        dt * rate,
                        self.model.dim(),
                    )));
                }
                expansions += 1;
            }
        }

        let rho_target = cfg.tol * dt / (t_final * w);
        let adaptive_krylov =
            !cfg.dense_propagation && cfg.fixed_krylov_dim.is_none() && cfg.fixed_dt.is_none();

        // propagate, then verify the exit rate again on the trapezoid
        // average of the endpoints; mass that crosses the frontier during
        // the step only shows up in the average, so a failing check grows
        // the space and propagates again
        let (terms, krylov) = loop {
            let terms = if self.time_dependent {
                Some(magnus::build_theta(
                    &self.model,
                    &self.cache,
                    t,
                    dt,
                    cfg.order,
                    cfg.quad_points,
                )?)
            } else {
                None
            };
            let omega = match &terms {
                Some(tm) => tm.propagation_matrix()?,
                None => self.model.a_const.scaled(dt),
            };
            let krylov = match self.propagate(&omega, &self.p, rho_target) {
                Ok(k) => k,
                Err(Error::ExpOverflow { .. }) => {
                    return Ok(Attempt::Rejected(reject(0, 0.0, 0.0, 0.0, self.model.dim())))
                }
                Err(e) => return Err(e),
            };
            if adaptive_krylov && !krylov.happy && krylov.residual_norm > rho_target {
                return Ok(Attempt::Rejected(reject(
                    krylov.dim,
                    krylov.residual_norm,
                    0.0,
                    0.0,
                    self.model.dim(),
                )));
            }
            if self.fsp_on {
                let avg: Vec<f64> = self
                    .p
                    .iter()
                    .zip(&krylov.propagated)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                let rate = fsp::outflow_rate(&self.model, &avg, t + 0.5 * dt)?;
                if w * rate >= cfg.tol / t_final {
                    if expansions < 5 && self.expand_space(cfg.max_states)? {
                        expansions += 1;
                        continue;
                    }
                    if cfg.fixed_dt.is_none() {
                        return Ok(Attempt::Rejected(reject(
                            krylov.dim,
                            krylov.residual_norm,
                            0.0,
                            dt * rate,
                            self.model.dim(),
                        )));
                    }
                    // a fixed grid cannot shorten the step; the excess
                    // outflow stays visible in the ledger
                }
            }
            break (terms, krylov);
        };

        // Magnus defect of the step
        let mut magnus_vec: Option<Vec<f64>> = None;
        let mut magnus_norm = 0.0;
        if self.time_dependent {
            if cfg.order == 2 {
                let r = magnus::magnus_residual(terms.as_ref().unwrap(), &self.p)?;
                magnus_norm = cfg.residual_norm.eval(&r);
                magnus_vec = Some(r);
            } else if cfg.fixed_dt.is_none() {
                // step doubling: two half steps against the full step
                let mut doubled = self.p.clone();
                let mut overflow = false;
                for k in 0..2 {
                    let th = magnus::build_theta(
                        &self.model,
                        &self.cache,
                        t + 0.5 * dt * k as f64,
                        0.5 * dt,
                        cfg.order,
                        cfg.quad_points,
                    )?;
                    let om = th.propagation_matrix()?;
                    match self.propagate(&om, &doubled, 0.5 * rho_target) {
                        Ok(kr) => doubled = kr.propagated,
                        Err(Error::ExpOverflow { .. }) => {
                            overflow = true;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
                if overflow {
                    return Ok(Attempt::Rejected(reject(
                        krylov.dim,
                        krylov.residual_norm,
                        0.0,
                        0.0,
                        self.model.dim(),
                    )));
                }
                let defect: Vec<f64> = doubled
                    .iter()
                    .zip(&krylov.propagated)
                    .map(|(a, b)| a - b)
                    .collect();
                magnus_norm = cfg.residual_norm.eval(&defect);
                magnus_vec = Some(defect);
            }
        }

        // weighted defect for control; mode E1 pairs with the dual vector
        let magnus_ctrl = self.magnus_control(t, w, magnus_norm, magnus_vec.as_deref())?;
        if self.time_dependent
            && cfg.fixed_dt.is_none()
            && magnus_ctrl > cfg.reject_factor * cfg.tol * dt / t_final
        {
            return Ok(Attempt::Rejected(reject(
                krylov.dim,
                krylov.residual_norm,
                magnus_norm,
                0.0,
                self.model.dim(),
            )));
        }

        // truncation contribution of the accepted step
        let (outflow, fluxes) = if self.proj.is_some() {
            let outflow =
                fsp::step_outflow_estimate(&self.model, &self.p, &krylov.propagated, t, dt)?;
            let avg: Vec<f64> = self
                .p
                .iter()
                .zip(&krylov.propagated)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let fluxes = fsp::exit_fluxes(
                self.proj.as_ref().unwrap(),
                &self.model,
                t + 0.5 * dt,
                &avg,
            );
            (outflow, fluxes)
        } else {
            (0.0, Vec::new())
        };

        Ok(Attempt::Accepted(Box::new(StepData {
            propagated: krylov.propagated.clone(),
            krylov,
            magnus_vec,
            magnus_norm,
            outflow,
            fluxes,
        })))
    }

    fn magnus_control(
        &self,
        t: f64,
        w: f64,
        magnus_norm: f64,
        magnus_vec: Option<&[f64]>,
    ) -> Result<f64> {
        if let (Some(d), EstimateMode::E1, Some(rv)) =
            (self.dual, self.config.estimate, magnus_vec)
        {
            let q = d.vector_at(t)?;
            let mut acc = 0.0;
            for (j, v) in rv.iter().enumerate() {
                if *v == 0.0 {
                    continue;
                }
                if let Some(k) = d.space.index_of(self.model.space.state(j)) {
                    acc += q[k] * v;
                }
            }
            Ok(acc.abs() / d.z_norm)
        } else {
            Ok(w * magnus_norm)
        }
    }
}

pub fn run(input: RunInput, config: &ControllerConfig) -> Result<RunOutcome> {
    config.validate()?;
    let RunInput {
        source,
        p0,
        fsp,
        z_norm,
        dual,
        capture,
    } = input;
    if z_norm <= 0.0 {
        return Err(Error::InvalidConfig("z_norm must be positive".into()));
    }
    match config.estimate {
        EstimateMode::E1 => {
            if dual.map_or(true, |d| d.vectors.is_none()) {
                return Err(Error::DualStorageMismatch {
                    needed: "full dual vectors",
                    found: "none",
                });
            }
        }
        EstimateMode::E2 => {
            if dual.is_none() {
                return Err(Error::DualStorageMismatch {
                    needed: "dual norms",
                    found: "none",
                });
            }
        }
        EstimateMode::E3 => {}
    }

    let (model, proj, network) = match source {
        ModelSource::Adaptive { network, space } => {
            let model = network.assemble(&space)?;
            let proj = StateProjection::new(network, space);
            (model, Some(proj), Some(network))
        }
        ModelSource::Fixed(model) => (model, None, None),
    };
    if p0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial vector",
            expected: model.dim(),
            got: p0.len(),
        });
    }
    if config.require_probability {
        let min = p0.iter().cloned().fold(f64::INFINITY, f64::min);
        let mass: f64 = p0.iter().sum();
        if min < -1e-14 || (mass - 1.0).abs() > 1e-12 {
            return Err(Error::BadInitialVector {
                reason: format!("min entry {min:.3e}, mass defect {:.3e}", mass - 1.0),
            });
        }
    }

    let spmv_start = linalg::spmv_count();
    let time_dependent = model.is_time_dependent();
    let cache = magnus::precompute_commutators(&model)?;
    let mut engine = Engine {
        network,
        model,
        cache,
        proj,
        p: p0,
        config,
        dual,
        fsp_on: fsp && network.is_some(),
        time_dependent,
        dt_max_eff: config.dt_max.min(config.t_final),
    };

    let has_full_dual = dual.map_or(false, |d| d.vectors.is_some());
    let mut ledger = ErrorLedger::new(z_norm, dual.is_some(), has_full_dual);
    let mut records: Vec<StepRecord> = Vec::new();
    let mut captured = capture.map(|mode| CapturedNodes {
        times: vec![0.0],
        vectors: match mode {
            DualMode::Full => Some(vec![engine.p.clone()]),
            DualMode::Norm => None,
        },
        norms: vec![norm_inf(&engine.p)],
    });

    let t_final = config.t_final;
    let mut t = 0.0f64;
    let mut dt_next = config
        .fixed_dt
        .unwrap_or(config.dt_init)
        .min(engine.dt_max_eff);
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut diagnostic_spmv = 0usize;
    let mut pending_dropped: Vec<(Vec<i64>, f64)> = Vec::new();
    let mut pending_dropped_mass = 0.0f64;
    let mut last_shrink_at = usize::MAX;

    while t < t_final - 1e-12 * t_final.max(1.0) {
        // periodic shrink
        if engine.fsp_on
            && accepted > 0
            && accepted % config.reduction_period == 0
            && last_shrink_at != accepted
        {
            last_shrink_at = accepted;
            let proj = engine.proj.as_ref().unwrap();
            let threshold = config.tol * 1e-4 / proj.space.len() as f64;
            let max_drop = 0.05 * config.tol - proj.dropped_mass;
            if max_drop > 0.0 {
                let outcome =
                    proj.shrink(engine.network.unwrap(), &engine.p, threshold, max_drop);
                if outcome.projection.space.len() != proj.space.len() {
                    let space = outcome.projection.space.clone();
                    engine.p = outcome.kept_p;
                    engine.proj = Some(outcome.projection);
                    engine.reassemble(&space)?;
                    pending_dropped_mass += outcome.dropped_mass;
                    pending_dropped.extend(outcome.removed);
                }
            }
        }

        let remaining = t_final - t;
        let mut dt = dt_next.min(remaining);
        if remaining - dt < config.dt_min {
            dt = remaining;
        }

        match engine.attempt(t, dt)? {
            Attempt::Rejected(mut rec) => {
                rec.step = records.len();
                records.push(rec);
                rejected += 1;
                let halved = 0.5 * dt;
                if halved < config.dt_min {
                    return Err(Error::StepSizeUnderflow {
                        dt: halved,
                        dt_min: config.dt_min,
                        t,
                    });
                }
                dt_next = halved;
            }
            Attempt::Accepted(data) => {
                let moan = if config.record_moan_niesen {
                    diagnostic_spmv += 60;
                    magnus::moan_niesen_value(&engine.model, t, dt)?
                } else {
                    0.0
                };
                let rho_norm = engine.config.residual_norm.eval(&data.krylov.residual);
                adjoint::accumulate_step(
                    &mut ledger,
                    dual,
                    &StepContribution {
                        t,
                        dt,
                        magnus_vec: data.magnus_vec.as_deref(),
                        magnus_l1: data.magnus_norm,
                        rho_vec: Some(&data.krylov.residual),
                        rho_l1: rho_norm,
                        outflow: data.outflow,
                        exit_fluxes: &data.fluxes,
                        dropped: &pending_dropped,
                        dropped_mass: pending_dropped_mass,
                        space: &engine.model.space,
                    },
                )?;
                pending_dropped.clear();
                pending_dropped_mass = 0.0;
                records.push(StepRecord {
                    step: records.len(),
                    t,
                    dt,
                    krylov_dim: data.krylov.dim,
                    rho_norm,
                    magnus_norm: data.magnus_norm,
                    outflow: data.outflow,
                    space_size: engine.model.dim(),
                    moan_niesen: moan,
                    rejected: false,
                });
                engine.p = data.propagated;
                if dt == remaining {
                    t = t_final;
                } else {
                    t += dt;
                }
                accepted += 1;
                if let Some(nodes) = captured.as_mut() {
                    nodes.times.push(t);
                    nodes.norms.push(norm_inf(&engine.p));
                    if let Some(vs) = nodes.vectors.as_mut() {
                        vs.push(engine.p.clone());
                    }
                }

                // next step size
                dt_next = if let Some(fixed) = config.fixed_dt {
                    fixed
                } else if !engine.time_dependent {
                    let growth = config.s_max as f64 / data.krylov.dim.max(1) as f64;
                    (growth * dt).clamp(config.dt_min, engine.dt_max_eff)
                } else {
                    let w = control_weight(dual, config.estimate, t - dt, t);
                    let ctrl = engine.magnus_control(
                        t - dt,
                        w,
                        data.magnus_norm,
                        data.magnus_vec.as_deref(),
                    )?;
                    let dt_m = propose_dt_magnus(
                        dt,
                        ctrl,
                        config.tol,
                        t_final,
                        config.order,
                        config.safety,
                        config.dt_min,
                        engine.dt_max_eff,
                        config.classic_exponent,
                    );
                    if !config.dense_propagation && data.krylov.dim > 0 {
                        cap_dt_arnoldi(dt_m, data.krylov.dim, config.s_max, dt)
                    } else {
                        dt_m
                    }
                };
            }
        }
    }

    let mvp = (linalg::spmv_count() - spmv_start) as usize - diagnostic_spmv;
    Ok(RunOutcome {
        p: engine.p,
        space: engine.model.space.clone(),
        ledger,
        records,
        mvp,
        diagnostic_spmv,
        accepted_steps: accepted,
        rejected_steps: rejected,
        captured,
    })
}
