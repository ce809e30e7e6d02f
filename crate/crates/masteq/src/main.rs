//! Batch front end: parse a config file and flags, run solves, and write
//! machine-readable reports.
//!
//! Every solve emits two files: the per-step CSV table and a JSON report
//! carrying the fully resolved configuration, so a run can be repeated
//! from its own output. Exit codes: 0 on success, 2 on a configuration
//! error, 3 when the solver aborts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use masteq::adjoint::{self, DualMode, DualTrajectory, ErrorFunctional, EstimateMode};
use masteq::config::{self, FileConfig, Resolved, PROBLEM_NAMES};
use masteq::controller::{self, ModelSource, RunInput, RunOutcome, StepRecord};
use masteq::problems;
use masteq::report::{
    self, CompareReport, ConvergenceReport, ConvergenceSeries, FspCompareReport,
    FunctionalReport, RunReport,
};
use masteq::{Error, Result};

/// Adaptive Magnus-Krylov solver for master equations.
#[derive(Parser)]
#[command(name = "masteq", version)]
struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one problem and write the step table and report.
    Run(RunFlags),
    /// Solve the same problem once per estimate mode.
    CompareEstimates(RunFlags),
    /// Compare the outflow estimate with the realized probability loss
    /// of an exactly propagated truncation.
    FspCompare(RunFlags),
    /// Record the Magnus convergence diagnostic on every accepted step.
    MagnusDiagnostic(RunFlags),
    /// Fixed-step order study of the propagator.
    Convergence(ConvergenceFlags),
    /// Print the built-in problem names.
    ListProblems,
}

#[derive(Args)]
struct RunFlags {
    /// Problem name; see list-problems. A config file may instead
    /// define a custom network under [problem].
    #[arg(long)]
    problem: Option<String>,
    /// First component of the two-state initial value, or the parameter
    /// of the isomerization initial distribution.
    #[arg(long)]
    sigma: Option<f64>,
    /// Chain length of the isomerization problem.
    #[arg(long)]
    n: Option<i64>,
    /// Truncated start: keep this many chain states around the mode of
    /// the initial distribution.
    #[arg(long)]
    window: Option<usize>,
    /// Use the literal published form of the second T-cell birth rate.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    literal_prime: Option<bool>,
    /// Global l1 error budget at t-final.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Magnus order, 2 or 4.
    #[arg(long)]
    order: Option<usize>,
    /// Largest Krylov dimension per exponential.
    #[arg(long)]
    s_max: Option<usize>,
    /// Shrink the state space every this many accepted steps.
    #[arg(long)]
    reduction_period: Option<usize>,
    #[arg(long)]
    dt_init: Option<f64>,
    #[arg(long)]
    dt_min: Option<f64>,
    #[arg(long)]
    dt_max: Option<f64>,
    /// Step proposal safety factor.
    #[arg(long)]
    safety: Option<f64>,
    /// Cap on the working state space size.
    #[arg(long)]
    max_states: Option<usize>,
    /// Disable step adaptivity and use this step size.
    #[arg(long)]
    fixed_dt: Option<f64>,
    /// Force every exponential to this Krylov dimension.
    #[arg(long)]
    fixed_krylov_dim: Option<usize>,
    /// Propagate with the dense matrix exponential instead of Arnoldi.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    dense: Option<bool>,
    /// Adapt the state space: grow on outflow, shrink periodically.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    fsp: Option<bool>,
    /// Record the spectral-norm diagnostic per accepted step.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    record_moan_niesen: Option<bool>,
    /// Use the classical 1/(order+1) step exponent.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    classic_exponent: Option<bool>,
    /// Gauss-Legendre points for the factor integrals.
    #[arg(long)]
    quad_points: Option<usize>,
    /// dual, dual-norm, or primal-only (aliases e1, e2, e3).
    #[arg(long)]
    estimate: Option<String>,
    /// Tolerance of the dual solve; defaults to 10 times tol.
    #[arg(long)]
    eps_dual: Option<f64>,
    /// Component of the controlled functional, in the full ordering.
    #[arg(long)]
    functional_component: Option<usize>,
    /// Directory the default-named outputs go to.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Step table path.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Report path.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceFlags {
    /// Problem name; the study needs a closed-form solution.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    n: Option<i64>,
    #[arg(long)]
    window: Option<usize>,
    /// Krylov residual budget of the fixed-step runs.
    #[arg(long)]
    tol: Option<f64>,
    /// Magnus orders to measure.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    /// Step sizes of the study.
    #[arg(long, value_delimiter = ',')]
    dts: Option<Vec<f64>>,
    /// Directory the default-named outputs go to.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code == 2 {
                eprintln!(
                    "usage: masteq [--config FILE] <run|compare-estimates|fsp-compare|\
                     magnus-diagnostic|convergence|list-problems> [flags]; see --help"
                );
            }
            ExitCode::from(code)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_)
        | Error::DimensionMismatch { .. }
        | Error::BadInitialVector { .. }
        | Error::DualStorageMismatch { .. } => 2,
        _ => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Cmd::ListProblems = cli.command {
        for name in PROBLEM_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Cmd::Run(f) => {
            merge_run_flags(&mut cfg, f);
            cmd_run(&cfg.resolve("run")?)
        }
        Cmd::CompareEstimates(f) => {
            merge_run_flags(&mut cfg, f);
            cmd_compare(&cfg.resolve("compare-estimates")?)
        }
        Cmd::FspCompare(f) => {
            merge_run_flags(&mut cfg, f);
            if cfg.problem.name.is_none() {
                cfg.problem.name = Some("isomerization".into());
                cfg.problem.n.get_or_insert(100);
            }
            cfg.controller.tol.get_or_insert(1e-3);
            cfg.controller.order.get_or_insert(4);
            cfg.controller.dense.get_or_insert(true);
            cfg.controller.fsp.get_or_insert(true);
            cmd_fsp_compare(&cfg.resolve("fsp-compare")?)
        }
        Cmd::MagnusDiagnostic(f) => {
            merge_run_flags(&mut cfg, f);
            if cfg.problem.name.is_none() {
                cfg.problem.name = Some("isomerization".into());
                cfg.problem.n.get_or_insert(20);
            }
            cfg.controller.tol.get_or_insert(1e-3);
            cfg.controller.record_moan_niesen = Some(true);
            cmd_magnus_diagnostic(&cfg.resolve("magnus-diagnostic")?)
        }
        Cmd::Convergence(f) => {
            merge_convergence_flags(&mut cfg, f);
            cfg.problem.name.get_or_insert_with(|| "two-state".into());
            cfg.controller.tol.get_or_insert(1e-3);
            let orders = f.orders.clone().unwrap_or_else(|| vec![2, 4]);
            let dts = f.dts.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]);
            cmd_convergence(&cfg.resolve("convergence")?, &orders, &dts)
        }
        Cmd::ListProblems => unreachable!(),
    }
}

fn set<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn merge_run_flags(cfg: &mut FileConfig, f: &RunFlags) {
    set(&mut cfg.problem.name, &f.problem);
    set(&mut cfg.problem.sigma, &f.sigma);
    set(&mut cfg.problem.n, &f.n);
    set(&mut cfg.problem.window, &f.window);
    set(&mut cfg.problem.literal_prime, &f.literal_prime);
    set(&mut cfg.controller.tol, &f.tol);
    set(&mut cfg.controller.t_final, &f.t_final);
    set(&mut cfg.controller.order, &f.order);
    set(&mut cfg.controller.s_max, &f.s_max);
    set(&mut cfg.controller.reduction_period, &f.reduction_period);
    set(&mut cfg.controller.dt_init, &f.dt_init);
    set(&mut cfg.controller.dt_min, &f.dt_min);
    set(&mut cfg.controller.dt_max, &f.dt_max);
    set(&mut cfg.controller.safety, &f.safety);
    set(&mut cfg.controller.max_states, &f.max_states);
    set(&mut cfg.controller.fixed_dt, &f.fixed_dt);
    set(&mut cfg.controller.fixed_krylov_dim, &f.fixed_krylov_dim);
    set(&mut cfg.controller.dense, &f.dense);
    set(&mut cfg.controller.fsp, &f.fsp);
    set(&mut cfg.controller.record_moan_niesen, &f.record_moan_niesen);
    set(&mut cfg.controller.classic_exponent, &f.classic_exponent);
    set(&mut cfg.controller.quad_points, &f.quad_points);
    set(&mut cfg.estimate.mode, &f.estimate);
    set(&mut cfg.estimate.eps_dual, &f.eps_dual);
    set(
        &mut cfg.estimate.functional_component,
        &f.functional_component,
    );
    set(&mut cfg.output.dir, &f.out_dir);
    set(&mut cfg.output.csv, &f.csv);
    set(&mut cfg.output.json, &f.json);
}

fn merge_convergence_flags(cfg: &mut FileConfig, f: &ConvergenceFlags) {
    set(&mut cfg.problem.name, &f.problem);
    set(&mut cfg.problem.sigma, &f.sigma);
    set(&mut cfg.problem.n, &f.n);
    set(&mut cfg.problem.window, &f.window);
    set(&mut cfg.controller.tol, &f.tol);
    set(&mut cfg.output.dir, &f.out_dir);
    set(&mut cfg.output.csv, &f.csv);
    set(&mut cfg.output.json, &f.json);
}

/// Solves the dual problem backwards when the estimate mode needs one.
fn prepare_dual(r: &Resolved, mode: EstimateMode) -> Result<(Option<DualTrajectory>, usize)> {
    let storage = match mode {
        EstimateMode::E1 => DualMode::Full,
        EstimateMode::E2 => DualMode::Norm,
        EstimateMode::E3 => return Ok((None, 0)),
    };
    let z = ErrorFunctional::Component(r.functional_component);
    let (trajectory, outcome) = adjoint::solve_dual(
        &r.problem.network,
        &r.problem.full_space,
        &z,
        r.config.t_final,
        r.eps_dual,
        storage,
        &r.config,
    )?;
    Ok((Some(trajectory), outcome.mvp))
}

fn forward(
    r: &Resolved,
    mode: EstimateMode,
    dual: Option<&DualTrajectory>,
    capture: Option<DualMode>,
) -> Result<RunOutcome> {
    let mut config = r.config.clone();
    config.estimate = mode;
    let input = RunInput {
        source: ModelSource::Adaptive {
            network: &r.problem.network,
            space: r.problem.initial_space.clone(),
        },
        p0: r.problem.p0.clone(),
        fsp: r.fsp,
        z_norm: dual.map_or(1.0, |d| d.z_norm),
        dual,
        capture,
    };
    controller::run(input, &config)
}

fn run_report(r: &Resolved, echo: FileConfig, outcome: RunOutcome, dual_mvp: usize) -> RunReport {
    let t_final = r.config.t_final;
    let linf_error = r.problem.error_inf(&outcome.space, &outcome.p, t_final);
    let k = r.functional_component;
    let true_error = r.problem.analytic_at(t_final).map(|truth| {
        let embedded = r.problem.full_space.embed_from(&outcome.space, &outcome.p);
        truth[k] - embedded[k]
    });
    RunReport {
        problem: r.problem.name.clone(),
        config: echo,
        linf_error,
        functional: Some(FunctionalReport {
            component: k,
            true_error,
            e1: outcome.ledger.e1,
            e2: outcome.ledger.e2,
            e3: outcome.ledger.e3,
        }),
        mvp_primal: outcome.mvp,
        mvp_dual: dual_mvp,
        accepted_steps: outcome.accepted_steps,
        rejected_steps: outcome.rejected_steps,
        final_space: outcome.space.len(),
        records: outcome.records,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn write_outputs<T: serde::Serialize>(
    records: &[StepRecord],
    value: &T,
    csv: &Path,
    json: &Path,
) -> Result<()> {
    ensure_parent(csv)?;
    ensure_parent(json)?;
    report::emit_csv(records, csv)?;
    report::emit_json(value, json)?;
    println!("  wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn print_summary(rep: &RunReport) {
    println!(
        "{}: {} accepted steps, {} rejected, final space {}, mvp {} primal + {} dual",
        rep.problem,
        rep.accepted_steps,
        rep.rejected_steps,
        rep.final_space,
        rep.mvp_primal,
        rep.mvp_dual
    );
    if let Some(err) = rep.linf_error {
        println!("  sup error vs closed form: {err:.3e}");
    }
    if let Some(f) = &rep.functional {
        let mut line = format!("  component {}: E3 {:.3e}", f.component, f.e3);
        if let Some(e2) = f.e2 {
            line.push_str(&format!(", E2 {e2:.3e}"));
        }
        if let Some(e1) = f.e1 {
            line.push_str(&format!(", E1 {e1:+.3e}"));
        }
        if let Some(t) = f.true_error {
            line.push_str(&format!(", true error {t:+.3e}"));
        }
        println!("{line}");
    }
}

fn cmd_run(r: &Resolved) -> Result<()> {
    let (dual, dual_mvp) = prepare_dual(r, r.mode)?;
    let outcome = forward(r, r.mode, dual.as_ref(), None)?;
    let rep = run_report(r, r.echo.clone(), outcome, dual_mvp);
    print_summary(&rep);
    write_outputs(&rep.records, &rep, &r.csv_path, &r.json_path)
}

fn path_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}-{suffix}.{ext}"))
}

fn cmd_compare(r: &Resolved) -> Result<()> {
    // one full dual serves both dual-weighted modes
    let (dual, dual_mvp) = prepare_dual(r, EstimateMode::E1)?;
    let mut modes = Vec::new();
    for mode in [EstimateMode::E1, EstimateMode::E2, EstimateMode::E3] {
        let with_dual = mode != EstimateMode::E3;
        let outcome = forward(r, mode, if with_dual { dual.as_ref() } else { None }, None)?;
        let mut echo = r.echo.clone();
        echo.estimate.mode = Some(config::mode_name(mode).into());
        let csv = path_with_suffix(&r.csv_path, config::mode_name(mode));
        echo.output.csv = Some(csv.clone());
        let rep = run_report(r, echo, outcome, if with_dual { dual_mvp } else { 0 });
        print_summary(&rep);
        ensure_parent(&csv)?;
        report::emit_csv(&rep.records, &csv)?;
        println!("  wrote {}", csv.display());
        modes.push(rep);
    }
    let report = CompareReport {
        problem: r.problem.name.clone(),
        config: r.echo.clone(),
        modes,
    };
    ensure_parent(&r.json_path)?;
    report::emit_json(&report, &r.json_path)?;
    println!("wrote {}", r.json_path.display());
    Ok(())
}

fn cmd_fsp_compare(r: &Resolved) -> Result<()> {
    let (dual, dual_mvp) = prepare_dual(r, r.mode)?;
    let outcome = forward(r, r.mode, dual.as_ref(), Some(DualMode::Full))?;
    let nodes = outcome.captured.as_ref().ok_or(Error::DualStorageMismatch {
        needed: "captured nodes",
        found: "none",
    })?;
    let vectors = nodes.vectors.as_ref().ok_or(Error::DualStorageMismatch {
        needed: "captured vectors",
        found: "norms only",
    })?;
    let masses: Vec<f64> = vectors.iter().map(|v| v.iter().sum()).collect();
    let entries = &outcome.ledger.entries;
    let mut t = Vec::with_capacity(entries.len());
    let mut dt = Vec::with_capacity(entries.len());
    let mut outflow = Vec::with_capacity(entries.len());
    let mut loss = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        t.push(e.t);
        dt.push(e.dt);
        outflow.push(e.outflow + e.dropped);
        loss.push(masses[i] - masses[i + 1]);
    }
    let rep = FspCompareReport {
        problem: r.problem.name.clone(),
        config: r.echo.clone(),
        cumulative_outflow: outflow.iter().sum(),
        cumulative_loss: masses[0] - masses[masses.len() - 1],
        t,
        dt,
        outflow,
        loss,
    };
    println!(
        "{}: {} accepted steps, mvp {} primal + {} dual",
        rep.problem,
        outcome.accepted_steps,
        outcome.mvp,
        dual_mvp
    );
    println!(
        "  cumulative outflow estimate {:.6e}, realized probability loss {:.6e}",
        rep.cumulative_outflow, rep.cumulative_loss
    );
    write_outputs(&outcome.records, &rep, &r.csv_path, &r.json_path)
}

fn cmd_magnus_diagnostic(r: &Resolved) -> Result<()> {
    let (dual, dual_mvp) = prepare_dual(r, r.mode)?;
    let outcome = forward(r, r.mode, dual.as_ref(), None)?;
    let rep = run_report(r, r.echo.clone(), outcome, dual_mvp);
    print_summary(&rep);
    let above = rep
        .records
        .iter()
        .filter(|x| !x.rejected && x.moan_niesen > std::f64::consts::PI)
        .count();
    let max = rep
        .records
        .iter()
        .map(|x| x.moan_niesen)
        .fold(0.0, f64::max);
    println!(
        "  diagnostic exceeds pi in {above} of {} accepted steps (max {max:.3})",
        rep.accepted_steps
    );
    write_outputs(&rep.records, &rep, &r.csv_path, &r.json_path)
}

fn cmd_convergence(r: &Resolved, orders: &[usize], dts: &[f64]) -> Result<()> {
    if !r.problem.has_analytic() {
        return Err(Error::InvalidConfig(format!(
            "problem '{}' has no closed-form solution to measure orders against",
            r.problem.name
        )));
    }
    if dts.is_empty() || orders.is_empty() {
        return Err(Error::InvalidConfig(
            "convergence study needs at least one order and one step size".into(),
        ));
    }
    let mut series = Vec::with_capacity(orders.len());
    for &order in orders {
        if order != 2 && order != 4 {
            return Err(Error::InvalidConfig(format!(
                "order must be 2 or 4, got {order}"
            )));
        }
        let points = problems::fixed_step_errors(&r.problem, order, dts, r.config.tol)?;
        let slope = problems::convergence_slope(&points);
        println!(
            "{} order {order}: measured slope {slope:.2} over {} step sizes",
            r.problem.name,
            points.len()
        );
        series.push(ConvergenceSeries {
            order,
            dts: points.iter().map(|p| p.0).collect(),
            linf_errors: points.iter().map(|p| p.1).collect(),
            slope,
        });
    }
    let rep = ConvergenceReport {
        problem: r.problem.name.clone(),
        config: r.echo.clone(),
        orders: series,
    };
    ensure_parent(&r.csv_path)?;
    ensure_parent(&r.json_path)?;
    let mut csv = String::from("order,dt,linf_error\n");
    for s in &rep.orders {
        for (dt, err) in s.dts.iter().zip(&s.linf_errors) {
            csv.push_str(&format!("{},{dt:.16e},{err:.16e}\n", s.order));
        }
    }
    std::fs::write(&r.csv_path, csv)?;
    report::emit_json(&rep, &r.json_path)?;
    println!("  wrote {} and {}", r.csv_path.display(), r.json_path.display());
    Ok(())
}
