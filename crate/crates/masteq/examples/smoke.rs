use std::time::Instant;

use masteq::controller::{run, ControllerConfig, ModelSource, RunInput};
use masteq::problems;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "iso".into());
    match which.as_str() {
        "iso" => iso(true),
        "iso-const" => iso(false),
        "iso20" => iso20(),
        "measure" => measure(),
        _ => tcell(),
    }
}

fn measure() {
    use masteq::linalg::norm1;
    use masteq::magnus;
    let p = problems::isomerization(2000, (1.0 / 3.0, 2.0 / 3.0), true).unwrap();
    let model = p.network.assemble(&p.full_space).unwrap();
    let cache = magnus::precompute_commutators(&model).unwrap();
    for &t in &[0.0f64, 1.0, 2.5] {
        let pv = p.analytic_at(t).unwrap();
        for &dt in &[3e-4f64, 1e-3, 3e-3] {
            let terms = magnus::build_theta(&model, &cache, t, dt, 2, 2).unwrap();
            let r = magnus::magnus_residual(&terms, &pv).unwrap();
            println!(
                "t={t} dt={dt:.0e}: |theta4 p|_1 = {:.3e}  C = {:.3e}  budget = {:.1e}",
                norm1(&r),
                norm1(&r) / dt.powi(3),
                1e-6 * dt
            );
        }
    }
}

fn iso(tv: bool) {
    let order: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let p = problems::isomerization(2000, (1.0 / 3.0, 2.0 / 3.0), tv).unwrap();
    let config = ControllerConfig {
        tol: 1e-5,
        t_final: 10.0,
        order,
        ..Default::default()
    };
    let input = RunInput::new(
        ModelSource::Adaptive {
            network: &p.network,
            space: p.full_space.clone(),
        },
        p.p0.clone(),
    );
    let t0 = Instant::now();
    let out = run(input, &config).unwrap();
    let err = p.error_inf(&out.space, &out.p, 10.0).unwrap();
    let comp = p.component_error(&out.space, &out.p, 10.0).unwrap();
    println!(
        "iso tv={tv}: {:.2?} err {err:.2e} comp {comp:.2e} steps {} rej {} mvp {}",
        t0.elapsed(),
        out.accepted_steps,
        out.rejected_steps,
        out.mvp
    );
}

fn iso20() {
    let p = problems::isomerization(20, (1.0 / 3.0, 2.0 / 3.0), true).unwrap();
    let config = ControllerConfig {
        tol: 1e-3,
        t_final: 10.0,
        record_moan_niesen: true,
        ..Default::default()
    };
    let input = RunInput::new(
        ModelSource::Adaptive {
            network: &p.network,
            space: p.full_space.clone(),
        },
        p.p0.clone(),
    );
    let t0 = Instant::now();
    let out = run(input, &config).unwrap();
    let err = p.error_inf(&out.space, &out.p, 10.0).unwrap();
    let over_pi = out
        .records
        .iter()
        .filter(|r| !r.rejected && r.moan_niesen > std::f64::consts::PI)
        .count();
    println!(
        "iso20: {:.2?} err {err:.2e} steps {} over_pi {}/{}",
        t0.elapsed(),
        out.accepted_steps,
        over_pi,
        out.accepted_steps
    );
}

fn tcell() {
    let p = problems::tcell(false).unwrap();
    let config = ControllerConfig {
        tol: 1e-4,
        t_final: p.t_final,
        order: 2,
        ..Default::default()
    };
    let mut input = RunInput::new(
        ModelSource::Adaptive {
            network: &p.network,
            space: p.initial_space.clone(),
        },
        p.p0.clone(),
    );
    input.fsp = true;
    let t0 = Instant::now();
    let out = run(input, &config).unwrap();
    println!(
        "tcell adaptive: {:.2?} steps {} rej {} mvp {} final_space {} mass {:.6}",
        t0.elapsed(),
        out.accepted_steps,
        out.rejected_steps,
        out.mvp,
        out.space.len(),
        out.p.iter().sum::<f64>()
    );
    let so: f64 = out.ledger.entries.iter().map(|e| e.outflow).sum();
    let sd: f64 = out.ledger.entries.iter().map(|e| e.dropped).sum();
    let sr: f64 = out.ledger.entries.iter().map(|e| e.rho_l1).sum();
    let sm: f64 = out.ledger.entries.iter().map(|e| e.magnus_l1).sum();
    println!(
        "ledger: outflow {so:.3e} dropped {sd:.3e} rho {sr:.3e} magnus {sm:.3e} e3 {:.3e}",
        out.ledger.e3
    );
    let max_space = out
        .records
        .iter()
        .map(|r| r.space_size)
        .max()
        .unwrap_or(0);
    println!("max space {max_space}");
    let mut worst: Vec<_> = out.records.iter().filter(|r| !r.rejected).collect();
    worst.sort_by(|a, b| b.outflow.total_cmp(&a.outflow));
    for r in worst.iter().take(8) {
        println!(
            "  worst: t {:.3} dt {:.4e} outflow {:.3e} rate {:.3e} space {}",
            r.t,
            r.dt,
            r.outflow,
            r.outflow / r.dt,
            r.space_size
        );
    }
    let mut cum = 0.0;
    let mut next_mark = 2.0;
    for r in out.records.iter().filter(|r| !r.rejected) {
        cum += r.outflow;
        if r.t >= next_mark {
            println!("  t {:.1} cum_outflow {:.3e} space {}", r.t, cum, r.space_size);
            next_mark += 2.0;
        }
    }
    let full = problems::tcell(false).unwrap().full_space;
    let steps = (out.mvp as f64 / 5.0).round() as usize;
    let fixed_cfg = ControllerConfig {
        tol: 1e-4,
        t_final: p.t_final,
        order: 2,
        fixed_dt: Some(p.t_final / steps as f64),
        fixed_krylov_dim: Some(4),
        ..Default::default()
    };
    let p0_full = full.embed_from(&p.initial_space, &p.p0);
    let fixed_in = RunInput::new(
        ModelSource::Adaptive {
            network: &p.network,
            space: full.clone(),
        },
        p0_full,
    );
    let t2 = Instant::now();
    let fixed_out = run(fixed_in, &fixed_cfg).unwrap();
    println!(
        "tcell fixed: {:.2?} steps {} mvp {} mass {:.6}",
        t2.elapsed(),
        fixed_out.accepted_steps,
        fixed_out.mvp,
        fixed_out.p.iter().sum::<f64>()
    );
    let t1 = Instant::now();
    let reference =
        problems::tcell_reference(&problems::default_cache_dir(), false, 1e-3).unwrap();
    println!("tcell reference: {:.2?}", t1.elapsed());
    let embedded = full.embed_from(&out.space, &out.p);
    let err = embedded
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let fixed_err = fixed_out
        .p
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!(
        "tcell err vs ref {err:.2e}, fixed err {fixed_err:.2e}, ratio {:.1}",
        fixed_err / err
    );
}
