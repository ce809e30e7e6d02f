//! Built-in benchmark problems with analytic or reference oracles.

use std::path::{Path, PathBuf};

use crate::controller::{self, ControllerConfig, ModelSource, RunInput};
use crate::error::{Error, Result};
use crate::model::{
    enumerate_states, Channel, ConservationLaw, Network, RateLaw, StateSpace, TimeFactor,
};

/// A named model plus everything needed to check a run against it: the
/// full state space the oracle lives on, the (possibly smaller) space a
/// run starts from, and the closed-form solution when one exists.
pub struct BenchmarkProblem {
    pub name: String,
    pub network: Network,
    pub full_space: StateSpace,
    pub initial_space: StateSpace,
    /// Initial vector on `initial_space`.
    pub p0: Vec<f64>,
    pub t_final: f64,
    /// Default error-functional component, indexed on `full_space`.
    pub functional_component: usize,
    pub(crate) analytic: Option<Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>>,
}

impl BenchmarkProblem {
    pub fn has_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    /// Closed-form solution on `full_space` at time t.
    pub fn analytic_at(&self, t: f64) -> Option<Vec<f64>> {
        self.analytic.as_ref().map(|f| f(t))
    }

    /// Sup-norm error of a computed vector against the closed form,
    /// after embedding it into the full space.
    pub fn error_inf(&self, space: &StateSpace, p: &[f64], t: f64) -> Option<f64> {
        let truth = self.analytic_at(t)?;
        let embedded = self.full_space.embed_from(space, p);
        Some(
            embedded
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Signed error in the default functional component.
    pub fn component_error(&self, space: &StateSpace, p: &[f64], t: f64) -> Option<f64> {
        let truth = self.analytic_at(t)?;
        let embedded = self.full_space.embed_from(space, p);
        let k = self.functional_component;
        Some(embedded[k] - truth[k])
    }

    /// Replaces the initial space of a 1-D chain problem by `count`
    /// states centered at the initial mode, for truncated-start runs.
    pub fn with_chain_window(mut self, count: usize) -> Result<BenchmarkProblem> {
        let n = self.full_space.len();
        if count == 0 || count > n {
            return Err(Error::InvalidConfig(format!(
                "window of {count} states does not fit a chain of {n}"
            )));
        }
        let p_full = self.full_space.embed_from(&self.initial_space, &self.p0);
        let mode = p_full
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let lo = mode.saturating_sub(count / 2).min(n - count);
        let states: Vec<Vec<i64>> = (lo..lo + count)
            .map(|i| self.full_space.state(i).to_vec())
            .collect();
        let space = StateSpace::from_states(states);
        self.p0 = space.embed_from(&self.full_space, &p_full);
        self.initial_space = space;
        Ok(self)
    }
}

/// Components of the closed-form solution of the two-state system
/// started at (sigma, 1 - sigma).
pub fn two_state_solution(sigma: f64, t: f64) -> [f64; 2] {
    let first =
        0.5 + t.cos() / 5.0 - 2.0 * t.sin() / 5.0 + (sigma - 0.7) * (-2.0 * t).exp();
    [first, 1.0 - first]
}

/// Two states exchanging mass at rates 1 + sin t and 1 - sin t.
pub fn two_state(sigma: f64) -> Result<BenchmarkProblem> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidConfig(format!(
            "sigma must lie in [0, 1], got {sigma}"
        )));
    }
    let up = |factor, weight| Channel {
        change: vec![1],
        law: RateLaw::Constant { value: 1.0 },
        factor,
        weight,
    };
    let down = |factor, weight| Channel {
        change: vec![-1],
        law: RateLaw::Constant { value: 1.0 },
        factor,
        weight,
    };
    let network = Network {
        species: 1,
        channels: vec![
            up(None, 1.0),
            up(Some(0), 1.0),
            down(None, 1.0),
            down(Some(0), -1.0),
        ],
        bounds: vec![(0, 1)],
        factors: vec![TimeFactor::Sin],
    };
    let space = enumerate_states(&network, &[vec![0]], &[(0, 1)], None, 4)?;
    Ok(BenchmarkProblem {
        name: "two-state".into(),
        network,
        full_space: space.clone(),
        initial_space: space,
        p0: vec![sigma, 1.0 - sigma],
        t_final: 10.0,
        functional_component: 0,
        analytic: Some(Box::new(move |t| two_state_solution(sigma, t).to_vec())),
    })
}

/// Binomial(n, p) probabilities by log-factorial accumulation, stable
/// up to thousands of states.
pub fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&p), "parameter out of range");
    if p == 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if p == 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut v: Vec<f64> = (0..=n)
        .map(|k| {
            (ln_fact[n] - ln_fact[k] - ln_fact[n - k]
                + k as f64 * lp
                + (n - k) as f64 * lq)
                .exp()
        })
        .collect();
    // the log-space exponents carry a few units of 1e-12 of rounding
    // for n in the thousands, so pin the total mass explicitly
    let mass: f64 = v.iter().sum();
    for x in &mut v {
        *x /= mass;
    }
    v
}

/// Parameter of the binomial solution: the first component of the
/// rate-equation solution started at (sigma, 1 - sigma).
fn isomerization_parameter(sigma: f64, t: f64, time_varying: bool) -> f64 {
    if time_varying {
        two_state_solution(sigma, t)[0]
    } else {
        0.5 + (sigma - 0.5) * (-2.0 * t).exp()
    }
}

/// Conversion between two molecular forms on the conservation simplex
/// x + y = N, with rates (1 +- sin t) when time varying and 1 otherwise.
/// State k holds k copies of the first form.
pub fn isomerization(n: i64, p0: (f64, f64), time_varying: bool) -> Result<BenchmarkProblem> {
    if n < 1 {
        return Err(Error::InvalidConfig("chain length must be positive".into()));
    }
    let sigma = p0.0;
    if !(0.0..=1.0).contains(&sigma) || (p0.0 + p0.1 - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidConfig(
            "initial pair must be a probability vector".into(),
        ));
    }
    let fwd = |factor, weight| Channel {
        change: vec![1, -1],
        law: RateLaw::Linear {
            species: 1,
            coeff: 1.0,
        },
        factor,
        weight,
    };
    let bwd = |factor, weight| Channel {
        change: vec![-1, 1],
        law: RateLaw::Linear {
            species: 0,
            coeff: 1.0,
        },
        factor,
        weight,
    };
    // the first form is produced at rate (1 - sin t) y and consumed at
    // rate (1 + sin t) x
    let (channels, factors) = if time_varying {
        (
            vec![
                fwd(None, 1.0),
                fwd(Some(0), -1.0),
                bwd(None, 1.0),
                bwd(Some(0), 1.0),
            ],
            vec![TimeFactor::Sin],
        )
    } else {
        (vec![fwd(None, 1.0), bwd(None, 1.0)], Vec::new())
    };
    let network = Network {
        species: 2,
        channels,
        bounds: vec![(0, n), (0, n)],
        factors,
    };
    let law = ConservationLaw {
        weights: vec![1.0, 1.0],
        total: n as f64,
    };
    let space = enumerate_states(
        &network,
        &[vec![0, n]],
        &[(0, n), (0, n)],
        Some(&law),
        n as usize + 2,
    )?;
    let name = if time_varying {
        "isomerization"
    } else {
        "isomerization-const"
    };
    Ok(BenchmarkProblem {
        name: name.into(),
        network,
        full_space: space.clone(),
        initial_space: space,
        p0: binomial_pmf(n as usize, sigma),
        t_final: 10.0,
        functional_component: usize::min(if time_varying { 1150 } else { 1050 }, n as usize),
        analytic: Some(Box::new(move |t| {
            binomial_pmf(n as usize, isomerization_parameter(sigma, t, time_varying))
        })),
    })
}

/// Two clonotypes competing for survival stimuli: per-capita death at
/// rate one, and birth rates 30 n (1/(n+n') + 1/(n+1000)) damped by the
/// Hill factor 1/(1+(t/15)^5). With `literal_prime` the second birth
/// rate keeps the first population as its prefactor, matching a strict
/// reading of the source model; the default mirrors the two species.
pub fn tcell(literal_prime: bool) -> Result<BenchmarkProblem> {
    let birth = |multiplier: usize, shifted: usize| Channel {
        change: {
            let mut c = vec![0, 0];
            c[shifted] = 1;
            c
        },
        law: RateLaw::HomeostaticBirth {
            multiplier,
            pair: (0, 1),
            shifted,
            shift: 1000.0,
            coeff: 30.0,
        },
        factor: Some(0),
        weight: 1.0,
    };
    let death = |species: usize| Channel {
        change: if species == 0 { vec![-1, 0] } else { vec![0, -1] },
        law: RateLaw::Linear { species, coeff: 1.0 },
        factor: None,
        weight: 1.0,
    };
    let network = Network {
        species: 2,
        channels: vec![
            birth(0, 0),
            if literal_prime { birth(0, 1) } else { birth(1, 1) },
            death(0),
            death(1),
        ],
        bounds: vec![(0, 59), (0, 59)],
        factors: vec![TimeFactor::HillDecay {
            t_scale: 15.0,
            power: 5,
        }],
    };
    let window = |hi: i64| -> Vec<Vec<i64>> {
        let mut states = Vec::new();
        for a in 0..=hi {
            for b in 0..=hi {
                states.push(vec![a, b]);
            }
        }
        states
    };
    let full_space = StateSpace::from_states(window(59));
    let initial_space = StateSpace::from_states(window(29));
    let mut p0 = vec![0.0; initial_space.len()];
    p0[initial_space
        .index_of(&[10, 10])
        .expect("start state inside the window")] = 1.0;
    Ok(BenchmarkProblem {
        name: "tcell".into(),
        network,
        full_space: full_space.clone(),
        initial_space,
        p0,
        t_final: 30.0,
        functional_component: full_space.index_of(&[10, 10]).unwrap(),
        analytic: None,
    })
}

/// Directory used for cached reference solutions. Honors
/// MASTEQ_CACHE_DIR, otherwise a fixed subdirectory of the system
/// temp directory.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("MASTEQ_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("masteq-cache"))
}

/// Final-time reference vector for the T-cell problem on the full
/// space: a fixed-step order-4 run with a tight Krylov budget. The
/// result is cached on disk keyed by the rate variant and step size.
pub fn tcell_reference(cache_dir: &Path, literal_prime: bool, dt: f64) -> Result<Vec<f64>> {
    let tag = if literal_prime { "lit" } else { "sym" };
    let file = cache_dir.join(format!("tcell-ref-{tag}-dt{dt:e}.json"));
    if let Ok(bytes) = std::fs::read(&file) {
        if let Ok(v) = serde_json::from_slice::<Vec<f64>>(&bytes) {
            return Ok(v);
        }
    }
    let problem = tcell(literal_prime)?;
    let p0 = problem
        .full_space
        .embed_from(&problem.initial_space, &problem.p0);
    let config = ControllerConfig {
        tol: 1e-8,
        t_final: problem.t_final,
        order: 4,
        s_max: 40,
        fixed_dt: Some(dt),
        dt_init: dt,
        dt_min: dt.min(1e-9),
        ..ControllerConfig::default()
    };
    let input = RunInput::new(
        ModelSource::Adaptive {
            network: &problem.network,
            space: problem.full_space.clone(),
        },
        p0,
    );
    let outcome = controller::run(input, &config)?;
    std::fs::create_dir_all(cache_dir)?;
    let bytes = serde_json::to_vec(&outcome.p)
        .map_err(|e| Error::Msg(format!("reference serialization failed: {e}")))?;
    let tmp = file.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, &file)?;
    Ok(outcome.p)
}

/// Final-time sup-norm errors of fixed-step runs, for order studies.
pub fn fixed_step_errors(
    problem: &BenchmarkProblem,
    order: usize,
    dts: &[f64],
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(dts.len());
    for &dt in dts {
        let config = ControllerConfig {
            tol,
            t_final: problem.t_final,
            order,
            fixed_dt: Some(dt),
            dt_init: dt,
            dt_min: dt.min(1e-9),
            ..ControllerConfig::default()
        };
        let input = RunInput::new(
            ModelSource::Adaptive {
                network: &problem.network,
                space: problem.full_space.clone(),
            },
            problem
                .full_space
                .embed_from(&problem.initial_space, &problem.p0),
        );
        let outcome = controller::run(input, &config)?;
        let err = problem
            .error_inf(&outcome.space, &outcome.p, problem.t_final)
            .ok_or_else(|| Error::Msg("order study needs an analytic solution".into()))?;
        out.push((dt, err));
    }
    Ok(out)
}

/// Least-squares slope of log error against log dt.
pub fn convergence_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(dt, err) in points {
        let (x, y) = (dt.ln(), err.max(1e-300).ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm1;

    #[test]
    fn two_state_solution_starts_at_the_initial_condition() {
        for sigma in [0.0, 0.25, 1.0] {
            let p = two_state_solution(sigma, 0.0);
            assert!((p[0] - sigma).abs() < 1e-15);
            assert!((p[1] - (1.0 - sigma)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_state_value_at_ten() {
        let p = two_state_solution(1.0, 10.0);
        let exact = 0.5 + 0.2 * 10.0f64.cos() - 0.4 * 10.0f64.sin() + 0.3 * (-20.0f64).exp();
        assert!((p[0] - exact).abs() < 1e-15);
        assert!((p[0] - 0.54979).abs() < 1e-5);
    }

    #[test]
    fn two_state_solution_satisfies_the_equation() {
        let problem = two_state(0.4).unwrap();
        let model = problem.network.assemble(&problem.full_space).unwrap();
        let h = 1e-5;
        for i in 0..50 {
            let t = 0.07 + 10.0 * i as f64 / 50.0;
            let p = problem.analytic_at(t).unwrap();
            let plus = problem.analytic_at(t + h).unwrap();
            let minus = problem.analytic_at(t - h).unwrap();
            let rhs = model.evaluate_at(t).unwrap().spmv(&p).unwrap();
            for j in 0..2 {
                let lhs = (plus[j] - minus[j]) / (2.0 * h);
                assert!((lhs - rhs[j]).abs() < 1e-6, "t={t} comp {j}");
            }
        }
    }

    #[test]
    fn pmf_small_cases() {
        let v = binomial_pmf(1, 0.5);
        assert_eq!(v, vec![0.5, 0.5]);
        let v = binomial_pmf(2, 1.0 / 3.0);
        assert!((v[0] - 4.0 / 9.0).abs() < 1e-15);
        assert!((v[1] - 4.0 / 9.0).abs() < 1e-15);
        assert!((v[2] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn pmf_large_case_is_normalized_with_the_right_mode() {
        let v = binomial_pmf(2000, 1.0 / 3.0);
        let mass: f64 = v.iter().sum();
        assert!((mass - 1.0).abs() < 1e-12, "mass defect {:e}", mass - 1.0);
        let mode = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(mode == 666 || mode == 667, "mode {mode}");
    }

    #[test]
    fn pmf_degenerate_parameters() {
        assert_eq!(binomial_pmf(3, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(binomial_pmf(3, 1.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn isomerization_analytic_is_a_probability_vector() {
        for &tv in &[true, false] {
            let problem = isomerization(120, (1.0 / 3.0, 2.0 / 3.0), tv).unwrap();
            for i in 0..8 {
                let t = 10.0 * i as f64 / 7.0;
                let p = problem.analytic_at(t).unwrap();
                assert!(p.iter().all(|&x| x >= -1e-12));
                assert!((norm1(&p) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn chain_of_length_one_reduces_to_the_two_state_system() {
        // state 0 holds zero copies of the first form, so the chain
        // solution is the two-state solution with components swapped
        let sigma = 0.3;
        let chain = isomerization(1, (sigma, 1.0 - sigma), true).unwrap();
        let pair = two_state(sigma).unwrap();
        for i in 0..9 {
            let t = 1.3 * i as f64;
            let a = chain.analytic_at(t).unwrap();
            let b = pair.analytic_at(t).unwrap();
            assert!((a[0] - b[1]).abs() < 1e-14, "t={t}");
            assert!((a[1] - b[0]).abs() < 1e-14, "t={t}");
        }
    }

    #[test]
    fn isomerization_constant_block_matches_the_hand_assembled_band() {
        let problem = isomerization(3, (1.0 / 3.0, 2.0 / 3.0), true).unwrap();
        let model = problem.network.assemble(&problem.full_space).unwrap();
        let a0 = model.a_const.to_dense();
        let n = 3.0;
        for i in 0..4usize {
            for j in 0..4usize {
                let expect = if i == j {
                    -n
                } else if i + 1 == j {
                    j as f64
                } else if i == j + 1 {
                    n - j as f64
                } else {
                    0.0
                };
                assert!(
                    (a0.at(i, j) - expect).abs() < 1e-14,
                    "A0[{i},{j}] = {} vs {expect}",
                    a0.at(i, j)
                );
            }
        }
        let a1 = model.a_time[0].to_dense();
        for i in 0..4usize {
            for j in 0..4usize {
                let expect = if i == j {
                    n - 2.0 * j as f64
                } else if i + 1 == j {
                    j as f64
                } else if i == j + 1 {
                    -n + j as f64
                } else {
                    0.0
                };
                assert!(
                    (a1.at(i, j) - expect).abs() < 1e-14,
                    "A1[{i},{j}] = {} vs {expect}",
                    a1.at(i, j)
                );
            }
        }
    }

    #[test]
    fn chain_window_recenters_the_initial_space() {
        let problem = isomerization(2000, (1.0 / 3.0, 2.0 / 3.0), true)
            .unwrap()
            .with_chain_window(400)
            .unwrap();
        assert_eq!(problem.initial_space.len(), 400);
        assert!(problem.initial_space.index_of(&[667, 1333]).is_some());
        let mass: f64 = p0_mass(&problem);
        assert!((mass - 1.0).abs() < 1e-12);
        assert_eq!(problem.full_space.len(), 2001);
    }

    fn p0_mass(problem: &BenchmarkProblem) -> f64 {
        problem.p0.iter().sum()
    }

    #[test]
    fn tcell_rates_at_reference_states() {
        let problem = tcell(false).unwrap();
        let birth0 = &problem.network.channels[0];
        let lambda = problem.network.rate(birth0, &[10, 10]);
        assert!((lambda - (15.0 + 300.0 / 1010.0)).abs() < 1e-12);
        let d0 = &problem.network.channels[2];
        let d1 = &problem.network.channels[3];
        assert_eq!(problem.network.rate(d0, &[3, 5]), 3.0);
        assert_eq!(problem.network.rate(d1, &[3, 5]), 5.0);
        // the symmetric variant mirrors the two species
        let birth1 = &problem.network.channels[1];
        assert_eq!(
            problem.network.rate(birth1, &[4, 7]),
            problem.network.rate(birth0, &[7, 4])
        );
        // the literal variant keeps the first population as prefactor
        let lit = tcell(true).unwrap();
        let lb1 = &lit.network.channels[1];
        let expect = 30.0 * 4.0 * (1.0 / 11.0 + 1.0 / 1007.0);
        assert!((lit.network.rate(lb1, &[4, 7]) - expect).abs() < 1e-12);
    }

    #[test]
    fn tcell_initial_vector_is_a_point_mass() {
        let problem = tcell(false).unwrap();
        assert_eq!(problem.initial_space.len(), 900);
        assert_eq!(problem.full_space.len(), 3600);
        let ones: Vec<usize> = problem
            .p0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones.len(), 1);
        assert_eq!(problem.initial_space.state(ones[0]), &[10, 10]);
        assert_eq!(problem.p0[ones[0]], 1.0);
    }

    #[test]
    fn convergence_slope_recovers_a_synthetic_order() {
        let points: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&dt: &f64| (dt, 3.0 * dt.powi(2)))
            .collect();
        assert!((convergence_slope(&points) - 2.0).abs() < 1e-12);
    }
}
