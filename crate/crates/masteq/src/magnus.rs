//! Magnus expansion of the propagator over one step.
//!
//! For the separable generator A(t) = A_c + sum_l f_l(t) A_l the second
//! and fourth order terms reduce to scalar integrals of the factors
//! against precomputed commutators:
//!
//!   theta2 = dt A_c + sum_l (dt g_l) A_l
//!   theta4 = dt^2 ( sum_l h_l [A_l, A_c]
//!                 + sum_{l1<l2} (g_{l2} h_{l1} - g_{l1} h_{l2}) [A_l1, A_l2] )
//!
//! with g_l the step average of f_l and h_l its normalized first moment
//! about the step midpoint. Closed-form antiderivatives are used for g_l
//! when registered, Gauss-Legendre quadrature otherwise.

use crate::error::Result;
use crate::linalg::{commutator, norm2, SparseMatrix};
use crate::model::PropensityModel;

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gl_rule(points: usize) -> (&'static [f64], &'static [f64]) {
    match points {
        1 => (&[0.0], &[2.0]),
        2 => (
            &[-0.5773502691896257, 0.5773502691896257],
            &[1.0, 1.0],
        ),
        3 => (
            &[-0.7745966692414834, 0.0, 0.7745966692414834],
            &[
                0.5555555555555556,
                0.8888888888888888,
                0.5555555555555556,
            ],
        ),
        4 => (
            &[
                -0.8611363115940526,
                -0.33998104358485626,
                0.33998104358485626,
                0.8611363115940526,
            ],
            &[
                0.34785484513745385,
                0.6521451548625461,
                0.6521451548625461,
                0.34785484513745385,
            ],
        ),
        5 => (
            &[
                -0.906179845938664,
                -0.5384693101056831,
                0.0,
                0.5384693101056831,
                0.906179845938664,
            ],
            &[
                0.23692688505618908,
                0.47862867049936647,
                0.5688888888888889,
                0.47862867049936647,
                0.23692688505618908,
            ],
        ),
        _ => panic!("unsupported quadrature order {points}"),
    }
}

/// Commutators of the generator blocks, computed once per state space.
#[derive(Debug, Clone)]
pub struct CommutatorCache {
    /// [A_l, A_c] for each factor l.
    pub with_const: Vec<SparseMatrix>,
    /// [A_l1, A_l2] for l1 < l2, keyed by (l1, l2).
    pub pairs: Vec<((usize, usize), SparseMatrix)>,
}

pub fn precompute_commutators(model: &PropensityModel) -> Result<CommutatorCache> {
    let r = model.a_time.len();
    let mut with_const = Vec::with_capacity(r);
    for al in &model.a_time {
        with_const.push(commutator(al, &model.a_const)?);
    }
    let mut pairs = Vec::new();
    for l1 in 0..r {
        for l2 in l1 + 1..r {
            pairs.push((
                (l1, l2),
                commutator(&model.a_time[l1], &model.a_time[l2])?,
            ));
        }
    }
    Ok(CommutatorCache { with_const, pairs })
}

/// Step average g_l and normalized first moment h_l of every factor:
///
///   g_l = (1/dt) integral of f_l over [t, t+dt]
///   h_l = (1/dt^2) integral of tau f_l(t + dt/2 + tau) over [-dt/2, dt/2]
pub fn scalar_integrals(
    model: &PropensityModel,
    t: f64,
    dt: f64,
    quad_points: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gl_rule(quad_points);
    let mut g = Vec::with_capacity(model.factors.len());
    let mut h = Vec::with_capacity(model.factors.len());
    let mid = t + 0.5 * dt;
    for f in &model.factors {
        let gv = match (f.antiderivative(t), f.antiderivative(t + dt)) {
            (Some(a), Some(b)) => (b - a) / dt,
            _ => {
                let mut acc = 0.0;
                for (x, w) in nodes.iter().zip(weights) {
                    acc += w * f.eval(mid + 0.5 * dt * x);
                }
                0.5 * acc
            }
        };
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let tau = 0.5 * dt * x;
            acc += w * tau * f.eval(mid + tau);
        }
        let hv = 0.5 * dt * acc / (dt * dt);
        g.push(gv);
        h.push(hv);
    }
    (g, h)
}

/// Magnus terms of one step starting at `t` with length `dt`.
#[derive(Debug, Clone)]
pub struct MagnusTerms {
    pub theta2: SparseMatrix,
    pub theta4: SparseMatrix,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub order: usize,
}

impl MagnusTerms {
    /// The matrix whose exponential propagates the step: theta2 for the
    /// order-2 scheme, theta2 + theta4 for order 4.
    pub fn propagation_matrix(&self) -> Result<SparseMatrix> {
        if self.order == 2 {
            Ok(self.theta2.clone())
        } else {
            SparseMatrix::linear_combination(&[(1.0, &self.theta2), (1.0, &self.theta4)])
        }
    }
}

pub fn build_theta(
    model: &PropensityModel,
    cache: &CommutatorCache,
    t: f64,
    dt: f64,
    order: usize,
    quad_points: usize,
) -> Result<MagnusTerms> {
    assert!(order == 2 || order == 4, "magnus order must be 2 or 4");
    let (g, h) = scalar_integrals(model, t, dt, quad_points);
    let mut terms: Vec<(f64, &SparseMatrix)> = vec![(dt, &model.a_const)];
    for (gl, al) in g.iter().zip(&model.a_time) {
        terms.push((dt * gl, al));
    }
    let theta2 = SparseMatrix::linear_combination(&terms)?;

    let dt2 = dt * dt;
    let mut terms4: Vec<(f64, &SparseMatrix)> = Vec::new();
    for (hl, cl) in h.iter().zip(&cache.with_const) {
        terms4.push((dt2 * hl, cl));
    }
    for ((l1, l2), c) in &cache.pairs {
        terms4.push((dt2 * (g[*l2] * h[*l1] - g[*l1] * h[*l2]), c));
    }
    let theta4 = if terms4.is_empty() {
        SparseMatrix::zeros(model.dim(), model.dim())
    } else {
        SparseMatrix::linear_combination(&terms4)?
    };
    Ok(MagnusTerms {
        theta2,
        theta4,
        g,
        h,
        order,
    })
}

/// Residual of the order-2 scheme: the first omitted Magnus term applied
/// to the current state, theta4 * p. Its l1 norm approximates the local
/// defect integral of the step.
pub fn magnus_residual(terms: &MagnusTerms, p: &[f64]) -> Result<Vec<f64>> {
    terms.theta4.spmv(p)
}

/// Estimates ||theta2(t, dt)||_2 by thirty power iterations on M^T M with
/// a fixed deterministic start vector. Values above pi flag steps outside
/// the classical convergence region of the expansion.
pub fn moan_niesen_value(model: &PropensityModel, t: f64, dt: f64) -> Result<f64> {
    let (g, _) = scalar_integrals(model, t, dt, 2);
    let mut terms: Vec<(f64, &SparseMatrix)> = vec![(dt, &model.a_const)];
    for (gl, al) in g.iter().zip(&model.a_time) {
        terms.push((dt * gl, al));
    }
    let m = SparseMatrix::linear_combination(&terms)?;
    let n = m.ncols();
    let mut v: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).sin()).collect();
    let scale = norm2(&v);
    for x in &mut v {
        *x /= scale;
    }
    let mut sigma = 0.0;
    for _ in 0..30 {
        let w = m.spmv(&v)?;
        sigma = norm2(&w);
        if sigma == 0.0 {
            return Ok(0.0);
        }
        let mut u = m.spmv_transpose(&w)?;
        let s = norm2(&u);
        if s == 0.0 {
            return Ok(sigma);
        }
        for x in &mut u {
            *x /= s;
        }
        v = u;
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm1, DenseMatrix};
    use crate::model::{
        enumerate_states, Channel, Network, PropensityModel, RateLaw, TimeFactor,
    };

    fn two_state_model() -> PropensityModel {
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
        let net = Network {
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
        let space = enumerate_states(&net, &[vec![0]], &[(0, 1)], None, 10).unwrap();
        net.assemble(&space).unwrap()
    }

    /// Birth-death chain modulated by a Hill decay; its factor has no
    /// closed-form antiderivative, so every integral goes through the
    /// same quadrature rule and matrix-level oracles match to rounding.
    fn hill_chain_model(n: i64) -> PropensityModel {
        let net = Network {
            species: 1,
            channels: vec![
                Channel {
                    change: vec![1],
                    law: RateLaw::Constant { value: 2.0 },
                    factor: Some(0),
                    weight: 1.0,
                },
                Channel {
                    change: vec![-1],
                    law: RateLaw::Linear {
                        species: 0,
                        coeff: 1.0,
                    },
                    factor: None,
                    weight: 1.0,
                },
            ],
            bounds: vec![(0, n)],
            factors: vec![TimeFactor::HillDecay {
                t_scale: 15.0,
                power: 5,
            }],
        };
        let space = enumerate_states(&net, &[vec![0]], &[(0, n)], None, 1000).unwrap();
        net.assemble(&space).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut acc = f(a) + f(b);
        for i in 1..panels {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn sin_average_uses_closed_form() {
        let model = two_state_model();
        let dt = 0.1;
        let (g, _) = scalar_integrals(&model, 0.0, dt, 2);
        assert_eq!(g[0], (1.0 - dt.cos()) / dt);
    }

    #[test]
    fn quadrature_average_matches_fine_simpson() {
        let model = hill_chain_model(4);
        let f = |t: f64| 1.0 / (1.0 + (t / 15.0).powi(5));
        for &(t, dt) in &[(0.0, 0.5), (7.3, 0.2), (14.0, 1.0), (25.0, 0.05)] {
            let (g, h) = scalar_integrals(&model, t, dt, 5);
            let g_ref = simpson(f, t, t + dt, 2000) / dt;
            let h_ref = simpson(
                |tau| tau * f(t + 0.5 * dt + tau),
                -0.5 * dt,
                0.5 * dt,
                2000,
            ) / (dt * dt);
            assert!((g[0] - g_ref).abs() < 1e-12, "g at t={t}");
            assert!((h[0] - h_ref).abs() < 1e-12, "h at t={t}");
        }
    }

    #[test]
    fn first_moment_of_sin_matches_analytic_value() {
        let model = two_state_model();
        let t = 0.4;
        let dt = 0.01;
        let (_, h) = scalar_integrals(&model, t, dt, 2);
        let d = 0.5 * dt;
        let analytic =
            2.0 * (t + d).cos() * (d.sin() - d * d.cos()) / (dt * dt);
        assert!((h[0] - analytic).abs() < 5e-9);
    }

    #[test]
    fn theta_terms_for_the_two_state_step() {
        let model = two_state_model();
        let cache = precompute_commutators(&model).unwrap();
        let dt = 0.1;
        let terms = build_theta(&model, &cache, 0.0, dt, 2, 2).unwrap();
        // theta2 = dt A_c + (1 - cos dt) A_1
        let s = 1.0 - dt.cos();
        let t2 = terms.theta2.to_dense();
        assert!((t2.at(0, 0) - (-dt - s)).abs() < 1e-15);
        assert!((t2.at(0, 1) - (dt - s)).abs() < 1e-15);
        assert!((t2.at(1, 0) - (dt + s)).abs() < 1e-15);
        assert!((t2.at(1, 1) - (-dt + s)).abs() < 1e-15);
        // theta4 = dt^2 h [A_1, A_c] with [A_1, A_c] = [[-2,-2],[2,2]]
        let t4 = terms.theta4.to_dense();
        let coeff = dt * dt * terms.h[0];
        for (i, j, sign) in [(0, 0, -2.0), (0, 1, -2.0), (1, 0, 2.0), (1, 1, 2.0)] {
            assert!((t4.at(i, j) - sign * coeff).abs() < 1e-15);
        }
        // the off-diagonal of theta4 must stay negative, not be clipped
        assert!(t4.at(0, 1) < 0.0);
        let approx = dt.powi(3) * (0.5 * dt).cos() / 12.0;
        assert!((coeff - approx).abs() / approx < 1e-3);
    }

    #[test]
    fn theta_blocks_keep_zero_column_sums() {
        let model = hill_chain_model(12);
        let cache = precompute_commutators(&model).unwrap();
        for &(t, dt) in &[(0.0, 0.3), (4.2, 0.05), (16.0, 0.7)] {
            let terms = build_theta(&model, &cache, t, dt, 4, 2).unwrap();
            let scale2 = terms.theta2.max_abs().max(1.0);
            for s in terms.theta2.column_sums() {
                assert!(s.abs() < 1e-12 * scale2);
            }
            let scale4 = terms.theta4.max_abs().max(1.0);
            for s in terms.theta4.column_sums() {
                assert!(s.abs() < 1e-12 * scale4);
            }
        }
    }

    #[test]
    fn order_four_propagation_matrix_sums_both_terms() {
        let model = two_state_model();
        let cache = precompute_commutators(&model).unwrap();
        let terms = build_theta(&model, &cache, 0.3, 0.2, 4, 2).unwrap();
        let m = terms.propagation_matrix().unwrap().to_dense();
        let t2 = terms.theta2.to_dense();
        let t4 = terms.theta4.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.at(i, j) - t2.at(i, j) - t4.at(i, j)).abs() < 1e-15);
            }
        }
    }

    /// Brute-force oracle: evaluate the averaged generator B0 and first
    /// moment B1 at the quadrature nodes as full matrices and form
    /// -dt^2 [B0, B1] p directly.
    fn residual_oracle(model: &PropensityModel, t: f64, dt: f64, p: &[f64]) -> Vec<f64> {
        let n = model.dim();
        let (nodes, weights) = gl_rule(2);
        let mid = t + 0.5 * dt;
        let mut b0 = DenseMatrix::zeros(n, n);
        let mut b1 = DenseMatrix::zeros(n, n);
        for (x, w) in nodes.iter().zip(weights) {
            let tau = 0.5 * dt * x;
            let a = model.evaluate_at(mid + tau).unwrap().to_dense();
            b0.add_scaled(0.5 * w, &a);
            b1.add_scaled(0.5 * dt * w * tau / (dt * dt), &a);
        }
        let mut comm = b0.matmul(&b1);
        let b1b0 = b1.matmul(&b0);
        comm.add_scaled(-1.0, &b1b0);
        comm.scale(-dt * dt);
        comm.mul_vec(p)
    }

    #[test]
    fn residual_matches_commutator_oracle() {
        let model = hill_chain_model(8);
        let cache = precompute_commutators(&model).unwrap();
        let n = model.dim();
        let p: Vec<f64> = (0..n).map(|i| (i + 1) as f64 / (n * (n + 1) / 2) as f64).collect();
        // pick times where the factor has a well-scaled slope; near t = 0
        // it is flat to 1e-7 and the first moment loses digits to
        // cancellation in any evaluation order
        for &(t, dt) in &[(12.0, 0.2), (9.0, 0.05), (20.0, 0.4)] {
            let terms = build_theta(&model, &cache, t, dt, 2, 2).unwrap();
            let mine = magnus_residual(&terms, &p).unwrap();
            let oracle = residual_oracle(&model, t, dt, &p);
            let scale = norm1(&oracle);
            let diff: f64 = mine
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(diff / scale < 1e-10, "relative defect {}", diff / scale);
        }
    }

    /// Chain with birth and death modulated by two different Hill
    /// factors, so the cross-factor commutator term is active.
    fn two_factor_chain_model(n: i64) -> PropensityModel {
        let net = Network {
            species: 1,
            channels: vec![
                Channel {
                    change: vec![1],
                    law: RateLaw::Constant { value: 2.0 },
                    factor: Some(0),
                    weight: 1.0,
                },
                Channel {
                    change: vec![-1],
                    law: RateLaw::Linear {
                        species: 0,
                        coeff: 1.0,
                    },
                    factor: Some(1),
                    weight: 1.0,
                },
                Channel {
                    change: vec![-1],
                    law: RateLaw::Linear {
                        species: 0,
                        coeff: 0.5,
                    },
                    factor: None,
                    weight: 1.0,
                },
            ],
            bounds: vec![(0, n)],
            factors: vec![
                TimeFactor::HillDecay {
                    t_scale: 15.0,
                    power: 5,
                },
                TimeFactor::HillDecay {
                    t_scale: 6.0,
                    power: 3,
                },
            ],
        };
        let space = enumerate_states(&net, &[vec![0]], &[(0, n)], None, 1000).unwrap();
        net.assemble(&space).unwrap()
    }

    #[test]
    fn residual_with_two_factors_matches_commutator_oracle() {
        let model = two_factor_chain_model(7);
        let cache = precompute_commutators(&model).unwrap();
        assert_eq!(cache.with_const.len(), 2);
        assert_eq!(cache.pairs.len(), 1);
        let n = model.dim();
        let p: Vec<f64> = (0..n)
            .map(|i| (i + 1) as f64 / (n * (n + 1) / 2) as f64)
            .collect();
        for &(t, dt) in &[(12.0, 0.2), (9.0, 0.05), (4.0, 0.3)] {
            let terms = build_theta(&model, &cache, t, dt, 2, 2).unwrap();
            let mine = magnus_residual(&terms, &p).unwrap();
            let oracle = residual_oracle(&model, t, dt, &p);
            let scale = norm1(&oracle);
            let diff: f64 = mine
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(diff / scale < 1e-10, "relative defect {}", diff / scale);
        }
    }

    #[test]
    fn residual_on_sin_model_consistent_with_oracle() {
        // the closed-form average differs from the oracle's node values
        // only by the quadrature error of the rule itself
        let model = two_state_model();
        let cache = precompute_commutators(&model).unwrap();
        let p = vec![0.3, 0.7];
        let t = 1.1;
        let dt = 0.05;
        let terms = build_theta(&model, &cache, t, dt, 2, 2).unwrap();
        let mine = magnus_residual(&terms, &p).unwrap();
        let oracle = residual_oracle(&model, t, dt, &p);
        let scale = norm1(&oracle);
        let diff: f64 = mine.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff / scale < 1e-6);
    }

    #[test]
    fn constant_generator_has_zero_residual() {
        let net = Network {
            species: 1,
            channels: vec![
                Channel {
                    change: vec![1],
                    law: RateLaw::Constant { value: 1.0 },
                    factor: None,
                    weight: 1.0,
                },
                Channel {
                    change: vec![-1],
                    law: RateLaw::Linear {
                        species: 0,
                        coeff: 1.0,
                    },
                    factor: None,
                    weight: 1.0,
                },
            ],
            bounds: vec![(0, 6)],
            factors: vec![],
        };
        let space = enumerate_states(&net, &[vec![0]], &[(0, 6)], None, 10).unwrap();
        let model = net.assemble(&space).unwrap();
        let cache = precompute_commutators(&model).unwrap();
        let terms = build_theta(&model, &cache, 0.0, 0.3, 2, 2).unwrap();
        let p = vec![1.0 / 7.0; 7];
        let r = magnus_residual(&terms, &p).unwrap();
        assert_eq!(norm1(&r), 0.0);
    }

    #[test]
    fn spectral_norm_of_symmetric_generator() {
        let net = Network {
            species: 1,
            channels: vec![
                Channel {
                    change: vec![1],
                    law: RateLaw::Constant { value: 1.0 },
                    factor: None,
                    weight: 1.0,
                },
                Channel {
                    change: vec![-1],
                    law: RateLaw::Constant { value: 1.0 },
                    factor: None,
                    weight: 1.0,
                },
            ],
            bounds: vec![(0, 1)],
            factors: vec![],
        };
        let space = enumerate_states(&net, &[vec![0]], &[(0, 1)], None, 10).unwrap();
        let model = net.assemble(&space).unwrap();
        let v = moan_niesen_value(&model, 0.0, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_norm_estimate_tracks_long_power_iteration() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..5 {
            let m = crate::linalg::tests::random_generator(&mut rng, 10, 2.0);
            let net_model = fake_model_from(&m);
            let est = moan_niesen_value(&net_model, 0.0, 1.0).unwrap();
            // long dense power iteration as oracle
            let d = m.to_dense();
            let mut v: Vec<f64> = (0..10).map(|i| 1.0 + (i as f64 * 0.7).cos()).collect();
            let mut sigma = 0.0;
            for _ in 0..500 {
                let w = d.mul_vec(&v);
                sigma = norm2(&w);
                let mut u = vec![0.0; 10];
                for c in 0..10 {
                    for r in 0..10 {
                        u[c] += d.at(r, c) * w[r];
                    }
                }
                let s = norm2(&u);
                for x in &mut u {
                    *x /= s;
                }
                v = u;
            }
            assert!(est <= sigma * 1.0001);
            assert!(est >= sigma * 0.9, "est {est} vs oracle {sigma}");
        }
    }

    /// Wraps an arbitrary constant sparse generator in a PropensityModel.
    fn fake_model_from(m: &SparseMatrix) -> PropensityModel {
        let n = m.ncols();
        let net = Network {
            species: 1,
            channels: vec![],
            bounds: vec![(0, n as i64 - 1)],
            factors: vec![],
        };
        let space = crate::model::StateSpace::from_states(
            (0..n as i64).map(|i| vec![i]).collect(),
        );
        let mut model = net.assemble(&space).unwrap();
        model.a_const = m.clone();
        model
    }
}
