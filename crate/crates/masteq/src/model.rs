//! Reaction-network description and generator assembly.
//!
//! A `Network` is a set of jump channels over an integer lattice. Each
//! channel contributes `weight * alpha(x)` either to the constant block
//! `A_c` or to one time-modulated block `A_l`, so the assembled generator
//! has the separable form A(t) = A_c + sum_l f_l(t) A_l. Channels whose
//! physical rate is an affine function of a registered factor (say
//! 1 - sin t) are split into a constant channel and a weighted factor
//! channel; the weight may be negative, the state part alpha(x) never is.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;

/// Registered scalar time modulation with an optional closed-form
/// antiderivative. Factors without one are integrated by quadrature.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFactor {
    /// f(t) = sin t
    Sin,
    /// f(t) = 1 / (1 + (t / t_scale)^power)
    HillDecay { t_scale: f64, power: i32 },
    /// f(s) = inner(t_total - s), used for time-reversed runs.
    Reflected { t_total: f64, inner: Box<TimeFactor> },
}

impl TimeFactor {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFactor::Sin => t.sin(),
            TimeFactor::HillDecay { t_scale, power } => {
                1.0 / (1.0 + (t / t_scale).powi(*power))
            }
            TimeFactor::Reflected { t_total, inner } => inner.eval(t_total - t),
        }
    }

    /// F with F' = f, when one is registered.
    pub fn antiderivative(&self, t: f64) -> Option<f64> {
        match self {
            TimeFactor::Sin => Some(-t.cos()),
            TimeFactor::HillDecay { .. } => None,
            TimeFactor::Reflected { t_total, inner } => {
                inner.antiderivative(t_total - t).map(|v| -v)
            }
        }
    }

    pub fn reflected(&self, t_total: f64) -> TimeFactor {
        TimeFactor::Reflected {
            t_total,
            inner: Box::new(self.clone()),
        }
    }
}

/// State-dependent part of a channel rate; always nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub enum RateLaw {
    /// alpha(x) = value
    Constant { value: f64 },
    /// alpha(x) = coeff * x[species]
    Linear { species: usize, coeff: f64 },
    /// alpha(x) = coeff * x[a] * x[b]
    MassActionPair { a: usize, b: usize, coeff: f64 },
    /// alpha(x) = coeff * x[multiplier] * (1/(x[pair.0]+x[pair.1]) + 1/(x[shifted]+shift))
    /// Zero when the multiplier population is zero.
    HomeostaticBirth {
        multiplier: usize,
        pair: (usize, usize),
        shifted: usize,
        shift: f64,
        coeff: f64,
    },
}

impl RateLaw {
    pub fn eval(&self, x: &[i64]) -> f64 {
        match self {
            RateLaw::Constant { value } => *value,
            RateLaw::Linear { species, coeff } => coeff * x[*species] as f64,
            RateLaw::MassActionPair { a, b, coeff } => coeff * x[*a] as f64 * x[*b] as f64,
            RateLaw::HomeostaticBirth {
                multiplier,
                pair,
                shifted,
                shift,
                coeff,
            } => {
                let m = x[*multiplier] as f64;
                if m == 0.0 {
                    return 0.0;
                }
                let total = (x[pair.0] + x[pair.1]) as f64;
                coeff * m * (1.0 / total + 1.0 / (x[*shifted] as f64 + shift))
            }
        }
    }
}

/// One jump channel. `factor` selects the block the channel is assembled
/// into (`None` means the constant block) and `weight` is the signed
/// coefficient it enters with.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub change: Vec<i64>,
    pub law: RateLaw,
    pub factor: Option<usize>,
    pub weight: f64,
}

/// Finite set of lattice states in a fixed lexicographic order with a
/// reverse lookup map.
#[derive(Debug, Clone)]
pub struct StateSpace {
    states: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, usize>,
}

impl StateSpace {
    pub fn from_states(mut states: Vec<Vec<i64>>) -> StateSpace {
        states.sort_unstable();
        states.dedup();
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        StateSpace { states, index }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[i64] {
        &self.states[i]
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn states(&self) -> impl Iterator<Item = &Vec<i64>> {
        self.states.iter()
    }

    /// Re-embeds a vector defined on `from` into this space; entries of
    /// states absent here are dropped, new states get zero.
    pub fn embed_from(&self, from: &StateSpace, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, x) in from.states.iter().enumerate() {
            if let Some(j) = self.index_of(x) {
                out[j] = v[i];
            }
        }
        out
    }
}

impl PartialEq for StateSpace {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
    }
}

/// Optional linear invariant `weights . x == total` restricting enumeration.
#[derive(Debug, Clone)]
pub struct ConservationLaw {
    pub weights: Vec<f64>,
    pub total: f64,
}

/// Jump channels plus the hard lattice bounds they act on.
#[derive(Debug, Clone)]
pub struct Network {
    pub species: usize,
    pub channels: Vec<Channel>,
    /// Inclusive per-species bounds of the admissible lattice.
    pub bounds: Vec<(i64, i64)>,
    pub factors: Vec<TimeFactor>,
}

impl Network {
    pub fn within_bounds(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// State part of a channel rate, zero when the jump would leave the
    /// admissible lattice.
    pub fn rate(&self, ch: &Channel, x: &[i64]) -> f64 {
        let target: Vec<i64> = x.iter().zip(&ch.change).map(|(a, b)| a + b).collect();
        if !self.within_bounds(&target) {
            return 0.0;
        }
        ch.law.eval(x)
    }

    pub fn jump_target(&self, ch: &Channel, x: &[i64]) -> Vec<i64> {
        x.iter().zip(&ch.change).map(|(a, b)| a + b).collect()
    }

    /// Assembles the separable generator blocks on the given state space.
    /// Jumps leaving the space contribute only their diagonal term, which
    /// makes the column sum of an edge column strictly negative; that
    /// deficit is exactly the outflow rate of the truncation.
    pub fn assemble(&self, space: &StateSpace) -> Result<PropensityModel> {
        let n = space.len();
        let mut const_trips: Vec<(usize, usize, f64)> = Vec::new();
        let mut time_trips: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); self.factors.len()];
        for (j, x) in space.states.iter().enumerate() {
            for ch in &self.channels {
                let alpha = self.rate(ch, x);
                if alpha == 0.0 {
                    continue;
                }
                if alpha < 0.0 || !alpha.is_finite() {
                    return Err(Error::NonFinite {
                        context: "channel rate must be finite and nonnegative",
                    });
                }
                let v = ch.weight * alpha;
                let sink = match ch.factor {
                    None => &mut const_trips,
                    Some(l) => {
                        if l >= self.factors.len() {
                            return Err(Error::InvalidConfig(format!(
                                "channel references factor {l} but only {} registered",
                                self.factors.len()
                            )));
                        }
                        &mut time_trips[l]
                    }
                };
                sink.push((j, j, -v));
                let target = self.jump_target(ch, x);
                if let Some(i) = space.index_of(&target) {
                    sink.push((i, j, v));
                }
            }
        }
        let a_const = SparseMatrix::from_triplets(n, n, const_trips)?;
        let a_time = time_trips
            .into_iter()
            .map(|t| SparseMatrix::from_triplets(n, n, t))
            .collect::<Result<Vec<_>>>()?;
        let const_colsums = a_const.column_sums();
        let time_colsums = a_time.iter().map(|m| m.column_sums()).collect();
        Ok(PropensityModel {
            space: space.clone(),
            a_const,
            a_time,
            factors: self.factors.clone(),
            const_colsums,
            time_colsums,
        })
    }
}

/// Breadth-first closure of the seed states under all channel jumps,
/// restricted to `window`, the hard bounds, and an optional conservation
/// law. Fails if more than `cap` states are reached.
pub fn enumerate_states(
    network: &Network,
    seeds: &[Vec<i64>],
    window: &[(i64, i64)],
    conservation: Option<&ConservationLaw>,
    cap: usize,
) -> Result<StateSpace> {
    let in_window = |x: &[i64]| {
        x.iter()
            .zip(window)
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    };
    let conserved = |x: &[i64]| match conservation {
        None => true,
        Some(law) => {
            let s: f64 = x.iter().zip(&law.weights).map(|(v, w)| *v as f64 * w).sum();
            (s - law.total).abs() < 1e-9
        }
    };
    let mut seen: HashMap<Vec<i64>, ()> = HashMap::new();
    let mut queue: Vec<Vec<i64>> = Vec::new();
    for s in seeds {
        if network.within_bounds(s) && in_window(s) && conserved(s) && !seen.contains_key(s) {
            seen.insert(s.clone(), ());
            queue.push(s.clone());
        }
    }
    let mut head = 0;
    while head < queue.len() {
        let x = queue[head].clone();
        head += 1;
        for ch in &network.channels {
            if network.rate(ch, &x) <= 0.0 {
                continue;
            }
            let target = network.jump_target(ch, &x);
            if !in_window(&target) || !conserved(&target) || seen.contains_key(&target) {
                continue;
            }
            seen.insert(target.clone(), ());
            if seen.len() > cap {
                return Err(Error::StateCapExceeded { cap });
            }
            queue.push(target);
        }
    }
    Ok(StateSpace::from_states(queue))
}

/// Assembled separable generator on a fixed state space.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub space: StateSpace,
    pub a_const: SparseMatrix,
    pub a_time: Vec<SparseMatrix>,
    pub factors: Vec<TimeFactor>,
    const_colsums: Vec<f64>,
    time_colsums: Vec<Vec<f64>>,
}

impl PropensityModel {
    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn factor_values(&self, t: f64) -> Vec<f64> {
        self.factors.iter().map(|f| f.eval(t)).collect()
    }

    /// A(t) as a single sparse matrix.
    pub fn evaluate_at(&self, t: f64) -> Result<SparseMatrix> {
        let fv = self.factor_values(t);
        let mut terms: Vec<(f64, &SparseMatrix)> = vec![(1.0, &self.a_const)];
        for (f, m) in fv.iter().zip(&self.a_time) {
            terms.push((*f, m));
        }
        SparseMatrix::linear_combination(&terms)
    }

    /// Column sums of A(t), combined from the cached per-block sums.
    pub fn column_sums_at(&self, t: f64) -> Vec<f64> {
        let fv = self.factor_values(t);
        let mut out = self.const_colsums.clone();
        for (f, block) in fv.iter().zip(&self.time_colsums) {
            for (o, b) in out.iter_mut().zip(block) {
                *o += f * b;
            }
        }
        out
    }

    pub fn is_time_dependent(&self) -> bool {
        self.a_time.iter().any(|m| m.nnz() > 0)
    }

    /// Transposed generator with time running backwards from t_total,
    /// i.e. B(s) = A(t_total - s)^T. This is the evolution the dual
    /// variable follows when integrated as a forward problem.
    pub fn transpose_reflected(&self, t_total: f64) -> PropensityModel {
        let a_const = self.a_const.transpose();
        let a_time: Vec<SparseMatrix> = self.a_time.iter().map(|m| m.transpose()).collect();
        let factors: Vec<TimeFactor> = self.factors.iter().map(|f| f.reflected(t_total)).collect();
        let const_colsums = a_const.column_sums();
        let time_colsums = a_time.iter().map(|m| m.column_sums()).collect();
        PropensityModel {
            space: self.space.clone(),
            a_const,
            a_time,
            factors,
            const_colsums,
            time_colsums,
        }
    }
}
