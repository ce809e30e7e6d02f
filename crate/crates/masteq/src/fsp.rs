//! Truncated state-space management.
//!
//! The solver keeps a working set of states and treats everything outside
//! it as absorbing. The generator assembled on the working set loses the
//! columns' exiting entries, so probability leaks at a rate that is
//! computable from column-sum deficits without ever building the
//! remainder block. This module tracks the working set, its one-jump
//! frontier, and the mass zeroed by shrink operations.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::norm1;
use crate::model::{Network, PropensityModel, StateSpace};

/// A channel jump from a kept state to a state outside the working set.
#[derive(Debug, Clone)]
pub struct FrontierJump {
    /// Index of the source state in the working space.
    pub from: usize,
    /// Propensity of the jump at the source state (time factor excluded).
    pub alpha: f64,
    pub weight: f64,
    pub factor: Option<usize>,
    /// Coordinates of the exterior target state.
    pub target: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct StateProjection {
    pub space: StateSpace,
    pub frontier: Vec<FrontierJump>,
    /// Exact l1 mass zeroed by every shrink so far.
    pub dropped_mass: f64,
}

fn compute_frontier(net: &Network, space: &StateSpace) -> Vec<FrontierJump> {
    let mut frontier = Vec::new();
    for (i, x) in space.states().enumerate() {
        for ch in &net.channels {
            let alpha = net.rate(ch, x);
            if alpha <= 0.0 {
                continue;
            }
            let target = net.jump_target(ch, x);
            if space.index_of(&target).is_none() {
                frontier.push(FrontierJump {
                    from: i,
                    alpha,
                    weight: ch.weight,
                    factor: ch.factor,
                    target,
                });
            }
        }
    }
    frontier
}

pub struct ShrinkOutcome {
    pub projection: StateProjection,
    /// Mass zeroed by this call.
    pub dropped_mass: f64,
    /// Removed states with their zeroed entries.
    pub removed: Vec<(Vec<i64>, f64)>,
    /// The solution restricted to the new space.
    pub kept_p: Vec<f64>,
}

impl StateProjection {
    pub fn new(net: &Network, space: StateSpace) -> StateProjection {
        let frontier = compute_frontier(net, &space);
        StateProjection {
            space,
            frontier,
            dropped_mass: 0.0,
        }
    }

    /// Adds every exterior state reachable in one jump. The caller must
    /// reassemble the generator and re-embed the solution afterwards.
    pub fn expand(&self, net: &Network, cap: usize) -> Result<StateProjection> {
        if self.frontier.is_empty() {
            return Ok(self.clone());
        }
        let mut states: Vec<Vec<i64>> = self.space.states().cloned().collect();
        for jump in &self.frontier {
            states.push(jump.target.clone());
        }
        let space = StateSpace::from_states(states);
        if space.len() > cap {
            return Err(Error::StateCapExceeded { cap });
        }
        let frontier = compute_frontier(net, &space);
        Ok(StateProjection {
            space,
            frontier,
            dropped_mass: self.dropped_mass,
        })
    }

    /// Removes states carrying less than `drop_threshold` that are not
    /// one jump away from any retained state at or above the threshold.
    /// Aborts (returns the projection unchanged) when the zeroed mass
    /// would exceed `max_drop`.
    pub fn shrink(
        &self,
        net: &Network,
        p: &[f64],
        drop_threshold: f64,
        max_drop: f64,
    ) -> ShrinkOutcome {
        let n = self.space.len();
        let unchanged = |proj: &StateProjection| ShrinkOutcome {
            projection: proj.clone(),
            dropped_mass: 0.0,
            removed: Vec::new(),
            kept_p: p.to_vec(),
        };
        if drop_threshold <= 0.0 {
            return unchanged(self);
        }
        let mut keep = vec![false; n];
        let mut any_high = false;
        for (i, &pi) in p.iter().enumerate() {
            if pi >= drop_threshold {
                keep[i] = true;
                any_high = true;
            }
        }
        if !any_high {
            return unchanged(self);
        }
        // buffer: states fed directly by a retained high state stay
        let mut buffered = Vec::new();
        for (i, x) in self.space.states().enumerate() {
            if !keep[i] {
                continue;
            }
            for ch in &net.channels {
                if net.rate(ch, x) <= 0.0 {
                    continue;
                }
                if let Some(j) = self.space.index_of(&net.jump_target(ch, x)) {
                    buffered.push(j);
                }
            }
        }
        for j in buffered {
            keep[j] = true;
        }
        if keep.iter().all(|&k| k) {
            return unchanged(self);
        }
        let mut kept_states = Vec::new();
        let mut kept_p = Vec::new();
        let mut removed = Vec::new();
        for (i, x) in self.space.states().enumerate() {
            if keep[i] {
                kept_states.push(x.clone());
                kept_p.push(p[i]);
            } else {
                removed.push((x.clone(), p[i]));
            }
        }
        let dropped_mass = (norm1(p) - norm1(&kept_p)).max(0.0);
        if dropped_mass > max_drop {
            return unchanged(self);
        }
        let space = StateSpace::from_states(kept_states);
        let frontier = compute_frontier(net, &space);
        ShrinkOutcome {
            projection: StateProjection {
                space,
                frontier,
                dropped_mass: self.dropped_mass + dropped_mass,
            },
            dropped_mass,
            removed,
            kept_p,
        }
    }
}

/// Rate at which probability exits the working set: the l1 norm of the
/// remainder block applied to p, computed through the column-sum deficit
/// of the truncated generator.
pub fn outflow_rate(model: &PropensityModel, p: &[f64], t: f64) -> Result<f64> {
    let sums = model.column_sums_at(t);
    let mut rate = 0.0;
    for (s, pi) in sums.iter().zip(p) {
        rate -= s * pi;
    }
    if rate < -1e-12 {
        return Err(Error::NegativeOutflow { value: rate });
    }
    Ok(rate.max(0.0))
}

/// Local truncation contribution of one step: midpoint rate on the
/// trapezoid average of the endpoint solutions, times the step length.
pub fn step_outflow_estimate(
    model: &PropensityModel,
    p_n: &[f64],
    p_next: &[f64],
    t_n: f64,
    dt: f64,
) -> Result<f64> {
    let avg: Vec<f64> = p_n
        .iter()
        .zip(p_next)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(dt * outflow_rate(model, &avg, t_n + 0.5 * dt)?)
}

/// Probability flux into each exterior state at time t, sorted by target
/// coordinates for deterministic output.
pub fn exit_fluxes(
    proj: &StateProjection,
    model: &PropensityModel,
    t: f64,
    p: &[f64],
) -> Vec<(Vec<i64>, f64)> {
    let fvals = model.factor_values(t);
    let mut acc: HashMap<&[i64], f64> = HashMap::new();
    for jump in &proj.frontier {
        let fv = jump.factor.map_or(1.0, |l| fvals[l]);
        *acc.entry(&jump.target).or_insert(0.0) += jump.weight * fv * jump.alpha * p[jump.from];
    }
    let mut out: Vec<(Vec<i64>, f64)> = acc
        .into_iter()
        .map(|(k, v)| (k.to_vec(), v))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Classic truncation diagnostic: 1 - ||p||_1. Only meaningful when the
/// propagator is an exact exponential.
pub fn probability_loss(p: &[f64]) -> f64 {
    1.0 - norm1(p)
}
