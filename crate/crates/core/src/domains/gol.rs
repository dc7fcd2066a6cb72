//! Game of Life with noise. One `set` template that makes a cell alive.
//! Neighborhoods come from the instance adjacency (8-neighbor grids when
//! generated), so any graph works.

use super::{check_prob, DomainError};
use crate::mdp::{GroundAction, GroundState, ProblemInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct GoLParams {
    pub noise_prob: f64,
    pub set_action_penalty: f64,
}

impl Default for GoLParams {
    fn default() -> Self {
        Self {
            noise_prob: 0.1,
            set_action_penalty: 0.0,
        }
    }
}

impl GoLParams {
    pub(crate) fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("noise_prob", self.noise_prob),
            ("set_action_penalty", self.set_action_penalty),
        ]
    }

    pub(crate) fn slot(&mut self, key: &str) -> Option<&mut f64> {
        match key {
            "noise_prob" => Some(&mut self.noise_prob),
            "set_action_penalty" => Some(&mut self.set_action_penalty),
            _ => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), DomainError> {
        check_prob("noise_prob", self.noise_prob, 0.5)?;
        if !self.set_action_penalty.is_finite() {
            return Err(DomainError::ParamRange {
                key: "set_action_penalty".into(),
                value: self.set_action_penalty,
            });
        }
        Ok(())
    }
}

/// Conway successor of cell `i`: survives with 2 or 3 live neighbors, is
/// born with exactly 3.
pub fn conway_successor(instance: &ProblemInstance, state: &GroundState, i: usize) -> bool {
    let live = instance
        .binary_nonfluent
        .out_neighbors(i)
        .filter(|&j| state.flag(j))
        .count();
    if state.flag(i) {
        live == 2 || live == 3
    } else {
        live == 3
    }
}

/// `P(alive'(cell_i) = 1)`.
pub fn next_prob(
    params: &GoLParams,
    instance: &ProblemInstance,
    state: &GroundState,
    action: GroundAction,
    i: usize,
) -> f64 {
    let target = action.targets(i) || conway_successor(instance, state, i);
    if target {
        1.0 - params.noise_prob
    } else {
        params.noise_prob
    }
}

pub fn reward(params: &GoLParams, state: &GroundState, action: GroundAction) -> f64 {
    let alive = state.count_true() as f64;
    if action.is_noop() {
        alive
    } else {
        alive - params.set_action_penalty
    }
}
