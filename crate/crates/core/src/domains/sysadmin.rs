//! SysAdmin: keep a network of computers running. One `reboot` template.

use super::{check_prob, DomainError};
use crate::mdp::{GroundAction, GroundState, ProblemInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct SysAdminParams {
    pub reboot_success_prob: f64,
    pub base_running_prob: f64,
    pub neighbor_bonus: f64,
    pub spontaneous_recovery_prob: f64,
    pub reboot_penalty: f64,
}

impl Default for SysAdminParams {
    fn default() -> Self {
        Self {
            reboot_success_prob: 1.0,
            base_running_prob: 0.45,
            neighbor_bonus: 0.5,
            spontaneous_recovery_prob: 0.04,
            reboot_penalty: 0.75,
        }
    }
}

impl SysAdminParams {
    pub(crate) fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("reboot_success_prob", self.reboot_success_prob),
            ("base_running_prob", self.base_running_prob),
            ("neighbor_bonus", self.neighbor_bonus),
            ("spontaneous_recovery_prob", self.spontaneous_recovery_prob),
            ("reboot_penalty", self.reboot_penalty),
        ]
    }

    pub(crate) fn slot(&mut self, key: &str) -> Option<&mut f64> {
        match key {
            "reboot_success_prob" => Some(&mut self.reboot_success_prob),
            "base_running_prob" => Some(&mut self.base_running_prob),
            "neighbor_bonus" => Some(&mut self.neighbor_bonus),
            "spontaneous_recovery_prob" => Some(&mut self.spontaneous_recovery_prob),
            "reboot_penalty" => Some(&mut self.reboot_penalty),
            _ => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), DomainError> {
        check_prob("reboot_success_prob", self.reboot_success_prob, 1.0)?;
        check_prob("base_running_prob", self.base_running_prob, 1.0)?;
        check_prob("neighbor_bonus", self.neighbor_bonus, 1.0)?;
        check_prob("spontaneous_recovery_prob", self.spontaneous_recovery_prob, 1.0)?;
        if !self.reboot_penalty.is_finite() {
            return Err(DomainError::ParamRange {
                key: "reboot_penalty".into(),
                value: self.reboot_penalty,
            });
        }
        Ok(())
    }
}

/// `P(running'(o_i) = 1)`.
pub fn next_prob(
    params: &SysAdminParams,
    instance: &ProblemInstance,
    state: &GroundState,
    action: GroundAction,
    i: usize,
) -> f64 {
    if action.targets(i) {
        return params.reboot_success_prob;
    }
    if !state.flag(i) {
        return params.spontaneous_recovery_prob;
    }
    let adj = &instance.binary_nonfluent;
    let (mut neighbors, mut running) = (0usize, 0usize);
    for j in adj.out_neighbors(i) {
        neighbors += 1;
        running += state.flag(j) as usize;
    }
    let p = params.base_running_prob
        + params.neighbor_bonus * (1 + running) as f64 / (1 + neighbors) as f64;
    p.clamp(0.0, 1.0)
}

pub fn reward(params: &SysAdminParams, state: &GroundState, action: GroundAction) -> f64 {
    let running = state.count_true() as f64;
    if action.is_noop() {
        running
    } else {
        running - params.reboot_penalty
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::DomainParams;
    use crate::mdp::{Adjacency, DomainId, Matrix};

    fn star(n: usize) -> ProblemInstance {
        // object 0 connected to every other object
        let mut adj = Adjacency::empty(n);
        for j in 1..n {
            adj.set(0, j, true);
            adj.set(j, 0, true);
        }
        ProblemInstance {
            name: "star".into(),
            domain: DomainId::SysAdmin,
            objects: (0..n).map(|i| format!("c{}", i + 1)).collect(),
            unary_nonfluents: Matrix::zeros(n, 0),
            binary_nonfluent: adj,
            initial_fluents: Matrix::from_vec(n, 1, vec![1.0; n]),
            horizon: 10,
            discount: 1.0,
            params: DomainParams::SysAdmin(SysAdminParams::default()),
        }
    }

    #[test]
    fn rebooted_computer_is_certain() {
        let inst = star(4);
        let s = GroundState::from_flags(&[false, false, false, false]);
        let p = next_prob(&SysAdminParams::default(), &inst, &s, GroundAction::apply(0, 2), 2);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn running_with_two_of_three_neighbors() {
        let inst = star(4);
        let s = GroundState::from_flags(&[true, true, true, false]);
        let p = next_prob(&SysAdminParams::default(), &inst, &s, GroundAction::Noop, 0);
        assert!((p - 0.825).abs() < 1e-15);
    }

    #[test]
    fn dead_and_not_rebooted() {
        let inst = star(4);
        let s = GroundState::from_flags(&[false, true, true, true]);
        let p = next_prob(&SysAdminParams::default(), &inst, &s, GroundAction::apply(0, 1), 0);
        assert_eq!(p, 0.04);
    }

    #[test]
    fn reward_examples() {
        let params = SysAdminParams::default();
        let s = GroundState::from_flags(&[true, true, true, true, true, false, false, false]);
        assert_eq!(reward(&params, &s, GroundAction::Noop), 5.0);
        assert_eq!(reward(&params, &s, GroundAction::apply(0, 5)), 4.25);
        let dead = GroundState::from_flags(&[false; 8]);
        assert_eq!(reward(&params, &dead, GroundAction::Noop), 0.0);
    }

    #[test]
    fn monotone_in_running_neighbors() {
        let inst = star(6);
        let params = SysAdminParams::default();
        let mut last = 0.0;
        for k in 0..=5 {
            let mut flags = vec![true];
            flags.extend((1..6).map(|j| j <= k));
            let p = next_prob(&params, &inst, &GroundState::from_flags(&flags), GroundAction::Noop, 0);
            assert!(p >= last);
            last = p;
        }
    }
}
