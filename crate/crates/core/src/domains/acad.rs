//! Academic Advising: a student takes one course per step until every
//! program requirement is passed. The binary non-fluent `prereq(a, b)` is a
//! directed edge from prerequisite `a` to course `b`; the unary non-fluent
//! `program_requirement` marks required courses.

use super::{check_prob, DomainError};
use crate::mdp::{GroundAction, GroundState, ProblemInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct AcadParams {
    pub prior_pass_prob_no_prereq: f64,
    /// Pass probability with prerequisites is
    /// `prereq_pass_scale * (1 + passed prereqs) / (1 + prereqs)`.
    pub prereq_pass_scale: f64,
    pub course_cost: f64,
    /// Charged instead of `course_cost` when taking an already-passed course.
    pub redo_cost: f64,
    /// Charged every step while some requirement is unpassed.
    pub incomplete_penalty: f64,
}

impl Default for AcadParams {
    fn default() -> Self {
        Self {
            prior_pass_prob_no_prereq: 0.8,
            prereq_pass_scale: 0.9,
            course_cost: -1.0,
            redo_cost: -2.0,
            incomplete_penalty: -5.0,
        }
    }
}

impl AcadParams {
    pub(crate) fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("prior_pass_prob_no_prereq", self.prior_pass_prob_no_prereq),
            ("prereq_pass_scale", self.prereq_pass_scale),
            ("course_cost", self.course_cost),
            ("redo_cost", self.redo_cost),
            ("incomplete_penalty", self.incomplete_penalty),
        ]
    }

    pub(crate) fn slot(&mut self, key: &str) -> Option<&mut f64> {
        match key {
            "prior_pass_prob_no_prereq" => Some(&mut self.prior_pass_prob_no_prereq),
            "prereq_pass_scale" => Some(&mut self.prereq_pass_scale),
            "course_cost" => Some(&mut self.course_cost),
            "redo_cost" => Some(&mut self.redo_cost),
            "incomplete_penalty" => Some(&mut self.incomplete_penalty),
            _ => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), DomainError> {
        check_prob("prior_pass_prob_no_prereq", self.prior_pass_prob_no_prereq, 1.0)?;
        check_prob("prereq_pass_scale", self.prereq_pass_scale, 1.0)?;
        for (key, value) in [
            ("course_cost", self.course_cost),
            ("redo_cost", self.redo_cost),
            ("incomplete_penalty", self.incomplete_penalty),
        ] {
            if !(value <= 0.0) {
                return Err(DomainError::ParamRange {
                    key: key.into(),
                    value,
                });
            }
        }
        Ok(())
    }
}

pub fn is_required(instance: &ProblemInstance, i: usize) -> bool {
    instance.unary_nonfluents.cols() > 0 && instance.unary_nonfluents.get(i, 0) != 0.0
}

pub fn requirements_met(instance: &ProblemInstance, state: &GroundState) -> bool {
    (0..instance.object_count()).all(|i| !is_required(instance, i) || state.flag(i))
}

/// `(passed prerequisites, prerequisites)` of course `i`.
pub fn prereq_progress(instance: &ProblemInstance, state: &GroundState, i: usize) -> (usize, usize) {
    let mut total = 0;
    let mut passed = 0;
    for p in instance.binary_nonfluent.in_neighbors(i) {
        total += 1;
        passed += state.flag(p) as usize;
    }
    (passed, total)
}

/// `P(passed'(course_i) = 1)`.
pub fn next_prob(
    params: &AcadParams,
    instance: &ProblemInstance,
    state: &GroundState,
    action: GroundAction,
    i: usize,
) -> f64 {
    if state.flag(i) {
        return 1.0;
    }
    if !action.targets(i) {
        return 0.0;
    }
    let (passed, total) = prereq_progress(instance, state, i);
    if total == 0 {
        params.prior_pass_prob_no_prereq
    } else {
        (params.prereq_pass_scale * (1 + passed) as f64 / (1 + total) as f64).clamp(0.0, 1.0)
    }
}

pub fn reward(
    params: &AcadParams,
    instance: &ProblemInstance,
    state: &GroundState,
    action: GroundAction,
) -> f64 {
    let mut r = match action {
        GroundAction::Apply { object, .. } if state.flag(object) => params.redo_cost,
        GroundAction::Apply { .. } => params.course_cost,
        GroundAction::Noop => 0.0,
    };
    if !requirements_met(instance, state) {
        r += params.incomplete_penalty;
    }
    r
}
