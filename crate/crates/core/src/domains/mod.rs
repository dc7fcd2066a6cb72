//! Transition and reward models for SysAdmin, Game of Life and Academic
//! Advising, plus seeded random instance generators.
//!
//! Transitions factor per object: given `(state, action)`, each object's next
//! fluent is an independent Bernoulli whose probability comes from the
//! domain's `next_prob`. Sampling lives in [`crate::mdp::step`].

pub mod acad;
mod generate;
pub mod gol;
pub mod sysadmin;

pub use acad::AcadParams;
pub use generate::{generate_instance, GeneratorConfig, Topology};
pub use gol::GoLParams;
pub use sysadmin::SysAdminParams;

use thiserror::Error;

use crate::mdp::{DomainId, GroundAction, GroundState, ProblemInstance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("unknown parameter `{key}` for domain {domain}")]
    UnknownParam { domain: DomainId, key: String },
    #[error("parameter `{key}` = {value} out of range")]
    ParamRange { key: String, value: f64 },
}

/// Numeric dynamics constants for one domain.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainParams {
    SysAdmin(SysAdminParams),
    GameOfLife(GoLParams),
    AcademicAdvising(AcadParams),
}

impl DomainParams {
    pub fn defaults(domain: DomainId) -> Self {
        match domain {
            DomainId::SysAdmin => DomainParams::SysAdmin(SysAdminParams::default()),
            DomainId::GameOfLife => DomainParams::GameOfLife(GoLParams::default()),
            DomainId::AcademicAdvising => DomainParams::AcademicAdvising(AcadParams::default()),
        }
    }

    pub fn domain(&self) -> DomainId {
        match self {
            DomainParams::SysAdmin(_) => DomainId::SysAdmin,
            DomainParams::GameOfLife(_) => DomainId::GameOfLife,
            DomainParams::AcademicAdvising(_) => DomainId::AcademicAdvising,
        }
    }

    /// `(key, value)` pairs sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut e = match self {
            DomainParams::SysAdmin(p) => p.entries(),
            DomainParams::GameOfLife(p) => p.entries(),
            DomainParams::AcademicAdvising(p) => p.entries(),
        };
        e.sort_by(|a, b| a.0.cmp(b.0));
        e
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), DomainError> {
        let domain = self.domain();
        let slot = match self {
            DomainParams::SysAdmin(p) => p.slot(key),
            DomainParams::GameOfLife(p) => p.slot(key),
            DomainParams::AcademicAdvising(p) => p.slot(key),
        };
        match slot {
            Some(s) => {
                *s = value;
                Ok(())
            }
            None => Err(DomainError::UnknownParam {
                domain,
                key: key.to_string(),
            }),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        match self {
            DomainParams::SysAdmin(p) => p.validate(),
            DomainParams::GameOfLife(p) => p.validate(),
            DomainParams::AcademicAdvising(p) => p.validate(),
        }
    }
}

pub(crate) fn check_prob(key: &str, value: f64, hi: f64) -> Result<(), DomainError> {
    if (0.0..=hi).contains(&value) {
        Ok(())
    } else {
        Err(DomainError::ParamRange {
            key: key.to_string(),
            value,
        })
    }
}

/// Probability that object `i`'s (first) fluent is true in the next state.
pub fn next_prob(
    instance: &ProblemInstance,
    state: &GroundState,
    action: GroundAction,
    i: usize,
) -> f64 {
    match &instance.params {
        DomainParams::SysAdmin(p) => sysadmin::next_prob(p, instance, state, action, i),
        DomainParams::GameOfLife(p) => gol::next_prob(p, instance, state, action, i),
        DomainParams::AcademicAdvising(p) => acad::next_prob(p, instance, state, action, i),
    }
}

pub fn reward(instance: &ProblemInstance, state: &GroundState, action: GroundAction) -> f64 {
    match &instance.params {
        DomainParams::SysAdmin(p) => sysadmin::reward(p, state, action),
        DomainParams::GameOfLife(p) => gol::reward(p, state, action),
        DomainParams::AcademicAdvising(p) => acad::reward(p, instance, state, action),
    }
}

/// Only Academic Advising terminates early, once every program requirement
/// has been passed.
pub fn is_terminal(instance: &ProblemInstance, state: &GroundState) -> bool {
    match instance.domain {
        DomainId::AcademicAdvising => acad::requirements_met(instance, state),
        _ => false,
    }
}
