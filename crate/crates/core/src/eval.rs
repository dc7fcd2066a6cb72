//! Policy evaluation, the α metric, baseline policies and learning curves.
//!
//! A policy's value on an instance is the mean discounted return of
//! independent rollouts from the initial state. Run `r` draws from stream
//! `r` of the evaluation seed, so reports are reproducible regardless of how
//! runs are scheduled across threads.

use rayon::prelude::*;
use thiserror::Error;

use crate::domains::acad;
use crate::io::Checkpoint;
use crate::mdp::{self, DomainId, GroundAction, GroundState, MdpError, PolicyDistribution, ProblemInstance};
use crate::model::{ModelError, Prepared, TransferNet};
use crate::rng::RngStream;

/// Rollouts per value estimate.
pub const DEFAULT_RUNS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("degenerate alpha range: v_sup {v_sup} <= v_inf {v_inf}")]
    DegenerateRange { v_sup: f64, v_inf: f64 },
    #[error("runs must be at least 1")]
    NoRuns,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("baseline {policy} does not apply to {domain}")]
    BaselineDomain { policy: String, domain: DomainId },
}

/// A stationary policy over the legal actions of an instance.
pub trait Policy: Sync {
    fn id(&self) -> String;
    fn distribution(&self, prep: &Prepared<'_>, state: &GroundState) -> Result<PolicyDistribution, EvalError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Argmax of the policy network, lowest action index on ties.
    Greedy,
    /// Samples from the policy network.
    Sampled,
}

impl ActionMode {
    pub fn name(self) -> &'static str {
        match self {
            ActionMode::Greedy => "greedy",
            ActionMode::Sampled => "sampled",
        }
    }
}

/// Policy network wrapped as an evaluable [`Policy`]. Owns a copy of the
/// parameters, so evaluation never touches a live model.
#[derive(Debug, Clone)]
pub struct ModelPolicy {
    pub net: TransferNet,
    pub mode: ActionMode,
    pub label: String,
}

impl ModelPolicy {
    pub fn new(net: TransferNet, mode: ActionMode) -> Self {
        Self {
            net,
            mode,
            label: mode.name().to_string(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, mode: ActionMode) -> Self {
        Self::new(ckpt.net(), mode)
    }
}

impl Policy for ModelPolicy {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn distribution(&self, prep: &Prepared<'_>, state: &GroundState) -> Result<PolicyDistribution, EvalError> {
        let dist = self.net.policy_forward(prep, state)?;
        Ok(match self.mode {
            ActionMode::Greedy => PolicyDistribution::one_hot(dist.len(), dist.greedy_index()),
            ActionMode::Sampled => dist,
        })
    }
}

/// Hand-written reference policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselinePolicy {
    UniformRandom,
    NoopOnly,
    /// Reboot the down computer with the most running neighbors.
    SysAdminGreedy,
    /// Set the dead cell with the most live neighbors.
    GoLGreedy,
    /// Take the unpassed required course with the most passed
    /// prerequisites. All courses cost the same, so this is also the
    /// cheapest choice.
    AcadGreedy,
}

impl BaselinePolicy {
    pub const ALL: [BaselinePolicy; 5] = [
        BaselinePolicy::UniformRandom,
        BaselinePolicy::NoopOnly,
        BaselinePolicy::SysAdminGreedy,
        BaselinePolicy::GoLGreedy,
        BaselinePolicy::AcadGreedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselinePolicy::UniformRandom => "random",
            BaselinePolicy::NoopOnly => "noop",
            BaselinePolicy::SysAdminGreedy => "sysadmin_greedy",
            BaselinePolicy::GoLGreedy => "gol_greedy",
            BaselinePolicy::AcadGreedy => "acad_greedy",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    /// Domain-specific greedy baseline.
    pub fn greedy_for(domain: DomainId) -> Self {
        match domain {
            DomainId::SysAdmin => BaselinePolicy::SysAdminGreedy,
            DomainId::GameOfLife => BaselinePolicy::GoLGreedy,
            DomainId::AcademicAdvising => BaselinePolicy::AcadGreedy,
        }
    }

    pub fn applies_to(self, domain: DomainId) -> bool {
        match self {
            BaselinePolicy::UniformRandom | BaselinePolicy::NoopOnly => true,
            other => other == Self::greedy_for(domain),
        }
    }

    /// The chosen action; `None` for the random policy.
    pub fn action(self, instance: &ProblemInstance, state: &GroundState) -> Option<GroundAction> {
        let n = instance.object_count();
        let adj = &instance.binary_nonfluent;
        let best = |candidates: &mut dyn Iterator<Item = (usize, usize)>| {
            // highest score, lowest index on ties
            candidates
                .fold(None, |best: Option<(usize, usize)>, (i, s)| match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((i, s)),
                })
                .map_or(GroundAction::Noop, |(i, _)| GroundAction::apply(0, i))
        };
        match self {
            BaselinePolicy::UniformRandom => None,
            BaselinePolicy::NoopOnly => Some(GroundAction::Noop),
            BaselinePolicy::SysAdminGreedy | BaselinePolicy::GoLGreedy => Some(best(
                &mut (0..n)
                    .filter(|&i| !state.flag(i))
                    .map(|i| (i, adj.out_neighbors(i).filter(|&j| state.flag(j)).count())),
            )),
            BaselinePolicy::AcadGreedy => Some(best(
                &mut (0..n)
                    .filter(|&i| acad::is_required(instance, i) && !state.flag(i))
                    .map(|i| (i, acad::prereq_progress(instance, state, i).0)),
            )),
        }
    }
}

impl Policy for BaselinePolicy {
    fn id(&self) -> String {
        self.name().to_string()
    }

    fn distribution(&self, prep: &Prepared<'_>, state: &GroundState) -> Result<PolicyDistribution, EvalError> {
        let inst = prep.instance;
        if !self.applies_to(inst.domain) {
            return Err(EvalError::BaselineDomain {
                policy: self.name().into(),
                domain: inst.domain,
            });
        }
        Ok(match self.action(inst, state) {
            None => PolicyDistribution::uniform(inst.action_count()),
            Some(a) => PolicyDistribution::one_hot(inst.action_count(), inst.action_index(a)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub instance: String,
    pub policy_id: String,
    pub runs: usize,
    pub mean: f64,
    pub stderr: f64,
    pub horizon: usize,
}

/// Mean and standard error of the mean; the error is 0 for a single value.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Discounted returns of `runs` independent rollouts, in run order.
pub fn rollout_returns<P: Policy + ?Sized>(
    instance: &ProblemInstance,
    policy: &P,
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>, EvalError> {
    if runs == 0 {
        return Err(EvalError::NoRuns);
    }
    let prep = Prepared::new(instance);
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::derive(seed, r as u64);
            let mut err = None;
            let traj = mdp::rollout(
                instance,
                |s| match policy.distribution(&prep, s) {
                    Ok(d) => d,
                    Err(e) => {
                        err.get_or_insert(e);
                        PolicyDistribution::uniform(instance.action_count())
                    }
                },
                &mut rng,
            )?;
            match err {
                Some(e) => Err(e),
                None => Ok(mdp::discounted_return(&traj, instance.discount)),
            }
        })
        .collect()
}

pub fn estimate_value<P: Policy + ?Sized>(
    instance: &ProblemInstance,
    policy: &P,
    runs: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let returns = rollout_returns(instance, policy, runs, seed)?;
    let (mean, stderr) = mean_and_stderr(&returns);
    Ok(EvalReport {
        instance: instance.name.clone(),
        policy_id: policy.id(),
        runs,
        mean,
        stderr,
        horizon: instance.horizon,
    })
}

/// `(v - v_inf) / (v_sup - v_inf)` without clamping.
pub fn alpha_unclamped(v: f64, v_sup: f64, v_inf: f64) -> Result<f64, EvalError> {
    if !(v_sup > v_inf) {
        return Err(EvalError::DegenerateRange { v_sup, v_inf });
    }
    Ok((v - v_inf) / (v_sup - v_inf))
}

/// Fraction of the `[v_inf, v_sup]` range achieved by `v`, clamped to
/// `[0, 1]` for values outside the range.
pub fn alpha(v: f64, v_sup: f64, v_inf: f64) -> Result<f64, EvalError> {
    Ok(alpha_unclamped(v, v_sup, v_inf)?.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub step: u64,
    pub value: f64,
    pub alpha: f64,
    pub stderr: f64,
    pub policy_id: String,
}

/// Learning curve on one instance with the anchors it was scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub baselines: Vec<EvalReport>,
    /// Highest value among all evaluated checkpoints and baselines.
    pub v_sup: f64,
    /// Lowest value among all evaluated checkpoints and baselines.
    pub v_inf: f64,
}

/// Evaluates the greedy and sampled policy of every checkpoint and each
/// baseline, then scores every checkpoint evaluation against the best and
/// worst values seen.
pub fn learning_curve(
    checkpoints: &[Checkpoint],
    instance: &ProblemInstance,
    runs: usize,
    seed: u64,
    baselines: &[BaselinePolicy],
) -> Result<Curve, EvalError> {
    let mut evals = Vec::with_capacity(2 * checkpoints.len());
    for ckpt in checkpoints {
        ckpt.config.validate_instance(instance)?;
        for mode in [ActionMode::Greedy, ActionMode::Sampled] {
            let report = estimate_value(instance, &ModelPolicy::from_checkpoint(ckpt, mode), runs, seed)?;
            evals.push((ckpt.meta.elapsed_seconds, ckpt.meta.gradient_steps, report));
        }
    }
    let baselines = baselines
        .iter()
        .map(|b| estimate_value(instance, b, runs, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let all = evals.iter().map(|e| e.2.mean).chain(baselines.iter().map(|b| b.mean));
    let (v_inf, v_sup) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let mut points = Vec::with_capacity(evals.len());
    for (t, step, r) in evals {
        points.push(CurvePoint {
            t,
            step,
            value: r.mean,
            alpha: alpha(r.mean, v_sup, v_inf)?,
            stderr: r.stderr,
            policy_id: r.policy_id,
        });
    }
    Ok(Curve {
        points,
        baselines,
        v_sup,
        v_inf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{generate_instance, GeneratorConfig, Topology};
    use crate::mdp::Matrix;

    fn gol(rows: usize, cols: usize) -> ProblemInstance {
        generate_instance(&GeneratorConfig {
            domain: DomainId::GameOfLife,
            size: rows * cols,
            topology: Topology::Grid { rows, cols },
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn alpha_endpoints_and_midpoint() {
        assert_eq!(alpha(6.0, 6.0, 2.0).unwrap(), 1.0);
        assert_eq!(alpha(2.0, 6.0, 2.0).unwrap(), 0.0);
        assert_eq!(alpha(4.0, 6.0, 2.0).unwrap(), 0.5);
        assert_eq!(alpha(9.0, 6.0, 2.0).unwrap(), 1.0);
        assert!(matches!(alpha(1.0, 2.0, 2.0), Err(EvalError::DegenerateRange { .. })));
    }

    #[test]
    fn noop_on_empty_board_is_zero() {
        let mut inst = gol(3, 3);
        inst.initial_fluents = Matrix::zeros(9, 1);
        if let crate::domains::DomainParams::GameOfLife(p) = &mut inst.params {
            p.noise_prob = 0.0;
        }
        let r = estimate_value(&inst, &BaselinePolicy::NoopOnly, 10, 0).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn single_run_is_single_rollout() {
        let inst = gol(2, 3);
        let r = estimate_value(&inst, &BaselinePolicy::UniformRandom, 1, 4).unwrap();
        let prep = Prepared::new(&inst);
        let mut rng = RngStream::derive(4, 0);
        let t = mdp::rollout(
            &inst,
            |s| BaselinePolicy::UniformRandom.distribution(&prep, s).unwrap(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.mean, mdp::discounted_return(&t, inst.discount));
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn greedy_baselines_return_legal_actions() {
        let inst = gol(3, 3);
        let mut rng = RngStream::new(1);
        for _ in 0..50 {
            let flags: Vec<bool> = (0..9).map(|_| rng.bernoulli(0.5)).collect();
            let s = GroundState::from_flags(&flags);
            let a = BaselinePolicy::GoLGreedy.action(&inst, &s).unwrap();
            inst.check_action(a).unwrap();
            if let GroundAction::Apply { object, .. } = a {
                assert!(!s.flag(object));
            } else {
                assert!(flags.iter().all(|&f| f));
            }
        }
    }

    #[test]
    fn wrong_domain_baseline_is_an_error() {
        let inst = gol(2, 2);
        assert!(matches!(
            estimate_value(&inst, &BaselinePolicy::AcadGreedy, 1, 0),
            Err(EvalError::BaselineDomain { .. })
        ));
    }

    #[test]
    fn curve_scores_best_baseline_as_one() {
        let inst = gol(2, 2);
        let config = crate::model::EncoderConfig::for_domain(DomainId::GameOfLife);
        let ckpt = Checkpoint {
            config,
            params: crate::model::init_params(&config, 0),
            meta: crate::io::TrainingMeta {
                elapsed_seconds: 0.0,
                gradient_steps: 0,
                seed: 0,
            },
        };
        let c = learning_curve(&[ckpt], &inst, 20, 1, &[BaselinePolicy::UniformRandom, BaselinePolicy::GoLGreedy])
            .unwrap();
        assert_eq!(c.points.len(), 2);
        assert!(c.points.iter().all(|p| p.t == 0.0 && (0.0..=1.0).contains(&p.alpha)));
        let best = c.baselines.iter().map(|b| b.mean).fold(f64::NEG_INFINITY, f64::max);
        assert!(best <= c.v_sup);
    }
}
