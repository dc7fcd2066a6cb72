//! Domain-agnostic factored-MDP abstractions.
//!
//! A [`ProblemInstance`] is one ground factored MDP over a list of objects,
//! each carrying unary fluents and unary non-fluents, plus a single binary
//! non-fluent stored as an adjacency matrix. Ground actions apply one action
//! template to one object, or do nothing.

use std::fmt;

use thiserror::Error;

use crate::domains::{self, DomainParams};
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("illegal action {action}: instance has {templates} template(s) over {objects} object(s)")]
    IllegalAction {
        action: GroundAction,
        templates: usize,
        objects: usize,
    },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("state shape {rows}x{cols} does not match instance ({objects} objects, {fluents} fluents)")]
    StateShape {
        rows: usize,
        cols: usize,
        objects: usize,
        fluents: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainId {
    SysAdmin,
    GameOfLife,
    AcademicAdvising,
}

impl DomainId {
    pub const ALL: [DomainId; 3] = [
        DomainId::SysAdmin,
        DomainId::GameOfLife,
        DomainId::AcademicAdvising,
    ];

    /// Identifier used in instance files, checkpoints and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            DomainId::SysAdmin => "sysadmin",
            DomainId::GameOfLife => "game_of_life",
            DomainId::AcademicAdvising => "academic_advising",
        }
    }

    pub fn from_name(s: &str) -> Option<DomainId> {
        match s {
            "sysadmin" => Some(DomainId::SysAdmin),
            "game_of_life" | "gol" => Some(DomainId::GameOfLife),
            "academic_advising" | "acad" => Some(DomainId::AcademicAdvising),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DomainId::SysAdmin => 0,
            DomainId::GameOfLife => 1,
            DomainId::AcademicAdvising => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<DomainId> {
        DomainId::ALL.into_iter().find(|d| d.code() == c)
    }

    pub fn object_type(self) -> &'static str {
        match self {
            DomainId::SysAdmin => "computer",
            DomainId::GameOfLife => "cell",
            DomainId::AcademicAdvising => "course",
        }
    }

    pub fn action_templates(self) -> &'static [&'static str] {
        match self {
            DomainId::SysAdmin => &["reboot"],
            DomainId::GameOfLife => &["set"],
            DomainId::AcademicAdvising => &["take"],
        }
    }

    pub fn fluents(self) -> &'static [&'static str] {
        match self {
            DomainId::SysAdmin => &["running"],
            DomainId::GameOfLife => &["alive"],
            DomainId::AcademicAdvising => &["passed"],
        }
    }

    pub fn unary_nonfluents(self) -> &'static [&'static str] {
        match self {
            DomainId::SysAdmin | DomainId::GameOfLife => &[],
            DomainId::AcademicAdvising => &["program_requirement"],
        }
    }

    pub fn binary_nonfluent(self) -> &'static str {
        match self {
            DomainId::SysAdmin => "connected",
            DomainId::GameOfLife => "neighbor",
            DomainId::AcademicAdvising => "prereq",
        }
    }

    /// Whether the binary non-fluent is symmetrized (connectivity) or kept
    /// directed (prerequisite edges).
    pub fn symmetric(self) -> bool {
        !matches!(self, DomainId::AcademicAdvising)
    }

    pub fn template_count(self) -> usize {
        self.action_templates().len()
    }

    /// Node feature count: fluents followed by unary non-fluents.
    pub fn feature_count(self) -> usize {
        self.fluents().len() + self.unary_nonfluents().len()
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense row-major matrix of reals, rows indexed by object.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, c))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` of self.
    pub fn permute_rows(&self, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (i, &src) in perm.iter().enumerate() {
            out.data[i * self.cols..(i + 1) * self.cols].copy_from_slice(self.row(src));
        }
        out
    }
}

/// Square {0,1} matrix for the binary non-fluent. Entry `(i, j)` is
/// `nf(o_i, o_j)`; for directed domains that is an edge `o_i -> o_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn out_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn in_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.get(i, j))
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Relabels nodes: node `i` of the result is node `perm[i]` of self.
    pub fn permute(&self, perm: &[usize]) -> Adjacency {
        let mut out = Adjacency::empty(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(i, j, self.get(perm[i], perm[j]));
            }
        }
        out
    }
}

/// One ground factored MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub name: String,
    pub domain: DomainId,
    /// Declaration order is the canonical object order.
    pub objects: Vec<String>,
    pub unary_nonfluents: Matrix,
    pub binary_nonfluent: Adjacency,
    pub initial_fluents: Matrix,
    pub horizon: usize,
    pub discount: f64,
    pub params: DomainParams,
}

impl ProblemInstance {
    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn template_count(&self) -> usize {
        self.domain.template_count()
    }

    pub fn fluent_count(&self) -> usize {
        self.initial_fluents.cols()
    }

    pub fn initial_state(&self) -> GroundState {
        GroundState {
            fluents: self.initial_fluents.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let n = self.objects.len();
        let bad = |m: String| Err(MdpError::InvalidInstance(m));
        if n == 0 {
            return bad("instance has no objects".into());
        }
        if self.unary_nonfluents.rows() != n || self.initial_fluents.rows() != n {
            return bad("matrix row count differs from object count".into());
        }
        if self.binary_nonfluent.len() != n {
            return bad("adjacency size differs from object count".into());
        }
        if self.initial_fluents.cols() != self.domain.fluents().len()
            || self.unary_nonfluents.cols() != self.domain.unary_nonfluents().len()
        {
            return bad(format!("column counts do not match domain {}", self.domain));
        }
        if (0..n).any(|i| self.binary_nonfluent.get(i, i)) {
            return bad("adjacency has a self-loop".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad(format!("discount {} outside (0, 1]", self.discount));
        }
        if self.params.domain() != self.domain {
            return bad("parameter block belongs to another domain".into());
        }
        if self.initial_fluents.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return bad("boolean fluent outside {0, 1}".into());
        }
        Ok(())
    }

    /// Relabels objects: object `i` of the result is object `perm[i]` of self.
    pub fn permuted(&self, perm: &[usize]) -> ProblemInstance {
        ProblemInstance {
            name: self.name.clone(),
            domain: self.domain,
            objects: perm.iter().map(|&p| self.objects[p].clone()).collect(),
            unary_nonfluents: self.unary_nonfluents.permute_rows(perm),
            binary_nonfluent: self.binary_nonfluent.permute(perm),
            initial_fluents: self.initial_fluents.permute_rows(perm),
            horizon: self.horizon,
            discount: self.discount,
            params: self.params.clone(),
        }
    }

    pub fn action_count(&self) -> usize {
        self.template_count() * self.object_count() + 1
    }

    /// Position of `action` in [`legal_actions`] order.
    pub fn action_index(&self, action: GroundAction) -> Result<usize, MdpError> {
        self.check_action(action)?;
        Ok(match action {
            GroundAction::Apply { template, object } => template * self.object_count() + object,
            GroundAction::Noop => self.template_count() * self.object_count(),
        })
    }

    pub fn action_at(&self, index: usize) -> GroundAction {
        let n = self.object_count();
        if index >= self.template_count() * n {
            GroundAction::Noop
        } else {
            GroundAction::Apply {
                template: index / n,
                object: index % n,
            }
        }
    }

    pub fn check_action(&self, action: GroundAction) -> Result<(), MdpError> {
        match action {
            GroundAction::Apply { template, object }
                if template >= self.template_count() || object >= self.object_count() =>
            {
                Err(MdpError::IllegalAction {
                    action,
                    templates: self.template_count(),
                    objects: self.object_count(),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn check_state(&self, state: &GroundState) -> Result<(), MdpError> {
        let f = &state.fluents;
        if f.rows() != self.object_count() || f.cols() != self.fluent_count() {
            return Err(MdpError::StateShape {
                rows: f.rows(),
                cols: f.cols(),
                objects: self.object_count(),
                fluents: self.fluent_count(),
            });
        }
        Ok(())
    }
}

/// Per-object fluent values for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundState {
    pub fluents: Matrix,
}

impl GroundState {
    pub fn new(fluents: Matrix) -> Self {
        Self { fluents }
    }

    /// Value of the first fluent of object `i` as a boolean.
    pub fn flag(&self, i: usize) -> bool {
        self.fluents.get(i, 0) != 0.0
    }

    pub fn count_true(&self) -> usize {
        (0..self.fluents.rows()).filter(|&i| self.flag(i)).count()
    }

    pub fn permuted(&self, perm: &[usize]) -> GroundState {
        GroundState {
            fluents: self.fluents.permute_rows(perm),
        }
    }

    /// Builds a single-fluent boolean state.
    pub fn from_flags(flags: &[bool]) -> Self {
        let data = flags.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self {
            fluents: Matrix::from_vec(flags.len(), 1, data),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroundAction {
    Apply { template: usize, object: usize },
    Noop,
}

impl GroundAction {
    pub fn apply(template: usize, object: usize) -> Self {
        GroundAction::Apply { template, object }
    }

    /// Whether this applies any template to object `i`.
    pub fn targets(self, i: usize) -> bool {
        matches!(self, GroundAction::Apply { object, .. } if object == i)
    }

    pub fn is_noop(self) -> bool {
        matches!(self, GroundAction::Noop)
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundAction::Apply { template, object } => write!(f, "Apply({template},{object})"),
            GroundAction::Noop => f.write_str("Noop"),
        }
    }
}

/// Normalized probabilities over the ground actions of one instance,
/// aligned with [`legal_actions`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

/// Floor applied to probabilities before taking logarithms.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

impl PolicyDistribution {
    /// Softmax over raw scores with max-subtraction.
    pub fn from_scores(scores: &[f64]) -> Self {
        assert!(!scores.is_empty(), "empty score vector");
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        Self::from_probs(probs)
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        let log_probs = probs.iter().map(|p| p.max(LOG_PROB_FLOOR).ln()).collect();
        Self { probs, log_probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_probs(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self::from_probs(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| -p * lp)
            .sum()
    }

    /// Inverse-CDF sample over the canonical order.
    pub fn sample_index(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the final cumulative sum
        last_positive
    }

    /// Argmax, ties to the lowest index.
    pub fn greedy_index(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: GroundState,
    pub action: GroundAction,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    pub terminal_state: GroundState,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }
}

/// Every ground action: templates outermost, then objects, then one Noop.
pub fn legal_actions(instance: &ProblemInstance) -> Vec<GroundAction> {
    let mut out = Vec::with_capacity(instance.action_count());
    for template in 0..instance.template_count() {
        for object in 0..instance.object_count() {
            out.push(GroundAction::Apply { template, object });
        }
    }
    out.push(GroundAction::Noop);
    out
}

/// Samples the successor state and returns it with the reward of
/// `(state, action)`.
///
/// Objects are sampled in canonical order, one uniform draw per object and
/// fluent, so the outcome is a pure function of the inputs and the stream.
pub fn step(
    instance: &ProblemInstance,
    state: &GroundState,
    action: GroundAction,
    rng: &mut RngStream,
) -> Result<(GroundState, f64), MdpError> {
    instance.check_action(action)?;
    instance.check_state(state)?;
    let reward = domains::reward(instance, state, action);
    let n = instance.object_count();
    let mut next = Matrix::zeros(n, instance.fluent_count());
    for i in 0..n {
        let p = domains::next_prob(instance, state, action, i);
        next.set(i, 0, if rng.bernoulli(p) { 1.0 } else { 0.0 });
    }
    Ok((GroundState::new(next), reward))
}

pub fn is_terminal(instance: &ProblemInstance, state: &GroundState) -> bool {
    domains::is_terminal(instance, state)
}

/// Runs `policy` from the initial state for the instance horizon, stopping
/// early only at a domain terminal state.
pub fn rollout<F>(
    instance: &ProblemInstance,
    mut policy: F,
    rng: &mut RngStream,
) -> Result<Trajectory, MdpError>
where
    F: FnMut(&GroundState) -> PolicyDistribution,
{
    let mut state = instance.initial_state();
    let mut steps = Vec::with_capacity(instance.horizon);
    for _ in 0..instance.horizon {
        if is_terminal(instance, &state) {
            break;
        }
        let dist = policy(&state);
        let action = instance.action_at(dist.sample_index(rng));
        let (next, reward) = step(instance, &state, action, rng)?;
        steps.push(Transition {
            state: std::mem::replace(&mut state, next),
            action,
            reward,
        });
    }
    Ok(Trajectory {
        steps,
        terminal_state: state,
    })
}

pub fn discounted_return(trajectory: &Trajectory, discount: f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for r in trajectory.rewards() {
        total += weight * r;
        weight *= discount;
    }
    total
}
