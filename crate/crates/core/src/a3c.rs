//! Synchronous multi-problem advantage actor-critic.
//!
//! Each round, every training instance runs an n-step segment against the
//! same parameter snapshot. Per-problem gradients of the actor-critic loss
//! are summed in problem order, clipped by global norm, and applied with a
//! single RMSProp update. Segment collection may run on a thread pool; the
//! result does not depend on the thread count because every problem owns its
//! random stream and the sum is taken in a fixed order.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::io::{Checkpoint, TrainingMeta};
use crate::mdp::{self, DomainId, GroundState, MdpError, PolicyDistribution, ProblemInstance};
use crate::model::{EncoderConfig, EncoderKind, ModelError, Prepared, TransferNet};
use crate::nn::{NnError, ParamStore, RmsProp, Tape, Tensor, Var};
use crate::rng::RngStream;

/// Consecutive non-finite rounds tolerated before training aborts.
pub const MAX_NON_FINITE_ROUNDS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient at step {step} from problem {problem} (segment stream {stream})")]
    NonFiniteGradient { step: u64, problem: usize, stream: u64 },
    #[error("{0}")]
    Sink(String),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Model(ModelError::Nn(e))
    }
}

impl From<MdpError> for TrainError {
    fn from(e: MdpError) -> Self {
        TrainError::Model(ModelError::Mdp(e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub instances: Vec<ProblemInstance>,
    pub encoder: EncoderKind,
    pub shared_encoder: bool,
    pub nstep: usize,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub value_loss_weight: f64,
    pub grad_clip_norm: f64,
    pub learning_rate: f64,
    /// Seconds of training, measured from the start of this run plus any
    /// time recorded in a resumed checkpoint.
    pub wall_clock_budget: f64,
    /// Seconds between checkpoints when `checkpoint_every_steps` is unset.
    pub checkpoint_interval: f64,
    /// Step-based checkpointing; replaces the time-based schedule so that
    /// the checkpoint sequence is reproducible.
    pub checkpoint_every_steps: Option<u64>,
    pub max_steps: Option<u64>,
    pub log_every_steps: u64,
    /// Divide rewards by the object count of their instance.
    pub normalize_rewards: bool,
    pub threads: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(instances: Vec<ProblemInstance>) -> Self {
        Self {
            instances,
            encoder: EncoderKind::Gat,
            shared_encoder: false,
            nstep: 20,
            gamma: 0.99,
            entropy_weight: 0.01,
            value_loss_weight: 0.5,
            grad_clip_norm: 40.0,
            learning_rate: 1e-3,
            wall_clock_budget: 600.0,
            checkpoint_interval: 60.0,
            checkpoint_every_steps: None,
            max_steps: None,
            log_every_steps: 100,
            normalize_rewards: false,
            threads: 1,
            seed: 0,
        }
    }

    pub fn domain(&self) -> Option<DomainId> {
        self.instances.first().map(|i| i.domain)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let Some(domain) = self.domain() else {
            return bad("at least one training instance is required".into());
        };
        if let Some(i) = self.instances.iter().find(|i| i.domain != domain) {
            return bad(format!("instance `{}` is {}, expected {}", i.name, i.domain, domain));
        }
        if self.nstep == 0 {
            return bad("nstep must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.wall_clock_budget >= 0.0 && self.wall_clock_budget.is_finite()) {
            return bad(format!("wall_clock_budget {} is not a finite non-negative time", self.wall_clock_budget));
        }
        if !(self.checkpoint_interval > 0.0) {
            return bad(format!("checkpoint_interval {} must be positive", self.checkpoint_interval));
        }
        if self.checkpoint_every_steps == Some(0) || self.log_every_steps == 0 {
            return bad("step intervals must be positive".into());
        }
        if !(self.grad_clip_norm > 0.0 && self.learning_rate > 0.0) {
            return bad("grad_clip_norm and learning_rate must be positive".into());
        }
        if self.entropy_weight < 0.0 || self.value_loss_weight < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> Option<EncoderConfig> {
        let mut c = EncoderConfig::for_domain(self.domain()?);
        c.encoder = self.encoder;
        c.shared_encoder = self.shared_encoder;
        Some(c)
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            entropy_weight: self.entropy_weight,
            value_loss_weight: self.value_loss_weight,
        }
    }
}

/// Coefficients of the actor-critic loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub entropy_weight: f64,
    pub value_loss_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            entropy_weight: 0.01,
            value_loss_weight: 0.5,
        }
    }
}

/// An n-step slice of one problem's experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub problem: usize,
    pub states: Vec<GroundState>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    /// `V` of the state after the last step, 0 when the episode ended.
    pub bootstrap: f64,
    pub episode_end: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// `R_t = r_t + gamma R_{t+1}` from the bootstrap, `A_t = R_t - V(s_t)`.
pub fn compute_advantages(segment: &Segment, gamma: f64) -> AdvantageBatch {
    let n = segment.len();
    let mut returns = vec![0.0; n];
    let mut r = segment.bootstrap;
    for t in (0..n).rev() {
        r = segment.rewards[t] + gamma * r;
        returns[t] = r;
    }
    let advantages = returns.iter().zip(&segment.values).map(|(r, v)| r - v).collect();
    AdvantageBatch { returns, advantages }
}

/// Episode state of one training problem, carried across segments.
#[derive(Debug, Clone)]
pub struct Worker {
    pub problem: usize,
    state: GroundState,
    t: usize,
    rng: RngStream,
    stream: u64,
    episode_return: f64,
    discount_weight: f64,
    finished: Vec<f64>,
}

impl Worker {
    pub fn new(instance: &ProblemInstance, problem: usize, seed: u64, stream: u64) -> Self {
        Self {
            problem,
            state: instance.initial_state(),
            t: 0,
            rng: RngStream::derive(seed, stream),
            stream,
            episode_return: 0.0,
            discount_weight: 1.0,
            finished: Vec::new(),
        }
    }

    pub fn state(&self) -> &GroundState {
        &self.state
    }

    /// Returns of episodes completed since the last call, discounted with
    /// the instance discount and before reward normalization.
    pub fn take_finished(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.finished)
    }

    fn reset(&mut self, instance: &ProblemInstance) {
        self.state = instance.initial_state();
        self.t = 0;
        self.episode_return = 0.0;
        self.discount_weight = 1.0;
    }
}

/// Forward vars recorded while a segment was collected.
struct SegmentVars {
    log_probs: Vec<Var>,
    values: Vec<Var>,
}

fn rollout_segment(
    net: &TransferNet,
    prep: &Prepared<'_>,
    worker: &mut Worker,
    nstep: usize,
    normalize: bool,
    tape: &mut Tape,
) -> Result<(Segment, SegmentVars), TrainError> {
    let instance = prep.instance;
    let scale = if normalize { 1.0 / instance.object_count() as f64 } else { 1.0 };
    if worker.t >= instance.horizon || mdp::is_terminal(instance, &worker.state) {
        worker.reset(instance);
    }
    let mut seg = Segment {
        problem: worker.problem,
        states: Vec::with_capacity(nstep),
        actions: Vec::with_capacity(nstep),
        rewards: Vec::with_capacity(nstep),
        values: Vec::with_capacity(nstep),
        log_probs: Vec::with_capacity(nstep),
        entropies: Vec::with_capacity(nstep),
        bootstrap: 0.0,
        episode_end: false,
    };
    let mut vars = SegmentVars {
        log_probs: Vec::with_capacity(nstep),
        values: Vec::with_capacity(nstep),
    };
    for _ in 0..nstep {
        let scores = net.policy_scores(tape, prep, &worker.state)?;
        let dist = PolicyDistribution::from_scores(tape.value(scores).data());
        let lp = tape.log_softmax_row(scores)?;
        let v = net.value_var(tape, prep, &worker.state)?;
        let a = dist.sample_index(&mut worker.rng);
        let (next, reward) = mdp::step(instance, &worker.state, instance.action_at(a), &mut worker.rng)?;

        seg.values.push(tape.value(v).item());
        seg.log_probs.push(dist.log_probs()[a]);
        seg.entropies.push(dist.entropy());
        seg.actions.push(a);
        seg.rewards.push(reward * scale);
        seg.states.push(std::mem::replace(&mut worker.state, next));
        vars.log_probs.push(lp);
        vars.values.push(v);

        worker.episode_return += worker.discount_weight * reward;
        worker.discount_weight *= instance.discount;
        worker.t += 1;
        if worker.t >= instance.horizon || mdp::is_terminal(instance, &worker.state) {
            worker.finished.push(worker.episode_return);
            seg.episode_end = true;
            break;
        }
    }
    if !seg.episode_end {
        seg.bootstrap = net.value_forward(prep, &worker.state)?;
    }
    Ok((seg, vars))
}

/// Runs up to `nstep` steps of the sampled policy, continuing the worker's
/// episode. The segment stops early when the episode ends; the next call
/// starts a fresh episode.
pub fn collect_segment(
    net: &TransferNet,
    prep: &Prepared<'_>,
    worker: &mut Worker,
    nstep: usize,
    normalize_rewards: bool,
) -> Result<Segment, TrainError> {
    let mut tape = Tape::new();
    Ok(rollout_segment(net, prep, worker, nstep, normalize_rewards, &mut tape)?.0)
}

/// Summed loss terms of one or more segments, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// `-sum log pi(a_t|s_t) A_t`
    pub policy: f64,
    /// `sum (R_t - V(s_t))^2`
    pub value: f64,
    /// `sum H(pi(.|s_t))`
    pub entropy: f64,
    pub total: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.total += o.total;
    }
}

fn loss_on_tape(
    tape: &mut Tape,
    vars: &SegmentVars,
    segment: &Segment,
    weights: &LossWeights,
) -> Result<(Var, LossParts), TrainError> {
    let adv = compute_advantages(segment, weights.gamma);
    let mut parts = LossParts::default();
    let mut terms = Vec::with_capacity(3 * segment.len());
    for t in 0..segment.len() {
        let lp = vars.log_probs[t];
        let chosen = tape.pick(lp, segment.actions[t])?;
        terms.push(tape.scale(chosen, -adv.advantages[t]));
        parts.policy -= tape.value(chosen).item() * adv.advantages[t];

        let ret = tape.constant(Tensor::scalar(adv.returns[t]));
        let err = tape.sub(ret, vars.values[t])?;
        let sq = tape.mul(err, err)?;
        parts.value += tape.value(sq).item();
        terms.push(tape.scale(sq, weights.value_loss_weight));

        let probs = tape.exp(lp);
        let plogp = tape.mul(probs, lp)?;
        let neg_h = tape.sum_all(plogp);
        parts.entropy -= tape.value(neg_h).item();
        terms.push(tape.scale(neg_h, weights.entropy_weight));
    }
    let mut total = match terms.first() {
        Some(&v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    for &v in terms.iter().skip(1) {
        total = tape.add(total, v)?;
    }
    parts.total = tape.value(total).item();
    Ok((total, parts))
}

/// Builds the actor-critic loss of a recorded segment on a fresh tape,
/// recomputing the forward passes from the segment states. The advantages
/// come from the recorded values and are constants of the loss.
pub fn segment_loss(
    net: &TransferNet,
    prep: &Prepared<'_>,
    segment: &Segment,
    weights: &LossWeights,
) -> Result<(Tape, Var, LossParts), TrainError> {
    let mut tape = Tape::new();
    let mut vars = SegmentVars {
        log_probs: Vec::with_capacity(segment.len()),
        values: Vec::with_capacity(segment.len()),
    };
    for s in &segment.states {
        vars.log_probs.push(net.policy_log_probs(&mut tape, prep, s)?);
        vars.values.push(net.value_var(&mut tape, prep, s)?);
    }
    let (loss, parts) = loss_on_tape(&mut tape, &vars, segment, weights)?;
    Ok((tape, loss, parts))
}

/// Parameter gradient of [`segment_loss`].
pub fn segment_gradient(
    net: &TransferNet,
    prep: &Prepared<'_>,
    segment: &Segment,
    weights: &LossWeights,
) -> Result<(ParamStore, LossParts), TrainError> {
    let (tape, loss, parts) = segment_loss(net, prep, segment, weights)?;
    let grads = tape.backward(loss)?;
    Ok((tape.param_grads(&grads, &net.params), parts))
}

/// Collects a segment and differentiates its loss on the same tape.
pub fn collect_and_differentiate(
    net: &TransferNet,
    prep: &Prepared<'_>,
    worker: &mut Worker,
    nstep: usize,
    normalize_rewards: bool,
    weights: &LossWeights,
) -> Result<(Segment, ParamStore, LossParts), TrainError> {
    let mut tape = Tape::new();
    let (segment, vars) = rollout_segment(net, prep, worker, nstep, normalize_rewards, &mut tape)?;
    let (loss, parts) = loss_on_tape(&mut tape, &vars, &segment, weights)?;
    let grads = tape.backward(loss)?;
    Ok((segment, tape.param_grads(&grads, &net.params), parts))
}

/// Sum of per-problem gradients in the given order.
pub fn accumulate(grads: &[ParamStore]) -> Option<ParamStore> {
    let mut it = grads.iter();
    let mut total = it.next()?.clone();
    for g in it {
        total.add_assign(g);
    }
    Some(total)
}

/// Scales `grads` in place so its global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Sums the per-problem gradients, clips, and applies one optimizer update.
/// On a non-finite gradient nothing is modified and the index of the first
/// offending problem is returned as the error.
pub fn accumulate_and_apply(
    grads: &[ParamStore],
    params: &mut ParamStore,
    opt: &mut RmsProp,
    grad_clip_norm: f64,
) -> Result<f64, usize> {
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(bad);
    }
    let Some(mut total) = accumulate(grads) else {
        return Ok(0.0);
    };
    if !total.is_finite() {
        return Err(0);
    }
    let norm = clip_global_norm(&mut total, grad_clip_norm);
    opt.update(params, &total);
    Ok(norm)
}

/// Checks that `ckpt` can drive `target` and returns the ready network.
pub fn transfer_init(ckpt: &Checkpoint, target: &ProblemInstance) -> Result<TransferNet, ModelError> {
    ckpt.config.validate_instance(target)?;
    Ok(ckpt.net())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub step: u64,
    pub loss: LossParts,
    pub grad_norm: f64,
    /// Completed episode returns per problem during this round.
    pub episode_returns: Vec<Vec<f64>>,
    pub skipped: bool,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub wall_seconds: f64,
    pub step: u64,
    /// Mean return of episodes finished since the previous row, per problem.
    pub mean_returns: Vec<Option<f64>>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    config: TrainConfig,
    net: TransferNet,
    opt: RmsProp,
    workers: Vec<Worker>,
    steps: u64,
    elapsed_offset: f64,
    failures: u32,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// Fresh parameters from `config.seed`, or the parameters and counters
    /// of `resume`. The optimizer state always starts empty.
    pub fn new(config: TrainConfig, resume: Option<&Checkpoint>) -> Result<Self, TrainError> {
        config.validate()?;
        let enc = config.encoder_config().expect("validated");
        let (net, steps, elapsed_offset) = match resume {
            Some(c) => {
                if c.config.domain != enc.domain {
                    return Err(ModelError::DomainMismatch {
                        expected: c.config.domain,
                        found: enc.domain,
                    }
                    .into());
                }
                (c.net(), c.meta.gradient_steps, c.meta.elapsed_seconds)
            }
            None => (TransferNet::new(enc, config.seed), 0, 0.0),
        };
        for inst in &config.instances {
            net.config.validate_instance(inst)?;
        }
        // resumed runs must not replay the random streams of the first run
        let stream_seed = config.seed ^ steps.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let workers = config
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| Worker::new(inst, i, stream_seed, i as u64))
            .collect();
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| TrainError::InvalidConfig(e.to_string()))?,
            )
        } else {
            None
        };
        let opt = RmsProp::with_hyper(&net.params, config.learning_rate, 0.99, 1e-8);
        Ok(Self {
            config,
            net,
            opt,
            workers,
            steps,
            elapsed_offset,
            failures: 0,
            pool,
        })
    }

    pub fn net(&self) -> &TransferNet {
        &self.net
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn elapsed_offset(&self) -> f64 {
        self.elapsed_offset
    }

    pub fn checkpoint(&self, elapsed_seconds: f64) -> Checkpoint {
        Checkpoint {
            config: self.net.config,
            params: self.net.params.clone(),
            meta: TrainingMeta {
                elapsed_seconds,
                gradient_steps: self.steps,
                seed: self.config.seed,
            },
        }
    }

    /// One accumulation round: a segment per problem, one update.
    pub fn round(&mut self) -> Result<RoundStats, TrainError> {
        let net = &self.net;
        let cfg = &self.config;
        let weights = cfg.weights();
        let work = |w: &mut Worker| {
            let prep = Prepared::new(&cfg.instances[w.problem]);
            collect_and_differentiate(net, &prep, w, cfg.nstep, cfg.normalize_rewards, &weights)
        };
        let results: Vec<_> = match &self.pool {
            Some(pool) => pool.install(|| self.workers.par_iter_mut().map(work).collect()),
            None => self.workers.iter_mut().map(work).collect(),
        };
        let mut grads = Vec::with_capacity(results.len());
        let mut loss = LossParts::default();
        for r in results {
            let (_, g, parts) = r?;
            loss.add(&parts);
            grads.push(g);
        }
        let episode_returns = self.workers.iter_mut().map(Worker::take_finished).collect();
        match accumulate_and_apply(&grads, &mut self.net.params, &mut self.opt, cfg.grad_clip_norm) {
            Ok(grad_norm) => {
                self.failures = 0;
                self.steps += 1;
                Ok(RoundStats {
                    step: self.steps,
                    loss,
                    grad_norm,
                    episode_returns,
                    skipped: false,
                })
            }
            Err(problem) => {
                self.failures += 1;
                let stream = self.workers[problem].stream;
                if self.failures >= MAX_NON_FINITE_ROUNDS {
                    return Err(TrainError::NonFiniteGradient {
                        step: self.steps,
                        problem,
                        stream,
                    });
                }
                Ok(RoundStats {
                    step: self.steps,
                    loss,
                    grad_norm: f64::NAN,
                    episode_returns,
                    skipped: true,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub elapsed_seconds: f64,
    pub checkpoints: usize,
}

/// Trains until the wall-clock budget or `max_steps` is exhausted.
///
/// `on_checkpoint` receives the starting parameters first, then periodic
/// checkpoints, then the final parameters if they were not just emitted;
/// step counts are strictly increasing. `on_log` receives a row every
/// `log_every_steps` steps and at every checkpoint.
pub fn train<C, L>(
    config: TrainConfig,
    resume: Option<&Checkpoint>,
    mut on_checkpoint: C,
    mut on_log: L,
) -> Result<TrainSummary, TrainError>
where
    C: FnMut(&Checkpoint) -> Result<(), String>,
    L: FnMut(&LogRow) -> Result<(), String>,
{
    let mut trainer = Trainer::new(config, resume)?;
    let start = Instant::now();
    let offset = trainer.elapsed_offset;
    let elapsed = |start: &Instant| offset + start.elapsed().as_secs_f64();
    let cfg = trainer.config.clone();
    let n = cfg.instances.len();

    let mut emitted = 0usize;
    let mut last_ckpt_step = trainer.steps;
    let mut emit = |t: &Trainer, secs: f64, emitted: &mut usize| -> Result<(), TrainError> {
        *emitted += 1;
        on_checkpoint(&t.checkpoint(secs)).map_err(TrainError::Sink)
    };
    emit(&trainer, offset, &mut emitted)?;
    let mut next_time = offset + cfg.checkpoint_interval;

    let mut acc_returns: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut acc_loss = LossParts::default();
    let mut acc_norm = 0.0;
    let mut acc_rounds = 0u64;
    let mut flush = |step: u64,
                     secs: f64,
                     acc_returns: &mut Vec<Vec<f64>>,
                     acc_loss: &mut LossParts,
                     acc_norm: &mut f64,
                     acc_rounds: &mut u64|
     -> Result<(), TrainError> {
        if *acc_rounds == 0 {
            return Ok(());
        }
        let k = *acc_rounds as f64;
        let row = LogRow {
            wall_seconds: secs,
            step,
            mean_returns: acc_returns
                .iter()
                .map(|r| (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64))
                .collect(),
            policy_loss: acc_loss.policy / k,
            value_loss: acc_loss.value / k,
            entropy: acc_loss.entropy / k,
            grad_norm: *acc_norm / k,
        };
        acc_returns.iter_mut().for_each(Vec::clear);
        *acc_loss = LossParts::default();
        *acc_norm = 0.0;
        *acc_rounds = 0;
        on_log(&row).map_err(TrainError::Sink)
    };

    loop {
        let now = elapsed(&start);
        let out_of_time = now >= cfg.wall_clock_budget;
        let out_of_steps = cfg.max_steps.is_some_and(|m| trainer.steps >= m);
        if out_of_time || out_of_steps {
            break;
        }
        let stats = trainer.round()?;
        if !stats.skipped {
            acc_loss.add(&stats.loss);
            acc_norm += stats.grad_norm;
            acc_rounds += 1;
        }
        for (acc, r) in acc_returns.iter_mut().zip(stats.episode_returns) {
            acc.extend(r);
        }
        let step = trainer.steps;
        let now = elapsed(&start);
        let due = match cfg.checkpoint_every_steps {
            Some(k) => !stats.skipped && step % k == 0,
            None => now >= next_time,
        };
        if due || (!stats.skipped && step % cfg.log_every_steps == 0) {
            flush(step, now, &mut acc_returns, &mut acc_loss, &mut acc_norm, &mut acc_rounds)?;
        }
        if due && step != last_ckpt_step {
            emit(&trainer, now, &mut emitted)?;
            last_ckpt_step = step;
            while next_time <= now {
                next_time += cfg.checkpoint_interval;
            }
        }
    }
    let end = elapsed(&start);
    flush(trainer.steps, end, &mut acc_returns, &mut acc_loss, &mut acc_norm, &mut acc_rounds)?;
    if trainer.steps != last_ckpt_step {
        emit(&trainer, end, &mut emitted)?;
    }
    Ok(TrainSummary {
        steps: trainer.steps,
        elapsed_seconds: end,
        checkpoints: emitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{generate_instance, GeneratorConfig, Topology};

    fn sysadmin(n: usize, seed: u64) -> ProblemInstance {
        generate_instance(&GeneratorConfig {
            domain: DomainId::SysAdmin,
            size: n,
            topology: Topology::RandomGraph { edge_prob: 0.5 },
            seed,
        })
        .unwrap()
    }

    fn segment(rewards: Vec<f64>, values: Vec<f64>, bootstrap: f64) -> Segment {
        let n = rewards.len();
        Segment {
            problem: 0,
            states: vec![GroundState::from_flags(&[true]); n],
            actions: vec![0; n],
            rewards,
            values,
            log_probs: vec![0.0; n],
            entropies: vec![0.0; n],
            bootstrap,
            episode_end: bootstrap == 0.0,
        }
    }

    #[test]
    fn single_step_advantage() {
        let a = compute_advantages(&segment(vec![1.0], vec![0.4], 0.0), 1.0);
        assert!((a.advantages[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_gamma_gives_one_step_advantage() {
        let a = compute_advantages(&segment(vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5], 7.0), 0.0);
        assert_eq!(a.advantages, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn returns_discount_from_bootstrap() {
        let a = compute_advantages(&segment(vec![1.0, 1.0], vec![0.0, 0.0], 10.0), 0.5);
        assert_eq!(a.returns, vec![1.0 + 0.5 * (1.0 + 0.5 * 10.0), 1.0 + 0.5 * 10.0]);
    }

    #[test]
    fn segment_stops_at_horizon_and_restarts() {
        let mut inst = sysadmin(3, 1);
        inst.horizon = 3;
        let net = TransferNet::new(EncoderConfig::for_domain(DomainId::SysAdmin), 0);
        let prep = Prepared::new(&inst);
        let mut w = Worker::new(&inst, 0, 5, 0);
        let s1 = collect_segment(&net, &prep, &mut w, 2, false).unwrap();
        assert_eq!(s1.len(), 2);
        assert!(!s1.episode_end);
        let s2 = collect_segment(&net, &prep, &mut w, 2, false).unwrap();
        assert_eq!(s2.len(), 1);
        assert!(s2.episode_end);
        assert_eq!(s2.bootstrap, 0.0);
        assert_eq!(w.take_finished().len(), 1);
        let s3 = collect_segment(&net, &prep, &mut w, 1, false).unwrap();
        assert_eq!(s3.states[0], inst.initial_state());
    }

    #[test]
    fn fused_gradient_matches_recomputed() {
        let inst = sysadmin(4, 2);
        let net = TransferNet::new(EncoderConfig::for_domain(DomainId::SysAdmin), 3);
        let prep = Prepared::new(&inst);
        let w = LossWeights::default();
        let mut a = Worker::new(&inst, 0, 9, 0);
        let (seg, g1, p1) = collect_and_differentiate(&net, &prep, &mut a, 5, false, &w).unwrap();
        let (g2, p2) = segment_gradient(&net, &prep, &seg, &w).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn zero_budget_emits_one_checkpoint() {
        let mut cfg = TrainConfig::new(vec![sysadmin(3, 0)]);
        cfg.wall_clock_budget = 0.0;
        let mut seen = Vec::new();
        let s = train(cfg, None, |c| Ok(seen.push(c.meta.gradient_steps)), |_| Ok(())).unwrap();
        assert_eq!(seen, vec![0]);
        assert_eq!(s.checkpoints, 1);
    }

    #[test]
    fn step_checkpoints_increase_and_thread_count_is_irrelevant() {
        let run = |threads| {
            let mut cfg = TrainConfig::new(vec![sysadmin(3, 0), sysadmin(4, 1)]);
            cfg.max_steps = Some(6);
            cfg.checkpoint_every_steps = Some(2);
            cfg.nstep = 4;
            cfg.threads = threads;
            let mut out = Vec::new();
            train(cfg, None, |c| Ok(out.push(c.clone())), |_| Ok(())).unwrap();
            out
        };
        let a = run(1);
        let steps: Vec<u64> = a.iter().map(|c| c.meta.gradient_steps).collect();
        assert_eq!(steps, vec![0, 2, 4, 6]);
        let b = run(2);
        assert!(a.iter().zip(&b).all(|(x, y)| x.same_content(y)));
    }

    #[test]
    fn mixed_domains_are_rejected() {
        let gol = generate_instance(&GeneratorConfig {
            domain: DomainId::GameOfLife,
            size: 4,
            topology: Topology::Grid { rows: 2, cols: 2 },
            seed: 0,
        })
        .unwrap();
        let cfg = TrainConfig::new(vec![sysadmin(3, 0), gol]);
        assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig(_))));
    }
}
