//! Reusable finite-difference and relabeling checks.

use rddl_transfer::a3c::{collect_segment, segment_gradient, segment_loss, LossWeights, Worker};
use rddl_transfer::model::{EncoderConfig, EncoderKind, Prepared, TransferNet};
use rddl_transfer::nn::{Tape, Tensor, Var};
use rddl_transfer::{DomainId, RngStream};

use crate::{max_gradient_error, random_instance, random_state, relative_error};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error; gradients smaller than this are
/// compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-4;
/// Full-loss floor per unit of loss magnitude.
pub const LOSS_FLOOR_SCALE: f64 = 1e-6;
/// One-sided slopes further apart than this mark a non-differentiable point.
pub const KINK_TOL: f64 = 1e-3;

pub fn random_tensor(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| 2.0 * rng.uniform() - 1.0).collect())
}

/// Largest relative gradient error of `sum(R * f(inputs))` for random inputs
/// of the given shapes and a fixed random projection `R`. Every input is a
/// variable.
pub fn layer_gradient_error<F>(shapes: &[(usize, usize)], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = RngStream::new(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random_tensor(r, c, &mut rng)).collect();
    let proj_seed = seed ^ 0xABCD;
    let eval = |tensors: &[Tensor]| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let proj = random_tensor(shape[0], shape[1], &mut RngStream::new(proj_seed));
        let p = tape.constant(proj);
        let prod = tape.mul(out, p).expect("projection has the output shape");
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss).expect("scalar loss");
        let flat = vars
            .iter()
            .zip(tensors)
            .flat_map(|(v, t)| grads.get(*v).map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec()))
            .collect();
        (tape.value(loss).item(), flat)
    };
    let (_, analytic) = eval(&inputs);
    let x: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let unflatten = |flat: &[f64]| {
        let mut off = 0;
        inputs
            .iter()
            .map(|t| {
                let d = flat[off..off + t.len()].to_vec();
                off += t.len();
                Tensor::new(t.shape().to_vec(), d)
            })
            .collect::<Vec<_>>()
    };
    max_gradient_error(|p| eval(&unflatten(p)).0, &x, &analytic, FD_STEP, FD_FLOOR)
}

/// Outcome of a full-loss gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCheck {
    pub max_error: f64,
    pub probes: usize,
    /// Probes skipped because they straddle a kink.
    pub kinks: usize,
}

fn flatten(net: &TransferNet) -> Vec<f64> {
    net.params.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

fn with_flat(net: &TransferNet, flat: &[f64]) -> TransferNet {
    let mut out = net.clone();
    let mut off = 0;
    for (_, t) in out.params.iter_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    out
}

/// Checks the parameter gradient of the actor-critic loss of one sampled
/// 4-step segment on a 4-object instance at `probes` random coordinates.
pub fn loss_gradient_check(domain: DomainId, encoder: EncoderKind, shared: bool, case: u64, probes: usize) -> LossCheck {
    let inst = random_instance(domain, 4, case);
    let mut config = EncoderConfig::for_domain(domain);
    config.encoder = encoder;
    config.shared_encoder = shared;
    let net = TransferNet::new(config, case);
    let prep = Prepared::new(&inst);
    let mut worker = Worker::new(&inst, 0, case, 0);
    let segment = collect_segment(&net, &prep, &mut worker, 4, false).expect("segment");
    let weights = LossWeights::default();
    let (grads, _) = segment_gradient(&net, &prep, &segment, &weights).expect("gradient");
    let analytic: Vec<f64> = grads.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let x = flatten(&net);
    let loss = |flat: &[f64]| {
        let n = with_flat(&net, flat);
        let (tape, l, _) = segment_loss(&n, &prep, &segment, &weights).expect("loss");
        tape.value(l).item()
    };
    let base = loss(&x);
    // central differences of a loss of size |L| carry roundoff near
    // 1e-16 |L| / h, so tiny gradients are compared on that scale
    let floor = FD_FLOOR.max(LOSS_FLOOR_SCALE * base.abs());
    let mut rng = RngStream::new(case ^ 77);
    let mut out = LossCheck {
        max_error: 0.0,
        probes,
        kinks: 0,
    };
    let mut probe = x.clone();
    for _ in 0..probes {
        let i = rng.below(x.len());
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = loss(&probe);
        probe[i] = orig - FD_STEP;
        let down = loss(&probe);
        probe[i] = orig;
        if relative_error((up - base) / FD_STEP, (base - down) / FD_STEP, floor) > KINK_TOL {
            out.kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        out.max_error = out.max_error.max(relative_error(analytic[i], numeric, floor));
    }
    out
}

/// Largest deviation between outputs on an instance and on a random
/// relabeling of it: relative for the value, absolute for probabilities.
pub fn permutation_error(domain: DomainId, encoder: EncoderKind, n: usize, seed: u64) -> f64 {
    let inst = random_instance(domain, n, seed);
    let mut rng = RngStream::new(seed);
    let state = random_state(&inst, &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let inst_p = inst.permuted(&perm);
    let state_p = state.permuted(&perm);

    let mut config = EncoderConfig::for_domain(domain);
    config.encoder = encoder;
    let net = TransferNet::new(config, seed);
    let (prep, prep_p) = (Prepared::new(&inst), Prepared::new(&inst_p));

    let v = net.value_forward(&prep, &state).expect("value");
    let v_p = net.value_forward(&prep_p, &state_p).expect("value");
    let mut worst = (v - v_p).abs() / v.abs().max(1.0);

    let p = net.policy_forward(&prep, &state).expect("policy");
    let p_p = net.policy_forward(&prep_p, &state_p).expect("policy");
    let templates = inst.template_count();
    for k in 0..templates {
        for i in 0..n {
            worst = worst.max((p_p.probs()[k * n + i] - p.probs()[k * n + perm[i]]).abs());
        }
    }
    let noop = templates * n;
    worst.max((p_p.probs()[noop] - p.probs()[noop]).abs())
}
