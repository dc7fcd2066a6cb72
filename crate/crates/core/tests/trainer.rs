//! Multi-problem updates rebuilt by hand from the public pieces.

use rddl_transfer::a3c::{
    self, accumulate, collect_segment, segment_gradient, LossWeights, TrainConfig, Trainer, Worker,
};
use rddl_transfer::mdp;
use rddl_transfer::model::{Prepared, TransferNet};
use rddl_transfer::nn::{ParamStore, RmsProp};
use rddl_transfer::{DomainId, ProblemInstance};
use rddl_transfer_testkit::random_instance;

fn bits(p: &ParamStore) -> Vec<u64> {
    p.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

fn problems() -> Vec<ProblemInstance> {
    vec![
        random_instance(DomainId::SysAdmin, 4, 1),
        random_instance(DomainId::SysAdmin, 6, 2),
        random_instance(DomainId::SysAdmin, 5, 3),
    ]
}

#[test]
fn accumulated_gradient_is_sum_of_independent_gradients() {
    let insts = problems();
    let net = TransferNet::new(a3c::TrainConfig::new(insts.clone()).encoder_config().unwrap(), 4);
    let weights = LossWeights::default();
    let grads: Vec<ParamStore> = insts
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let prep = Prepared::new(inst);
            let mut w = Worker::new(inst, i, 9, i as u64);
            let seg = collect_segment(&net, &prep, &mut w, 20, false).unwrap();
            segment_gradient(&net, &prep, &seg, &weights).unwrap().0
        })
        .collect();
    let total = accumulate(&grads).unwrap();
    for (name, t) in total.iter() {
        for (k, v) in t.data().iter().enumerate() {
            let sum = grads.iter().fold(0.0, |acc, g| acc + g.get(name).unwrap().data()[k]);
            assert_eq!(v.to_bits(), sum.to_bits(), "{name}[{k}]");
        }
    }
}

#[test]
fn trainer_round_matches_manual_update() {
    let insts = problems();
    let mut cfg = TrainConfig::new(insts.clone());
    cfg.seed = 12;
    let mut trainer = Trainer::new(cfg.clone(), None).unwrap();
    let start = trainer.net().clone();

    let mut params = start.params.clone();
    let mut opt = RmsProp::with_hyper(&params, cfg.learning_rate, 0.99, 1e-8);
    let mut workers: Vec<Worker> = insts.iter().enumerate().map(|(i, inst)| Worker::new(inst, i, cfg.seed, i as u64)).collect();
    let weights = LossWeights {
        gamma: cfg.gamma,
        entropy_weight: cfg.entropy_weight,
        value_loss_weight: cfg.value_loss_weight,
    };
    for round in 0..3 {
        trainer.round().unwrap();
        let net = TransferNet::from_params(start.config, params.clone());
        let grads: Vec<ParamStore> = workers
            .iter_mut()
            .map(|w| {
                let prep = Prepared::new(&insts[w.problem]);
                let seg = collect_segment(&net, &prep, w, cfg.nstep, false).unwrap();
                segment_gradient(&net, &prep, &seg, &weights).unwrap().0
            })
            .collect();
        let mut total = accumulate(&grads).unwrap();
        a3c::clip_global_norm(&mut total, cfg.grad_clip_norm);
        opt.update(&mut params, &total);
        assert_eq!(bits(&trainer.net().params), bits(&params), "round {round}");
    }
    assert_eq!(trainer.steps(), 3);
}

#[test]
fn recorded_segment_replays() {
    let inst = random_instance(DomainId::AcademicAdvising, 6, 5);
    let net = TransferNet::new(TrainConfig::new(vec![inst.clone()]).encoder_config().unwrap(), 2);
    let prep = Prepared::new(&inst);
    let mut w = Worker::new(&inst, 0, 3, 0);
    let mut state = w.state().clone();
    for _ in 0..4 {
        let seg = collect_segment(&net, &prep, &mut w, 7, false).unwrap();
        if seg.states[0] != state {
            // the previous segment ended its episode
            state = inst.initial_state();
        }
        for t in 0..seg.len() {
            assert_eq!(seg.states[t], state);
            let d = net.policy_forward(&prep, &state).unwrap();
            assert_eq!(seg.log_probs[t], d.log_probs()[seg.actions[t]]);
            assert_eq!(seg.entropies[t], d.entropy());
            assert_eq!(seg.values[t], net.value_forward(&prep, &state).unwrap());
            assert_eq!(seg.rewards[t], rddl_transfer::domains::reward(&inst, &state, inst.action_at(seg.actions[t])));
            state = if t + 1 < seg.len() { seg.states[t + 1].clone() } else { w.state().clone() };
        }
        if seg.episode_end {
            assert_eq!(seg.bootstrap, 0.0);
        } else {
            assert_eq!(seg.bootstrap, net.value_forward(&prep, &state).unwrap());
            assert!(!mdp::is_terminal(&inst, &state));
        }
    }
}
