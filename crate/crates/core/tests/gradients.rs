//! Central finite-difference checks of every layer and of the full
//! actor-critic loss.

use rddl_transfer::graph::{build_graph, ObjectGraph};
use rddl_transfer::model::EncoderKind;
use rddl_transfer::nn::layers::{fc, gat_layer, gcn_layer, mlp2, AttentionPass};
use rddl_transfer::nn::{Tape, Var, LEAKY_SLOPE};
use rddl_transfer::DomainId;
use rddl_transfer_testkit::checks::{layer_gradient_error, loss_gradient_check};
use rddl_transfer_testkit::random_instance;

const LAYER_TOL: f64 = 1e-6;
const LOSS_TOL: f64 = 1e-4;
const CASES: u64 = 20;

fn graph(domain: DomainId, n: usize, seed: u64) -> ObjectGraph {
    build_graph(&random_instance(domain, n, seed))
}

fn assert_layer(name: &str, shapes: &[(usize, usize)], f: impl Fn(&mut Tape, &[Var]) -> Var + Copy) {
    for case in 0..CASES {
        let err = layer_gradient_error(shapes, 1000 + case, f);
        assert!(err < LAYER_TOL, "{name} case {case}: relative error {err:e}");
    }
}

#[test]
fn fully_connected() {
    assert_layer("fc", &[(5, 4), (4, 3), (1, 3)], |t, v| fc(t, v[0], v[1], v[2]).unwrap());
}

#[test]
fn leaky_relu() {
    assert_layer("leaky_relu", &[(6, 3)], |t, v| t.leaky_relu(v[0], LEAKY_SLOPE));
}

#[test]
fn two_layer_mlp() {
    assert_layer("mlp2", &[(4, 6), (6, 5), (1, 5), (5, 2), (1, 2)], |t, v| {
        mlp2(t, v[0], [(v[1], v[2]), (v[3], v[4])]).unwrap()
    });
}

#[test]
fn max_pool_and_context() {
    assert_layer("max_rows+concat", &[(5, 4)], |t, v| {
        let s = t.max_rows(v[0]).unwrap();
        let tiled = t.repeat_row(s, 5).unwrap();
        t.concat_cols(v[0], tiled).unwrap()
    });
}

#[test]
fn row_softmaxes() {
    assert_layer("log_softmax", &[(1, 7)], |t, v| t.log_softmax_row(v[0]).unwrap());
    assert_layer("softmax", &[(1, 7)], |t, v| t.softmax_row(v[0]).unwrap());
}

#[test]
fn sum_and_reshape() {
    assert_layer("transpose+reshape+sum_rows", &[(3, 4)], |t, v| {
        let tr = t.transpose(v[0]);
        let flat = t.reshape(tr, 1, 12).unwrap();
        let e = t.exp(flat);
        t.sum_rows(e)
    });
}

#[test]
fn graph_attention() {
    for (domain, f_in) in [(DomainId::SysAdmin, 1), (DomainId::AcademicAdvising, 2)] {
        for case in 0..CASES {
            let g = graph(domain, 6, case);
            let f = |t: &mut Tape, v: &[Var]| {
                let passes: Vec<AttentionPass> = (0..4).map(|k| AttentionPass { w: v[1 + 2 * k], a: v[2 + 2 * k] }).collect();
                gat_layer(t, v[0], &g, &passes).unwrap()
            };
            let mut shapes = vec![(6, f_in)];
            for _ in 0..4 {
                shapes.extend([(f_in, 3), (6, 1)]);
            }
            let err = layer_gradient_error(&shapes, 2000 + case, f);
            assert!(err < LAYER_TOL, "gat {domain} case {case}: relative error {err:e}");
        }
    }
}

#[test]
fn graph_convolution() {
    for case in 0..CASES {
        let g = graph(DomainId::SysAdmin, 6, case);
        let err = layer_gradient_error(&[(6, 2), (2, 3)], 3000 + case, |t, v| gcn_layer(t, v[0], &g, v[1]).unwrap());
        assert!(err < LAYER_TOL, "gcn case {case}: relative error {err:e}");
    }
}

#[test]
fn full_actor_critic_loss() {
    let setups = [
        (DomainId::SysAdmin, EncoderKind::Gat, false),
        (DomainId::GameOfLife, EncoderKind::Gat, true),
        (DomainId::AcademicAdvising, EncoderKind::Gat, false),
        (DomainId::SysAdmin, EncoderKind::Gcn, false),
    ];
    for (domain, encoder, shared) in setups {
        for case in 0..CASES {
            let c = loss_gradient_check(domain, encoder, shared, case, 60);
            assert!(c.kinks <= c.probes / 10, "{domain} case {case}: {} of {} probes hit a kink", c.kinks, c.probes);
            assert!(c.max_error < LOSS_TOL, "{domain} {encoder:?} case {case}: relative error {:e}", c.max_error);
        }
    }
}

