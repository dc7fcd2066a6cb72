//! Layers built from tape primitives.

use super::{NnError, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::graph::ObjectGraph;

/// `x W + b`.
pub fn fc(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
    let h = tape.matmul(x, w)?;
    tape.add_bias(h, b)
}

/// Two fully connected layers with a leaky ReLU in between and a linear
/// output.
pub fn mlp2(tape: &mut Tape, x: Var, layers: [(Var, Var); 2]) -> Result<Var, NnError> {
    let h = fc(tape, x, layers[0].0, layers[0].1)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    fc(tape, h, layers[1].0, layers[1].1)
}

/// Parameters of one attention pass: projection `W` (`F_in x F_out`) and
/// attention vector `a` (`2 F_out x 1`).
#[derive(Debug, Clone, Copy)]
pub struct AttentionPass {
    pub w: Var,
    pub a: Var,
}

/// Graph attention with `K = passes.len()` independent passes combined by
/// elementwise max.
///
/// Each pass computes `h_i = x_i W`, scores
/// `e_ij = leaky_relu(a . [h_i || h_j])` for `j` in the neighborhood of `i`
/// (self included), normalizes them with a softmax over that neighborhood,
/// and outputs `sum_j alpha_ij h_j`.
pub fn gat_layer(
    tape: &mut Tape,
    x: Var,
    graph: &ObjectGraph,
    passes: &[AttentionPass],
) -> Result<Var, NnError> {
    if passes.is_empty() {
        return Err(NnError::ShapeMismatch {
            op: "gat_layer",
            detail: "at least one attention pass required".into(),
        });
    }
    let n = tape.value(x).rows();
    if n != graph.node_count() {
        return Err(NnError::ShapeMismatch {
            op: "gat_layer",
            detail: format!("{n} feature rows for {} nodes", graph.node_count()),
        });
    }
    let mask = graph.attention_mask();
    let mut out: Option<Var> = None;
    for pass in passes {
        let h = tape.matmul(x, pass.w)?;
        let f_out = tape.value(h).cols();
        if tape.value(pass.a).rows() != 2 * f_out {
            return Err(NnError::ShapeMismatch {
                op: "gat_layer",
                detail: format!("attention vector has {} rows, expected {}", tape.value(pass.a).rows(), 2 * f_out),
            });
        }
        // a = [a_src; a_dst], split with constant selectors
        let (sel_src, sel_dst) = selectors(f_out);
        let sel_src = tape.constant(sel_src);
        let sel_dst = tape.constant(sel_dst);
        let a_src = tape.matmul(sel_src, pass.a)?;
        let a_dst = tape.matmul(sel_dst, pass.a)?;
        let u = tape.matmul(h, a_src)?;
        let v = tape.matmul(h, a_dst)?;
        let e = tape.outer_add(u, v)?;
        let e = tape.leaky_relu(e, LEAKY_SLOPE);
        let alpha = tape.masked_softmax_rows(e, mask.clone())?;
        let o = tape.matmul(alpha, h)?;
        out = Some(match out {
            None => o,
            Some(prev) => tape.max_elem(prev, o)?,
        });
    }
    Ok(out.expect("non-empty passes"))
}

fn selectors(f: usize) -> (Tensor, Tensor) {
    let mut src = Tensor::zeros(f, 2 * f);
    let mut dst = Tensor::zeros(f, 2 * f);
    for i in 0..f {
        src.set(i, i, 1.0);
        dst.set(i, f + i, 1.0);
    }
    (src, dst)
}

/// `leaky_relu(D^{-1/2} (A + I) D^{-1/2} X W)`.
pub fn gcn_layer(tape: &mut Tape, x: Var, graph: &ObjectGraph, w: Var) -> Result<Var, NnError> {
    let norm = tape.constant(graph.gcn_normalized());
    let xw = tape.matmul(x, w)?;
    let h = tape.matmul(norm, xw)?;
    Ok(tape.leaky_relu(h, LEAKY_SLOPE))
}
