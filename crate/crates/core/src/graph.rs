//! Object graph and node input features for the state encoder.

use std::rc::Rc;

use crate::mdp::{Adjacency, GroundState, ProblemInstance};
use crate::nn::Tensor;

/// Nodes are objects; edges come from the binary non-fluent. Attention
/// neighborhoods have radius 1 and include the node itself. For directed
/// adjacency (prerequisites) a node attends to its in-neighbors, so a
/// course sees its prerequisites.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGraph {
    pub adjacency: Adjacency,
    /// Sorted, self included.
    pub neighborhoods: Vec<Vec<usize>>,
}

impl ObjectGraph {
    pub fn node_count(&self) -> usize {
        self.neighborhoods.len()
    }

    /// Row-major `n x n` mask, `mask[i * n + j]` iff `j` is in the
    /// neighborhood of `i`.
    pub fn attention_mask(&self) -> Rc<Vec<bool>> {
        let n = self.node_count();
        let mut mask = vec![false; n * n];
        for (i, hood) in self.neighborhoods.iter().enumerate() {
            for &j in hood {
                mask[i * n + j] = true;
            }
        }
        Rc::new(mask)
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` over the attention neighborhoods, with
    /// `D` the row sums of `A + I`.
    pub fn gcn_normalized(&self) -> Tensor {
        let n = self.node_count();
        let deg: Vec<f64> = self.neighborhoods.iter().map(|h| h.len() as f64).collect();
        let mut out = Tensor::zeros(n, n);
        for (i, hood) in self.neighborhoods.iter().enumerate() {
            for &j in hood {
                out.set(i, j, 1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
        out
    }
}

pub fn build_graph(instance: &ProblemInstance) -> ObjectGraph {
    let adjacency = instance.binary_nonfluent.clone();
    let neighborhoods = (0..adjacency.len())
        .map(|i| {
            let mut hood: Vec<usize> = adjacency.in_neighbors(i).collect();
            hood.push(i);
            hood.sort_unstable();
            hood
        })
        .collect();
    ObjectGraph {
        adjacency,
        neighborhoods,
    }
}

/// Row `i` is `[fl_1(o_i) .. fl_J(o_i), nf_1(o_i) .. nf_L(o_i)]`.
pub fn node_features(instance: &ProblemInstance, state: &GroundState) -> Tensor {
    let n = instance.object_count();
    let (j, l) = (state.fluents.cols(), instance.unary_nonfluents.cols());
    let mut data = Vec::with_capacity(n * (j + l));
    for i in 0..n {
        data.extend_from_slice(state.fluents.row(i));
        data.extend_from_slice(instance.unary_nonfluents.row(i));
    }
    Tensor::from_rows(n, j + l, data)
}
