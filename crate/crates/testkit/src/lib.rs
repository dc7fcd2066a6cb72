//! Reference implementations used only by tests.
//!
//! The SysAdmin chain here is written directly from the transition rule
//! rather than through the simulator, so agreement between the two is
//! evidence that both are right.

pub mod checks;

use rddl_transfer::domains::{generate_instance, DomainParams, GeneratorConfig, Topology};
use rddl_transfer::mdp::Matrix;
use rddl_transfer::{DomainId, GroundState, ProblemInstance, RngStream};

/// Plain-data SysAdmin instance for exact dynamic programming.
#[derive(Debug, Clone)]
pub struct SysAdminChain {
    pub n: usize,
    /// `neighbors[i]` are the computers connected to `i`.
    pub neighbors: Vec<Vec<usize>>,
    pub reboot_prob: f64,
    pub base: f64,
    pub bonus: f64,
    pub recovery: f64,
    pub penalty: f64,
    pub initial: usize,
}

impl SysAdminChain {
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        let DomainParams::SysAdmin(p) = &inst.params else {
            panic!("not a SysAdmin instance");
        };
        let n = inst.objects.len();
        assert!(n <= 16, "state space too large for enumeration");
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| inst.binary_nonfluent.get(i, j)).collect())
            .collect();
        let initial = (0..n)
            .filter(|&i| inst.initial_fluents.get(i, 0) != 0.0)
            .fold(0usize, |m, i| m | 1 << i);
        Self {
            n,
            neighbors,
            reboot_prob: p.reboot_success_prob,
            base: p.base_running_prob,
            bonus: p.neighbor_bonus,
            recovery: p.spontaneous_recovery_prob,
            penalty: p.reboot_penalty,
            initial,
        }
    }

    pub fn state_count(&self) -> usize {
        1 << self.n
    }

    /// Actions `0..n` reboot computer `i`; action `n` does nothing.
    pub fn action_count(&self) -> usize {
        self.n + 1
    }

    fn up(s: usize, i: usize) -> bool {
        s >> i & 1 == 1
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        let running = s.count_ones() as f64;
        if a < self.n {
            running - self.penalty
        } else {
            running
        }
    }

    /// Probability that computer `i` runs next step.
    pub fn up_prob(&self, s: usize, a: usize, i: usize) -> f64 {
        if a == i {
            return self.reboot_prob;
        }
        if !Self::up(s, i) {
            return self.recovery;
        }
        let nb = &self.neighbors[i];
        let live = nb.iter().filter(|&&j| Self::up(s, j)).count();
        (self.base + self.bonus * (1 + live) as f64 / (1 + nb.len()) as f64).min(1.0)
    }

    /// Full distribution over successor states.
    pub fn successors(&self, s: usize, a: usize) -> Vec<f64> {
        let probs: Vec<f64> = (0..self.n).map(|i| self.up_prob(s, a, i)).collect();
        (0..self.state_count())
            .map(|t| {
                (0..self.n)
                    .map(|i| if Self::up(t, i) { probs[i] } else { 1.0 - probs[i] })
                    .product()
            })
            .collect()
    }

    /// Optimal `horizon`-step values by backward induction, with the
    /// optimal non-stationary policy free to differ at every step.
    pub fn optimal_values(&self, horizon: usize, discount: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.state_count()];
        for _ in 0..horizon {
            v = (0..self.state_count())
                .map(|s| {
                    (0..self.action_count())
                        .map(|a| self.q(&v, s, a, discount))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        v
    }

    fn q(&self, v: &[f64], s: usize, a: usize, discount: f64) -> f64 {
        let next: f64 = self.successors(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
        self.reward(s, a) + discount * next
    }

    /// Exact `horizon`-step values of a stationary stochastic policy given
    /// as action probabilities per state.
    pub fn policy_values<F>(&self, horizon: usize, discount: f64, policy: F) -> Vec<f64>
    where
        F: Fn(usize) -> Vec<f64>,
    {
        let table: Vec<Vec<f64>> = (0..self.state_count()).map(policy).collect();
        let mut v = vec![0.0; self.state_count()];
        for _ in 0..horizon {
            v = (0..self.state_count())
                .map(|s| {
                    table[s]
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(a, p)| p * self.q(&v, s, a, discount))
                        .sum()
                })
                .collect();
        }
        v
    }

    /// State flags of bitmask `s` in object order.
    pub fn flags(&self, s: usize) -> Vec<bool> {
        (0..self.n).map(|i| Self::up(s, i)).collect()
    }
}

/// Relative error used for gradient checks:
/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between `analytic` and the central difference
/// gradient of `f` at `x`.
pub fn max_gradient_error<F>(f: F, x: &[f64], analytic: &[f64], h: f64, floor: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    numeric_gradient(f, x, h)
        .iter()
        .zip(analytic)
        .map(|(n, a)| relative_error(*a, *n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> SysAdminChain {
        SysAdminChain {
            n: 2,
            neighbors: vec![vec![1], vec![0]],
            reboot_prob: 1.0,
            base: 0.45,
            bonus: 0.5,
            recovery: 0.04,
            penalty: 0.75,
            initial: 3,
        }
    }

    #[test]
    fn successor_rows_sum_to_one() {
        let c = chain();
        for s in 0..4 {
            for a in 0..3 {
                let total: f64 = c.successors(s, a).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_step_optimum_is_best_reward() {
        let c = chain();
        let v = c.optimal_values(1, 1.0);
        assert_eq!(v, vec![0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn hand_computed_two_step_noop_value() {
        // both up, noop: each stays up w.p. 0.45 + 0.5 = 0.95
        let c = chain();
        let v = c.policy_values(2, 1.0, |_| vec![0.0, 0.0, 1.0]);
        assert!((v[3] - (2.0 + 2.0 * 0.95)).abs() < 1e-12);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}

pub const DOMAINS: [DomainId; 3] = [DomainId::SysAdmin, DomainId::GameOfLife, DomainId::AcademicAdvising];

/// A generated instance with `n` objects and a seed-dependent topology.
/// Game of Life boards use the most square factorization of `n`.
pub fn random_instance(domain: DomainId, n: usize, seed: u64) -> ProblemInstance {
    let mut rng = RngStream::new(seed ^ 0x5EED);
    let edge_prob = rng.uniform();
    let topology = match domain {
        DomainId::SysAdmin => Topology::RandomGraph { edge_prob },
        DomainId::AcademicAdvising => Topology::Dag { edge_prob },
        DomainId::GameOfLife => {
            let rows = (1..=n).filter(|r| n % r == 0 && r * r <= n).max().unwrap_or(1);
            Topology::Grid { rows, cols: n / rows }
        }
    };
    generate_instance(&GeneratorConfig {
        domain,
        size: n,
        topology,
        seed,
    })
    .expect("generator accepts its own topologies")
}

/// A uniformly random boolean state of `instance`.
pub fn random_state(instance: &ProblemInstance, rng: &mut RngStream) -> GroundState {
    let (rows, cols) = (instance.object_count(), instance.fluent_count());
    let data = (0..rows * cols).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
    GroundState::new(Matrix::from_vec(rows, cols, data))
}
