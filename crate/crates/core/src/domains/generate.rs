use super::{DomainError, DomainParams};
use crate::mdp::{Adjacency, DomainId, Matrix, ProblemInstance};
use crate::rng::RngStream;

/// Horizon of generated instances (the IPPC 2014 setting).
pub const GENERATED_HORIZON: usize = 40;
/// Fraction of Academic Advising courses marked as program requirements.
pub const REQUIREMENT_FRACTION: f64 = 0.4;
/// Initial density of live cells in generated Game of Life boards.
pub const INITIAL_ALIVE_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    RandomGraph { edge_prob: f64 },
    Grid { rows: usize, cols: usize },
    Dag { edge_prob: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub domain: DomainId,
    pub size: usize,
    pub topology: Topology,
    pub seed: u64,
}

fn invalid(msg: impl Into<String>) -> DomainError {
    DomainError::InvalidTopology(msg.into())
}

fn check_edge_prob(p: f64) -> Result<(), DomainError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(format!("edge probability {p} outside [0, 1]")))
    }
}

/// Seeded random instance. SysAdmin takes a random undirected graph, Game of
/// Life an 8-neighbor grid with `rows * cols == size`, Academic Advising a
/// random DAG over courses.
pub fn generate_instance(config: &GeneratorConfig) -> Result<ProblemInstance, DomainError> {
    let n = config.size;
    if n == 0 {
        return Err(invalid("size must be at least 1"));
    }
    let mut rng = RngStream::new(config.seed);
    let domain = config.domain;
    let mut adj = Adjacency::empty(n);
    let mut fluents = Matrix::zeros(n, 1);
    let mut unary = Matrix::zeros(n, domain.unary_nonfluents().len());

    match (domain, config.topology) {
        (DomainId::SysAdmin, Topology::RandomGraph { edge_prob }) => {
            check_edge_prob(edge_prob)?;
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.bernoulli(edge_prob) {
                        adj.set(i, j, true);
                        adj.set(j, i, true);
                    }
                }
            }
            for i in 0..n {
                fluents.set(i, 0, 1.0);
            }
        }
        (DomainId::GameOfLife, Topology::Grid { rows, cols }) => {
            if rows == 0 || cols == 0 || rows * cols != n {
                return Err(invalid(format!("grid {rows}x{cols} does not have {n} cells")));
            }
            let at = |r: usize, c: usize| r * cols + c;
            for r in 0..rows {
                for c in 0..cols {
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                            if (dr, dc) == (0, 0)
                                || rr < 0
                                || cc < 0
                                || rr >= rows as i64
                                || cc >= cols as i64
                            {
                                continue;
                            }
                            adj.set(at(r, c), at(rr as usize, cc as usize), true);
                        }
                    }
                }
            }
            for i in 0..n {
                if rng.bernoulli(INITIAL_ALIVE_PROB) {
                    fluents.set(i, 0, 1.0);
                }
            }
        }
        (DomainId::AcademicAdvising, Topology::Dag { edge_prob }) => {
            check_edge_prob(edge_prob)?;
            // edges only from lower to higher index, so the graph is acyclic
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.bernoulli(edge_prob) {
                        adj.set(i, j, true);
                    }
                }
            }
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let required = ((n as f64 * REQUIREMENT_FRACTION).round() as usize).clamp(1, n);
            for &i in &order[..required] {
                unary.set(i, 0, 1.0);
            }
        }
        (d, t) => return Err(invalid(format!("topology {t:?} not supported for {d}"))),
    }

    let prefix = match domain {
        DomainId::SysAdmin => "c",
        DomainId::GameOfLife => "x",
        DomainId::AcademicAdvising => "cs",
    };
    let objects = match config.topology {
        Topology::Grid { cols, .. } => (0..n)
            .map(|i| format!("{prefix}{}_{}", i / cols + 1, i % cols + 1))
            .collect(),
        _ => (0..n).map(|i| format!("{prefix}{}", i + 1)).collect(),
    };

    Ok(ProblemInstance {
        name: format!("{}_{}_s{}", domain.name(), n, config.seed),
        domain,
        objects,
        unary_nonfluents: unary,
        binary_nonfluent: adj,
        initial_fluents: fluents,
        horizon: GENERATED_HORIZON,
        discount: 1.0,
        params: DomainParams::defaults(domain),
    })
}
