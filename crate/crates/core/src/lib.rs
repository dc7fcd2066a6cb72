//! Size-independent neural transfer for factored-MDP planning.
//!
//! Objects of a problem instance are embedded with a graph attention
//! encoder, pooled into a fixed-width state embedding, and decoded into
//! action scores and a state value by networks whose parameters are tied
//! across objects. A model trained on small instances of a domain therefore
//! runs unchanged on larger ones.

pub mod a3c;
pub mod domains;
pub mod eval;
pub mod graph;
pub mod io;
pub mod mdp;
pub mod model;
pub mod nn;
pub mod rng;

pub use mdp::{DomainId, GroundAction, GroundState, PolicyDistribution, ProblemInstance};
pub use rng::RngStream;
