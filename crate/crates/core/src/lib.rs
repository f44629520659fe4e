//! Reward-augmented maximum likelihood at a scale where every output space
//! can be enumerated.
//!
//! - [`rewards`]: sequences, Hamming and edit distance, negated-distance rewards.
//! - [`counting`]: log-domain edit-ball counts with a big-integer oracle.
//! - [`payoff`]: the exponentiated payoff distribution, exact and stratified.
//! - [`divergence`]: Bregman potentials, KL identities and their certificates.
//! - [`objectives`]: ML, RAML and entropy-regularized RL losses and gradients.
//! - [`harness`]: configuration and the experiment commands behind `raml-lab`.

pub mod counting;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod objectives;
pub mod payoff;
pub mod rewards;
pub mod rng;

pub use error::{Error, Result};
