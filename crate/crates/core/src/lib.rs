//! Simulation and exact verification of order-`r` branch lengths in the
//! Kingman n-coalescent.
//!
//! * [`coalescent`]: exact tree simulation and order-length extraction.
//! * [`chain`]: the branch-count Markov chain and its one-step law.
//! * [`moments`]: closed-form moments of branch counts and exact oracles.
//! * [`coupling`]: the optimal jump coupling of internal and external counts.
//! * [`sfs`]: Poisson mutations and the site frequency spectrum.
//! * [`harness`]: reproducible Monte Carlo experiments.

pub mod chain;
pub mod cli;
pub mod coalescent;
pub mod coupling;
pub mod error;
pub mod harness;
pub mod moments;
pub mod numeric;
pub mod rng;
pub mod sfs;

pub use error::{Error, Result};
