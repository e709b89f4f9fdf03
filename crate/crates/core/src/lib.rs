//! Replica free entropy and state evolution for compressed sensing with
//! row-orthogonal (DFT-based) and Gaussian i.i.d. measurement ensembles,
//! including spatially-coupled block designs.
//!
//! The crate is organized bottom-up:
//!
//! - [`scalar_channel`]: Bernoulli-Gaussian prior, posterior mean, MMSE
//! - [`replica`]: coupling specifications, the `G` terms, free entropy
//! - [`state_evolution`]: per-block MSE recursion
//! - [`phase`]: free-entropy scans and the `α_d`, `α_c`, `α_s` thresholds
//! - [`coupling`]: seeded band-diagonal designs
//! - [`measurement`]: concrete operators and synthetic instances

#![allow(clippy::needless_range_loop, clippy::unnecessary_map_or)]

pub mod coupling;
pub mod error;
pub mod measurement;
pub mod phase;
pub mod quadrature;
pub mod replica;
pub mod rng;
pub mod scalar_channel;
pub mod state_evolution;

pub use error::{Error, Result};
pub use replica::{
    channel_term, conjugate_fixed_point, free_entropy, free_entropy_at, g_gauss, g_orth, BlockMatrix, ConjugateState,
    CouplingSpec, EnsembleKind,
};
pub use scalar_channel::{mmse, mmse_mc_oracle, posterior_mean, BernoulliGaussianPrior, ScalarChannel};
pub use state_evolution::{run_evolution, EvolutionOptions, EvolutionTrace, Schedule};
