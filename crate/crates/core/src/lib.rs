//! Deep latent sequence model for unsupervised text style transfer.
//!
//! Two non-parallel corpora are treated as partially observed: each observed
//! sentence in one domain has a latent counterpart in the other. An LSTM
//! encoder-decoder acts as the inference network for both directions, frozen
//! language models act as domain priors, and training maximizes a
//! variational lower bound on the joint marginal likelihood.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod latent;
pub mod lm;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod vi;

pub use error::{Error, Result};
pub use rng::{Rng, RngState};
pub use tensor::{finite_difference_check, GradCheck, Tape, Tensor, Var};
