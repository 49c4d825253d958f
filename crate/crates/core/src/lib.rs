//! Trainable relaxation labelling.
//!
//! A relaxation-labelling process refines per-object label probabilities
//! using a compatibility matrix `R` between (object, label) pairs. This crate
//! unrolls a fixed number of those updates, backpropagates through them, and
//! learns `R` together with a softmax prior model under a CTC objective on
//! sequence transcripts.
//!
//! The modules map onto the pipeline:
//!
//! - [`relax`]: assignments, compatibility matrices, the update rule and
//!   the consistency measure.
//! - [`bptt`]: the recorded trajectory, its backward pass and a
//!   finite-difference checker.
//! - [`ctc`]: log-space CTC loss with gradient, a brute-force oracle and
//!   greedy decoding.
//! - [`prior`]: the linear softmax prior model.
//! - [`train`]: the joint objective, Adam, checkpoints, sparsity and
//!   iteration sweeps.
//! - [`metrics`], [`postproc`]: error rates and dictionary correction.
//! - [`data`]: corpus files and the synthetic generator.
//! - [`cli`]: the `relab` command line.
//!
//! Each capability has a runnable example under `examples/`:
//! `relax_basic`, `gradient_check`, `ctc_oracle`, `synthetic_corpus`,
//! `train_synthetic`, `sparsity_sweep`, `iteration_sweep`, `postprocess`
//! and `evaluate`.

pub mod bptt;
pub mod cli;
pub mod ctc;
pub mod data;
pub mod error;
pub mod metrics;
pub mod postproc;
pub mod prior;
pub mod relax;
pub mod train;

pub use error::{Error, Result};
