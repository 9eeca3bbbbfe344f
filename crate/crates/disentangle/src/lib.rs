//! Disentanglement toolkit for fixed-dimension speaker embeddings.
//!
//! The crate splits an input embedding into a speaker code `h1` and a
//! nuisance code `h2` with an adversarially trained encoder, then measures
//! what each code still knows: probing classifiers report per-factor
//! accuracies, a chi-squared test checks label dependence, and an LDA/PLDA
//! backend scores speaker-verification trials with EER/DET metrics.
//!
//! Modules:
//! - [`synth`] — factor-entangled synthetic corpora with known ground truth
//! - [`dataio`] — embedding archives, label tables, trial lists, splits
//! - [`nnet`] — dense feedforward networks, losses, Adam, gradient checking
//! - [`uai`] — the adversarial invariance model (encoder / predictor /
//!   decoder / two disentanglers) and its minimax training loop
//! - [`probe`] — factor-prediction classifiers and the chi-squared test
//! - [`backend`] — LDA, two-covariance PLDA, trial scoring, DET/EER
//! - [`cli`] — the `disentangle` command-line front end
//!
//! Start with the runnable examples (`cargo run --release --example ...`);
//! each one exercises one capability end to end.

pub mod backend;
pub mod cli;
pub mod dataio;
pub mod linalg;
pub mod nnet;
pub mod probe;
pub mod rng;
pub mod synth;
pub mod uai;
