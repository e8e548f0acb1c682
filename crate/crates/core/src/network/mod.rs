//! A single denoising-attention layer over a Dirichlet-Process posterior,
//! with a task head, KL regularizers and hand-written gradients.
//!
//! Forward pass for one `n × d` input:
//!
//! 1. project each token to `(α, μ, σ)` and append the prior component;
//! 2. draw `π` from Gamma variates by inverse CDF and `Z = μ + σ ε`;
//! 3. attend from every row of `Z` over `(π, Z)`;
//! 4. mean-pool and apply the head.
//!
//! Nothing computed from the raw input reaches step 3 except through the
//! sample.

mod model;
mod params;
mod train;

pub use model::{
    denoising_attention, draw_noise, grad, is_correct, kl_regularizers, loss, loss_with_noise, predict_sample,
    prior_dirichlet, project_posterior, regularizer_grad, sample_accuracy, sanitize, Example, LossParts, LossWeights, Target,
};
pub use params::{deserialize_params, read_params, serialize_params, write_params, Affine, ModelParams};
pub use train::{
    train, training_log_csv, write_training_log, EpochLog, TrainConfig, TrainOutcome, STREAM_INIT,
    TRAINING_LOG_HEADER,
};
