//! Phase retrieval under generative priors.
//!
//! Recovers a signal `x* = G(z*)` from magnitude measurements `y = |A x*|`
//! using three solvers over a dense ReLU generator `G`: alternating phase
//! projected gradient descent ([`solvers::appgd`]), alternating phase
//! gradient descent ([`solvers::apgd`]) and direct latent gradient descent
//! ([`solvers::gd_baseline`]). The [`experiment`] module drives seeded
//! measurement sweeps and writes CSV/JSON results.

pub mod error;
pub mod experiment;
pub mod generator;
pub mod dataset;
pub mod metrics;
pub mod numerics;
pub mod sensing;
pub mod solvers;

pub use error::{Error, Result};
pub use generator::{random_generator, train_glo, Activation, GeneratorNetwork, GloConfig, LatentCode, Layer};
pub use metrics::{dist_up_to_sign, recon_error_per_pixel, sign_correct, ssim, SsimConfig};
pub use numerics::{gaussian_matrix, DenseMatrix, RngStream};
pub use sensing::{make_sensing, observe, Observation, SensingModel};
pub use solvers::{apgd, appgd, gd_baseline, phase_update, gradient_step, project, LatentInit, Problem, RecoveryResult, SolverConfig, SolverKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
