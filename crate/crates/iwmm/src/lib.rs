//! Infinite warped mixture model: a Dirichlet-process Gaussian mixture in a
//! latent space, warped into the observed space by Gaussian-process mappings.
//! Inference is fully collapsed MCMC — Gibbs sweeps over assignments with the
//! mixture parameters integrated out, hybrid Monte Carlo over the latent
//! coordinates and kernel hyperparameters with the warping integrated out.
//!
//! The crate also ships the evaluation harness around the model: synthetic
//! dataset generators, posterior predictive density estimation, Rand-index
//! and cross-validated log-likelihood benchmarks against KDE and the
//! unwarped (identity-mapping) mixture, and a CLI surface over it all.
//!
//! Heavy data-parallel paths (density grids, benchmark folds) use rayon and
//! fall back to sequential loops when built with `--no-default-features`;
//! both paths produce identical bytes.

pub mod archive;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gp;
pub mod math;
pub mod mcmc;
pub mod mixture;
pub mod predictive;
pub mod rng;

pub use error::{Error, Result};

/// Honor the optional `IWMM_THREADS` override for the rayon pool. A no-op
/// when the `parallel` feature is disabled or the pool is already built.
pub fn init_thread_pool_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("IWMM_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}
