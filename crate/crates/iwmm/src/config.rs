//! Flat key=value run configuration with dotted namespaces. Every key has a
//! default; a manifest echoes the fully resolved set, so a manifest is itself
//! a valid config file and reruns reproduce the original run exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::mcmc::{HmcConfig, InitScheme, Mapping, SamplerConfig};
use crate::mixture::GwPriorSpec;

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub latent_dim: usize,
    pub mapping: Mapping,
    pub init: InitScheme,
    pub prior: GwPriorSpec,
    pub kernel: KernelParams,
    pub total_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub hmc_x_step_size: f64,
    pub hmc_x_leapfrog: usize,
    pub hmc_x_target_accept: f64,
    /// `None` means "adapt through burn-in".
    pub hmc_x_adapt_iters: Option<usize>,
    pub hmc_theta_step_size: f64,
    pub hmc_theta_leapfrog: usize,
    pub hmc_theta_target_accept: f64,
    pub hmc_theta_adapt_iters: Option<usize>,
    pub predictive_draws: usize,
    pub folds: usize,
    pub fold_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            mapping: Mapping::Warped,
            init: InitScheme::Auto,
            prior: GwPriorSpec::default(),
            kernel: KernelParams::default(),
            total_iters: 3000,
            burn_in: 1500,
            thin: 5,
            seed: 0,
            hmc_x_step_size: 0.05,
            hmc_x_leapfrog: 10,
            hmc_x_target_accept: 0.65,
            hmc_x_adapt_iters: None,
            hmc_theta_step_size: 0.05,
            hmc_theta_leapfrog: 5,
            hmc_theta_target_accept: 0.65,
            hmc_theta_adapt_iters: None,
            predictive_draws: 10,
            folds: 10,
            fold_seed: 0,
        }
    }
}

impl RunConfig {
    /// Parse overrides on top of the defaults. Unknown keys are errors,
    /// except the `manifest.` namespace which is informational. All bad
    /// lines are reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key = value", idx + 1));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            if key.starts_with("manifest.") {
                continue;
            }
            if let Err(msg) = cfg.apply(key, value) {
                problems.push(format!("line {}: {msg}", idx + 1));
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("{key}: cannot parse '{value}'"))
        }
        fn opt_num<T: std::str::FromStr>(
            key: &str,
            value: &str,
        ) -> std::result::Result<Option<T>, String> {
            if value.eq_ignore_ascii_case("auto") {
                Ok(None)
            } else {
                num(key, value).map(Some)
            }
        }
        match key {
            "data.latent_dim" => self.latent_dim = num(key, value)?,
            "model.mapping" => {
                self.mapping = match value {
                    "warped" => Mapping::Warped,
                    "identity" => Mapping::Identity,
                    _ => return Err(format!("{key}: expected warped or identity, got '{value}'")),
                }
            }
            "init.scheme" => {
                self.init = match value {
                    "auto" => InitScheme::Auto,
                    "observed" => InitScheme::Observed,
                    "pca" => InitScheme::Pca,
                    _ => {
                        return Err(format!(
                            "{key}: expected auto, observed or pca, got '{value}'"
                        ))
                    }
                }
            }
            "prior.mean" => self.prior.mean = num(key, value)?,
            "prior.rel_precision" => self.prior.rel_precision = num(key, value)?,
            "prior.scale" => self.prior.scale = num(key, value)?,
            "prior.dof" => self.prior.dof = opt_num(key, value)?,
            "prior.concentration" => self.prior.eta = num(key, value)?,
            "kernel.log_alpha" => self.kernel.log_alpha = num(key, value)?,
            "kernel.log_ell" => self.kernel.log_ell = num(key, value)?,
            "kernel.log_beta" => self.kernel.log_beta = num(key, value)?,
            "sampler.total_iters" => self.total_iters = num(key, value)?,
            "sampler.burn_in" => self.burn_in = num(key, value)?,
            "sampler.thin" => self.thin = num(key, value)?,
            "sampler.seed" => self.seed = num(key, value)?,
            "hmc_x.step_size" => self.hmc_x_step_size = num(key, value)?,
            "hmc_x.leapfrog" => self.hmc_x_leapfrog = num(key, value)?,
            "hmc_x.target_accept" => self.hmc_x_target_accept = num(key, value)?,
            "hmc_x.adapt_iters" => self.hmc_x_adapt_iters = opt_num(key, value)?,
            "hmc_theta.step_size" => self.hmc_theta_step_size = num(key, value)?,
            "hmc_theta.leapfrog" => self.hmc_theta_leapfrog = num(key, value)?,
            "hmc_theta.target_accept" => self.hmc_theta_target_accept = num(key, value)?,
            "hmc_theta.adapt_iters" => self.hmc_theta_adapt_iters = opt_num(key, value)?,
            "predictive.draws_per_sample" => self.predictive_draws = num(key, value)?,
            "benchmark.folds" => self.folds = num(key, value)?,
            "benchmark.fold_seed" => self.fold_seed = num(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Emit every key with its resolved value; floats use the shortest
    /// round-trip representation so parse(to_text(c)) == c.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "data.latent_dim = {}", self.latent_dim);
        let _ = writeln!(
            s,
            "model.mapping = {}",
            match self.mapping {
                Mapping::Warped => "warped",
                Mapping::Identity => "identity",
            }
        );
        let _ = writeln!(
            s,
            "init.scheme = {}",
            match self.init {
                InitScheme::Auto => "auto",
                InitScheme::Observed => "observed",
                InitScheme::Pca => "pca",
            }
        );
        let _ = writeln!(s, "prior.mean = {}", self.prior.mean);
        let _ = writeln!(s, "prior.rel_precision = {}", self.prior.rel_precision);
        let _ = writeln!(s, "prior.scale = {}", self.prior.scale);
        match self.prior.dof {
            Some(d) => drop(writeln!(s, "prior.dof = {d}")),
            None => drop(writeln!(s, "prior.dof = auto")),
        }
        let _ = writeln!(s, "prior.concentration = {}", self.prior.eta);
        let _ = writeln!(s, "kernel.log_alpha = {}", self.kernel.log_alpha);
        let _ = writeln!(s, "kernel.log_ell = {}", self.kernel.log_ell);
        let _ = writeln!(s, "kernel.log_beta = {}", self.kernel.log_beta);
        let _ = writeln!(s, "sampler.total_iters = {}", self.total_iters);
        let _ = writeln!(s, "sampler.burn_in = {}", self.burn_in);
        let _ = writeln!(s, "sampler.thin = {}", self.thin);
        let _ = writeln!(s, "sampler.seed = {}", self.seed);
        let _ = writeln!(s, "hmc_x.step_size = {}", self.hmc_x_step_size);
        let _ = writeln!(s, "hmc_x.leapfrog = {}", self.hmc_x_leapfrog);
        let _ = writeln!(s, "hmc_x.target_accept = {}", self.hmc_x_target_accept);
        match self.hmc_x_adapt_iters {
            Some(a) => drop(writeln!(s, "hmc_x.adapt_iters = {a}")),
            None => drop(writeln!(s, "hmc_x.adapt_iters = auto")),
        }
        let _ = writeln!(s, "hmc_theta.step_size = {}", self.hmc_theta_step_size);
        let _ = writeln!(s, "hmc_theta.leapfrog = {}", self.hmc_theta_leapfrog);
        let _ = writeln!(
            s,
            "hmc_theta.target_accept = {}",
            self.hmc_theta_target_accept
        );
        match self.hmc_theta_adapt_iters {
            Some(a) => drop(writeln!(s, "hmc_theta.adapt_iters = {a}")),
            None => drop(writeln!(s, "hmc_theta.adapt_iters = auto")),
        }
        let _ = writeln!(s, "predictive.draws_per_sample = {}", self.predictive_draws);
        let _ = writeln!(s, "benchmark.folds = {}", self.folds);
        let _ = writeln!(s, "benchmark.fold_seed = {}", self.fold_seed);
        s
    }

    /// Lower to the sampler's own configuration type.
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            total_iters: self.total_iters,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            latent_dim: self.latent_dim,
            mapping: self.mapping,
            init: self.init,
            kernel_init: self.kernel,
            hmc_x: HmcConfig {
                step_size: self.hmc_x_step_size,
                num_leapfrog: self.hmc_x_leapfrog,
                target_accept: self.hmc_x_target_accept,
                adapt_iters: self.hmc_x_adapt_iters.unwrap_or(self.burn_in),
            },
            hmc_theta: HmcConfig {
                step_size: self.hmc_theta_step_size,
                num_leapfrog: self.hmc_theta_leapfrog,
                target_accept: self.hmc_theta_target_accept,
                adapt_iters: self.hmc_theta_adapt_iters.unwrap_or(self.burn_in),
            },
        }
    }
}
