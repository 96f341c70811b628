//! Experiment configuration: flat TOML with one section per module and
//! defaults matching the training recipe used throughout the library.

use std::path::{Path, PathBuf};

use eot_core::nn::{Activation, InitScheme, NetworkConfig};
use eot_core::sampler::SamplerConfig;
use eot_core::trainer::TrainConfig;
use eot_core::EotError;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    G2g,
    Toy2d,
    OracleCheck,
}

impl ExperimentKind {
    pub fn id(&self) -> &'static str {
        match self {
            ExperimentKind::G2g => "g2g",
            ExperimentKind::Toy2d => "toy2d",
            ExperimentKind::OracleCheck => "oracle_check",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_hidden")]
    pub hidden_sizes: Vec<usize>,
    /// "relu" or "leaky_relu" (the latter uses `leaky_slope`).
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![48, 48]
}
fn default_activation() -> String {
    "relu".into()
}
fn default_leaky_slope() -> f64 {
    0.2
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden_sizes: default_hidden(),
            activation: default_activation(),
            leaky_slope: default_leaky_slope(),
        }
    }
}

impl NetworkSection {
    pub fn activation(&self) -> Result<Activation, EotError> {
        match self.activation.as_str() {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu { slope: self.leaky_slope }),
            other => Err(EotError::Config(format!(
                "network.activation must be \"relu\" or \"leaky_relu\", got \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
}

fn default_eta() -> f64 {
    0.1
}
fn default_n_steps() -> usize {
    100
}
fn default_sigma0() -> f64 {
    1.0
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            eta: default_eta(),
            n_steps: default_n_steps(),
            sigma0: default_sigma0(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iters")]
    pub n_iterations: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_final: Option<f64>,
    #[serde(default)]
    pub lr_decay_start: Option<usize>,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_init_prob")]
    pub buffer_init_prob: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_batch() -> usize {
    1024
}
fn default_iters() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-3
}
fn default_capacity() -> usize {
    10_000
}
fn default_init_prob() -> f64 {
    0.95
}
fn default_eval_every() -> usize {
    100
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: default_batch(),
            n_iterations: default_iters(),
            lr: default_lr(),
            lr_final: None,
            lr_decay_start: None,
            buffer_capacity: default_capacity(),
            buffer_init_prob: default_init_prob(),
            eval_every: default_eval_every(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_k_test")]
    pub k_test: usize,
    #[serde(default = "default_eta")]
    pub eta_test: f64,
    #[serde(default = "default_eval_samples")]
    pub n_samples: usize,
    /// Evaluation sampling seed, separate from training; defaults to a
    /// fixed function of the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_k_test() -> usize {
    700
}
fn default_eval_samples() -> usize {
    10_000
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k_test: default_k_test(),
            eta_test: default_eta(),
            n_samples: default_eval_samples(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2gSection {
    #[serde(default = "default_eig_lo")]
    pub eigenvalue_lo: f64,
    #[serde(default = "default_eig_hi")]
    pub eigenvalue_hi: f64,
    /// Seed of the random covariance pair; defaults to the run seed.
    #[serde(default)]
    pub pair_seed: Option<u64>,
}

fn default_eig_lo() -> f64 {
    0.5
}
fn default_eig_hi() -> f64 {
    2.0
}

impl Default for G2gSection {
    fn default() -> Self {
        G2gSection {
            eigenvalue_lo: default_eig_lo(),
            eigenvalue_hi: default_eig_hi(),
            pair_seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toy2dSection {
    #[serde(default = "default_roll_scale")]
    pub scale: f64,
    #[serde(default = "default_roll_noise")]
    pub noise_std: f64,
    /// Size of the empirical instance handed to the discrete reference
    /// solver.
    #[serde(default = "default_reference_n")]
    pub n_reference: usize,
    /// Probe source points for conditional comparisons.
    #[serde(default = "default_probes")]
    pub probes: Vec<Vec<f64>>,
    #[serde(default = "default_sinkhorn_tol")]
    pub sinkhorn_tol: f64,
    #[serde(default = "default_sinkhorn_iters")]
    pub sinkhorn_max_iter: usize,
    /// Conditional samples drawn per probe.
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
}

fn default_roll_scale() -> f64 {
    4.0
}
fn default_roll_noise() -> f64 {
    0.05
}
fn default_reference_n() -> usize {
    2048
}
fn default_probes() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0], vec![0.4, 0.2], vec![-0.3, -0.25]]
}
fn default_sinkhorn_tol() -> f64 {
    1e-8
}
fn default_sinkhorn_iters() -> usize {
    200_000
}
fn default_probe_samples() -> usize {
    4000
}

impl Default for Toy2dSection {
    fn default() -> Self {
        Toy2dSection {
            scale: default_roll_scale(),
            noise_std: default_roll_noise(),
            n_reference: default_reference_n(),
            probes: default_probes(),
            sinkhorn_tol: default_sinkhorn_tol(),
            sinkhorn_max_iter: default_sinkhorn_iters(),
            probe_samples: default_probe_samples(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_grid_lo")]
    pub grid_lo: f64,
    #[serde(default = "default_grid_hi")]
    pub grid_hi: f64,
    #[serde(default = "default_oracle_probes")]
    pub probes: Vec<f64>,
}

fn default_grid_points() -> usize {
    200
}
fn default_grid_lo() -> f64 {
    -7.0
}
fn default_grid_hi() -> f64 {
    8.0
}
fn default_oracle_probes() -> Vec<f64> {
    vec![-1.0, -0.5, 0.0, 0.5, 1.0]
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            grid_points: default_grid_points(),
            grid_lo: default_grid_lo(),
            grid_hi: default_grid_hi(),
            probes: default_oracle_probes(),
        }
    }
}

/// Raw file shape before validation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentKind>,
    epsilon: Option<f64>,
    #[serde(default = "default_dim")]
    dim: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    network: NetworkSection,
    #[serde(default)]
    sampler: SamplerSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    eval: EvalSection,
    #[serde(default)]
    g2g: G2gSection,
    #[serde(default)]
    toy2d: Toy2dSection,
    #[serde(default)]
    oracle: OracleSection,
}

fn default_dim() -> usize {
    2
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("eot_out")
}

/// Fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub epsilon: f64,
    pub dim: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub network: NetworkSection,
    pub sampler: SamplerSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub g2g: G2gSection,
    pub toy2d: Toy2dSection,
    pub oracle: OracleSection,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, EotError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EotError::io(path.display().to_string(), e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, EotError> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| EotError::Config(format!("config parse error: {e}")))?;
    let experiment = raw
        .experiment
        .ok_or_else(|| EotError::Config("missing required field \"experiment\"".into()))?;
    let epsilon = raw
        .epsilon
        .ok_or_else(|| EotError::Config("missing required field \"epsilon\"".into()))?;
    let config = ExperimentConfig {
        experiment,
        epsilon,
        dim: raw.dim,
        seed: raw.seed,
        output_dir: raw.output_dir,
        network: raw.network,
        sampler: raw.sampler,
        train: raw.train,
        eval: raw.eval,
        g2g: raw.g2g,
        toy2d: raw.toy2d,
        oracle: raw.oracle,
    };
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EotError> {
        if !(self.epsilon > 0.0) {
            return Err(EotError::Config(format!(
                "field \"epsilon\" must be positive, got {}",
                self.epsilon
            )));
        }
        if self.dim == 0 {
            return Err(EotError::Config("field \"dim\" must be positive".into()));
        }
        if self.experiment == ExperimentKind::Toy2d && self.dim != 2 {
            return Err(EotError::Config(format!(
                "field \"dim\" must be 2 for the toy2d experiment, got {}",
                self.dim
            )));
        }
        if self.experiment == ExperimentKind::OracleCheck && self.dim != 1 {
            return Err(EotError::Config(format!(
                "field \"dim\" must be 1 for the oracle_check experiment, got {}",
                self.dim
            )));
        }
        if self.experiment == ExperimentKind::G2g
            && !(self.g2g.eigenvalue_lo > 0.0 && self.g2g.eigenvalue_hi >= self.g2g.eigenvalue_lo)
        {
            return Err(EotError::Config(
                "fields \"g2g.eigenvalue_lo/hi\" must satisfy 0 < lo <= hi".into(),
            ));
        }
        if self.experiment == ExperimentKind::Toy2d {
            if self.toy2d.probes.is_empty()
                || self.toy2d.probes.iter().any(|p| p.len() != 2)
            {
                return Err(EotError::Config(
                    "field \"toy2d.probes\" must be a non-empty list of 2D points".into(),
                ));
            }
            if self.toy2d.n_reference < 2 {
                return Err(EotError::Config(
                    "field \"toy2d.n_reference\" must be at least 2".into(),
                ));
            }
        }
        // building the train config runs the per-module validators
        let _ = self.train_config()?;
        Ok(())
    }

    /// Evaluation seed, decoupled from the training stream.
    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or_else(|| eot_core::rng::derive(self.seed, 0xe7a1))
    }

    pub fn network_config(&self) -> Result<NetworkConfig, EotError> {
        let cfg = NetworkConfig {
            input_dim: self.dim,
            hidden_sizes: self.network.hidden_sizes.clone(),
            activation: self.network.activation()?,
            init_scheme: InitScheme::UniformHe,
            seed: eot_core::rng::derive(self.seed, 0x11e7),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            epsilon: self.epsilon,
            eta: self.sampler.eta,
            n_steps: self.sampler.n_steps,
            sigma0: self.sampler.sigma0,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, EotError> {
        let cfg = TrainConfig {
            network: self.network_config()?,
            sampler: self.sampler_config(),
            batch_size: self.train.batch_size,
            n_iterations: self.train.n_iterations,
            lr: self.train.lr,
            lr_final: self.train.lr_final,
            lr_decay_start: self.train.lr_decay_start,
            buffer_capacity: self.train.buffer_capacity,
            buffer_init_prob: self.train.buffer_init_prob,
            seed: self.seed,
            eval_every: self.train.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_g2g_gets_appendix_defaults() {
        let c = parse_config_str("experiment = \"g2g\"\ndim = 2\nepsilon = 1.0\n").unwrap();
        assert_eq!(c.sampler.n_steps, 100);
        assert_eq!(c.sampler.sigma0, 1.0);
        assert_eq!(c.train.batch_size, 1024);
        assert_eq!(c.sampler.eta, 0.1);
        assert_eq!(c.eval.k_test, 700);
    }

    #[test]
    fn missing_epsilon_names_the_field() {
        let err = parse_config_str("experiment = \"g2g\"\n").unwrap_err();
        assert!(err.to_string().contains("epsilon"), "{err}");
    }

    #[test]
    fn toy2d_requires_dim_two() {
        let err =
            parse_config_str("experiment = \"toy2d\"\ndim = 3\nepsilon = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("dim"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err =
            parse_config_str("experiment = \"g2g\"\nepsilon = 1.0\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn bad_activation_rejected() {
        let text = "experiment = \"g2g\"\nepsilon = 1.0\n[network]\nactivation = \"tanh\"\n";
        let err = parse_config_str(text).unwrap_err();
        assert!(err.to_string().contains("tanh"), "{err}");
    }
}
