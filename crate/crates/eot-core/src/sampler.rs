//! Unadjusted Langevin sampling from the conditional Gibbs distributions
//! `mu_x^f(y) ∝ exp((f(y) - c(x,y)) / eps)`.
//!
//! The drift is `(eta / 2 eps) * d/dy [f(y) - c(x,y)]` with `sqrt(eta)`
//! noise, so the chain targets the conditional plan induced by the
//! current potential. Chains never contribute to a parameter gradient;
//! their outputs enter the loss as constants.
//!
//! Noise discipline: the per-chain, per-step normal draws come from RNG
//! substreams keyed by `(seed, chain index, step index)`, so parallel and
//! sequential evaluation produce identical output.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::EotError;
use crate::nn::PotentialNetwork;
use crate::rng;

/// Any |coordinate| beyond this aborts the chain as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Transport cost `c(x, y)` with an analytic gradient in `y`.
#[derive(Clone)]
pub enum CostFunction {
    /// `c(x,y) = 0.5 * ||x - y||^2`, gradient in y is `y - x`.
    /// Requires `D_x == D_y`.
    QuadraticHalvedL2,
    /// User-supplied cost; `value(x, y)` and `grad_y(x, y)`.
    Custom {
        value: std::sync::Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
        grad_y: std::sync::Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>,
    },
}

impl std::fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostFunction::QuadraticHalvedL2 => write!(f, "QuadraticHalvedL2"),
            CostFunction::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl CostFunction {
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            CostFunction::QuadraticHalvedL2 => {
                debug_assert_eq!(x.len(), y.len());
                0.5 * x
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            }
            CostFunction::Custom { value, .. } => value(x, y),
        }
    }

    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            CostFunction::QuadraticHalvedL2 => {
                y.iter().zip(x.iter()).map(|(b, a)| b - a).collect()
            }
            CostFunction::Custom { grad_y, .. } => grad_y(x, y),
        }
    }
}

/// Langevin dynamics settings: entropic coefficient, step size, number of
/// steps and the std of the basic-noise initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub epsilon: f64,
    pub eta: f64,
    pub n_steps: usize,
    pub sigma0: f64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), EotError> {
        if !(self.epsilon > 0.0 && self.eta > 0.0 && self.sigma0 > 0.0) {
            return Err(EotError::Config(format!(
                "sampler parameters must be strictly positive: eps={}, eta={}, sigma0={}",
                self.epsilon, self.eta, self.sigma0
            )));
        }
        Ok(())
    }
}

/// Conditional energy `E(y) = (c(x,y) - f(y)) / eps`.
pub fn conditional_energy(
    net: &PotentialNetwork,
    cost: &CostFunction,
    x: &DVector<f64>,
    y: &DVector<f64>,
    epsilon: f64,
) -> Result<f64, EotError> {
    if epsilon <= 0.0 {
        return Err(EotError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let f = net.forward(y)?;
    Ok((cost.value(x.as_slice(), y.as_slice()) - f) / epsilon)
}

/// Chain states paired with their conditioning points.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainBatch {
    /// `[N x D_y]` current states.
    pub y: DMatrix<f64>,
    /// `[N x D_x]` conditioning points.
    pub x: DMatrix<f64>,
}

impl ChainBatch {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self, EotError> {
        if y.nrows() != x.nrows() {
            return Err(EotError::Shape(format!(
                "chain batch row mismatch: {} states vs {} conditioning points",
                y.nrows(),
                x.nrows()
            )));
        }
        Ok(ChainBatch { y, x })
    }
}

fn check_row_finite(row: &[f64], step: usize, chain: usize) -> Result<(), EotError> {
    for &v in row {
        if !v.is_finite() || v.abs() > DIVERGENCE_BOUND {
            return Err(EotError::DivergedChain {
                step,
                detail: format!("chain {chain} reached coordinate value {v}"),
            });
        }
    }
    Ok(())
}

/// One ULA update applied rowwise with externally supplied noise:
/// `y <- y + (eta / 2 eps) * d/dy [f(y) - c(x,y)] + sqrt(eta) * z`.
///
/// `step_index` only labels the divergence diagnostic.
pub fn ula_step(
    batch: &ChainBatch,
    net: &PotentialNetwork,
    cost: &CostFunction,
    config: &SamplerConfig,
    noise: &DMatrix<f64>,
    step_index: usize,
) -> Result<ChainBatch, EotError> {
    config.validate()?;
    let (n, d_y) = (batch.y.nrows(), batch.y.ncols());
    if noise.nrows() != n || noise.ncols() != d_y {
        return Err(EotError::Shape(format!(
            "noise must be {n}x{d_y}, got {}x{}",
            noise.nrows(),
            noise.ncols()
        )));
    }
    if d_y != net.input_dim() {
        return Err(EotError::Shape(format!(
            "chain dimension {d_y} does not match network input {}",
            net.input_dim()
        )));
    }
    let scale = config.eta / (2.0 * config.epsilon);
    let noise_scale = config.eta.sqrt();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y_row: Vec<f64> = batch.y.row(i).iter().cloned().collect();
            let x_row: Vec<f64> = batch.x.row(i).iter().cloned().collect();
            let grad_f = net.grad_input_slice(&y_row);
            let grad_c = cost.grad_y(&x_row, &y_row);
            (0..d_y)
                .map(|j| {
                    y_row[j] + scale * (grad_f[j] - grad_c[j]) + noise_scale * noise[(i, j)]
                })
                .collect()
        })
        .collect();

    let mut y_next = DMatrix::zeros(n, d_y);
    for (i, row) in rows.iter().enumerate() {
        check_row_finite(row, step_index, i)?;
        for j in 0..d_y {
            y_next[(i, j)] = row[j];
        }
    }
    ChainBatch::new(y_next, batch.x.clone())
}

/// Standard-normal noise matrix for step `step` drawn from the per-chain
/// substreams of `seed`.
pub fn step_noise(seed: u64, step: u64, n: usize, d_y: usize) -> DMatrix<f64> {
    let mut noise = DMatrix::zeros(n, d_y);
    for i in 0..n {
        let mut stream = rng::substream(seed, i as u64, step);
        for j in 0..d_y {
            noise[(i, j)] = stream.sample(StandardNormal);
        }
    }
    noise
}

/// Run `config.n_steps` ULA steps from `init`, conditioning row `i` on
/// `x` row `i`. Deterministic in `seed`; independent of thread count.
pub fn sample_conditional(
    net: &PotentialNetwork,
    cost: &CostFunction,
    x: &DMatrix<f64>,
    config: &SamplerConfig,
    init: DMatrix<f64>,
    seed: u64,
) -> Result<DMatrix<f64>, EotError> {
    config.validate()?;
    let mut batch = ChainBatch::new(init, x.clone())?;
    for k in 0..config.n_steps {
        let noise = step_noise(seed, k as u64, batch.y.nrows(), batch.y.ncols());
        batch = ula_step(&batch, net, cost, config, &noise, k)?;
    }
    Ok(batch.y)
}

/// Persistent pool of past negative samples used to warm-start chains.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub entries: Vec<DVector<f64>>,
    /// Probability of initializing a chain from the buffer instead of
    /// basic noise.
    pub init_from_buffer_prob: f64,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, init_from_buffer_prob: f64, seed: u64) -> Result<Self, EotError> {
        if capacity == 0 {
            return Err(EotError::Config("replay buffer capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&init_from_buffer_prob) {
            return Err(EotError::Config(format!(
                "init_from_buffer_prob must be in [0,1], got {init_from_buffer_prob}"
            )));
        }
        Ok(ReplayBuffer {
            capacity,
            entries: Vec::new(),
            init_from_buffer_prob,
            rng: rng::substream(seed, 0xb0ff, 0),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Draw `n` chain initializations: each row comes from the buffer with
    /// probability `p` (falling through to noise while the buffer is
    /// empty) and from `N(0, sigma0^2 I)` otherwise.
    pub fn init_batch(&mut self, n: usize, d_y: usize, sigma0: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, d_y);
        for i in 0..n {
            let from_buffer = !self.entries.is_empty()
                && self.rng.gen::<f64>() < self.init_from_buffer_prob;
            if from_buffer {
                let idx = self.rng.gen_range(0..self.entries.len());
                let entry = &self.entries[idx];
                for j in 0..d_y.min(entry.len()) {
                    out[(i, j)] = entry[j];
                }
            } else {
                for j in 0..d_y {
                    let z: f64 = self.rng.sample(StandardNormal);
                    out[(i, j)] = sigma0 * z;
                }
            }
        }
        out
    }

    /// Append final chain states; over capacity, evict uniformly-random
    /// existing entries.
    pub fn update(&mut self, y_final: &DMatrix<f64>) {
        for i in 0..y_final.nrows() {
            let row = DVector::from_iterator(y_final.ncols(), y_final.row(i).iter().cloned());
            if self.entries.len() < self.capacity {
                self.entries.push(row);
            } else {
                let idx = self.rng.gen_range(0..self.entries.len());
                self.entries[idx] = row;
            }
        }
    }
}
