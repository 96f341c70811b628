//! Training loop for the weak dual objective.
//!
//! Each step draws source and target batches, runs K Langevin steps from
//! replay-buffer initializations to obtain negative samples, forms the
//! surrogate objective
//! `L = -(1/N) sum f(y_neg) + (1/N) sum f(y_pos)`
//! and ascends it with Adam. The negative samples enter the gradient as
//! constants; no gradient flows through the chain.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::data::DistributionSpec;
use crate::error::EotError;
use crate::nn::{
    adam_step, init_network, AdamState, NetworkConfig, ParamGradient, PotentialNetwork,
};
use crate::rng;
use crate::sampler::{
    conditional_energy, sample_conditional, CostFunction, ReplayBuffer, SamplerConfig,
};

const TAG_CHAIN: u64 = 0xc4a1;
const TAG_BUFFER: u64 = 0xbf01;

/// A seeded stream of batches; batch `[start, start+n)` is a pure
/// function of the source, so training runs are reproducible.
pub trait BatchSource: Sync {
    fn dim(&self) -> usize;
    fn batch(&self, start: u64, n: usize) -> Result<DMatrix<f64>, EotError>;
}

impl BatchSource for DistributionSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn batch(&self, start: u64, n: usize) -> Result<DMatrix<f64>, EotError> {
        self.sample_range(start, n)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub sampler: SamplerConfig,
    pub batch_size: usize,
    pub n_iterations: usize,
    pub lr: f64,
    /// Linear decay from `lr` to `lr_final` starting at
    /// `lr_decay_start`; constant lr when unset.
    pub lr_final: Option<f64>,
    pub lr_decay_start: Option<usize>,
    pub buffer_capacity: usize,
    pub buffer_init_prob: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EotError> {
        self.network.validate()?;
        self.sampler.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(EotError::Config("batch_size and eval_every must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(EotError::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if let Some(lf) = self.lr_final {
            if lf > self.lr {
                return Err(EotError::Config(format!(
                    "lr_final {lf} must not exceed lr {}",
                    self.lr
                )));
            }
        }
        Ok(())
    }

    /// Learning rate at a given iteration under the optional linear decay.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        match (self.lr_final, self.lr_decay_start) {
            (Some(lr_final), Some(start)) if self.n_iterations > start => {
                if iteration <= start {
                    self.lr
                } else {
                    let span = (self.n_iterations - start) as f64;
                    let t = ((iteration - start) as f64 / span).min(1.0);
                    self.lr + t * (lr_final - self.lr)
                }
            }
            _ => self.lr,
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_neg_energy: f64,
    pub buffer_size: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: PotentialNetwork,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub iteration: usize,
    pub history: Vec<HistoryEntry>,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self, EotError> {
        config.validate()?;
        let net = init_network(&config.network)?;
        let adam = AdamState::new(&net, config.lr);
        let buffer = ReplayBuffer::new(
            config.buffer_capacity,
            config.buffer_init_prob,
            rng::derive(config.seed, TAG_BUFFER),
        )?;
        Ok(TrainState { net, adam, buffer, iteration: 0, history: Vec::new() })
    }
}

/// `L = -(1/N) sum f(y_neg) + (1/N) sum f(y_pos)`; `y_neg` enter as
/// constants.
pub fn surrogate_loss(
    net: &PotentialNetwork,
    y_neg: &DMatrix<f64>,
    y_pos: &DMatrix<f64>,
) -> Result<f64, EotError> {
    if y_neg.nrows() != y_pos.nrows() {
        return Err(EotError::Shape(format!(
            "negative batch has {} rows, positive batch {}",
            y_neg.nrows(),
            y_pos.nrows()
        )));
    }
    let n = y_neg.nrows() as f64;
    let f_neg = net.forward_batch(y_neg)?.sum();
    let f_pos = net.forward_batch(y_pos)?.sum();
    Ok((-f_neg + f_pos) / n)
}

/// `dL/dtheta = (1/N) sum grad f(y_pos) - (1/N) sum grad f(y_neg)`.
pub fn loss_gradient(
    net: &PotentialNetwork,
    y_neg: &DMatrix<f64>,
    y_pos: &DMatrix<f64>,
) -> Result<ParamGradient, EotError> {
    if y_neg.nrows() != y_pos.nrows() {
        return Err(EotError::Shape(format!(
            "negative batch has {} rows, positive batch {}",
            y_neg.nrows(),
            y_pos.nrows()
        )));
    }
    let n = y_neg.nrows() as f64;
    let w = DVector::from_element(y_pos.nrows(), 1.0 / n);
    let mut grad = net.grad_params_weighted(y_pos, &w)?;
    let neg = net.grad_params_weighted(y_neg, &w)?;
    grad.sub(&neg);
    Ok(grad)
}

/// One body of the training loop.
pub fn train_step(
    state: &mut TrainState,
    cost: &CostFunction,
    source: &dyn BatchSource,
    target: &dyn BatchSource,
    config: &TrainConfig,
) -> Result<(), EotError> {
    let n = config.batch_size;
    let it = state.iteration;
    let cursor = (it * n) as u64;
    let x = source.batch(cursor, n)?;
    let y_pos = target.batch(cursor, n)?;
    let d_y = target.dim();

    let init = state.buffer.init_batch(n, d_y, config.sampler.sigma0);
    let chain_seed = rng::derive(config.seed, TAG_CHAIN.wrapping_add(it as u64));
    let y_neg = sample_conditional(&state.net, cost, &x, &config.sampler, init, chain_seed)
        .map_err(|e| match e {
            EotError::DivergedChain { step, detail } => EotError::DivergedChain {
                step,
                detail: format!("training iteration {it}: {detail}"),
            },
            other => other,
        })?;

    let loss = surrogate_loss(&state.net, &y_neg, &y_pos)?;
    let grad = loss_gradient(&state.net, &y_neg, &y_pos)?;
    let grad_norm = grad.norm();

    state.adam.lr = config.lr_at(it);
    let (net, adam) = adam_step(&state.net, &grad, &state.adam, true)?;
    state.net = net;
    state.adam = adam;
    state.buffer.update(&y_neg);

    let mut energy = 0.0;
    for i in 0..n {
        let xi = DVector::from_iterator(x.ncols(), x.row(i).iter().cloned());
        let yi = DVector::from_iterator(d_y, y_neg.row(i).iter().cloned());
        energy += conditional_energy(&state.net, cost, &xi, &yi, config.sampler.epsilon)?;
    }

    state.iteration += 1;
    state.history.push(HistoryEntry {
        iteration: state.iteration,
        loss,
        grad_norm,
        mean_neg_energy: energy / n as f64,
        buffer_size: state.buffer.len(),
    });
    Ok(())
}

/// Full training run; `callback` sees a read-only snapshot every
/// `eval_every` iterations (and after the final one).
pub fn train(
    config: &TrainConfig,
    cost: &CostFunction,
    source: &dyn BatchSource,
    target: &dyn BatchSource,
    mut callback: impl FnMut(&TrainState),
) -> Result<TrainState, EotError> {
    let mut state = TrainState::new(config)?;
    for _ in 0..config.n_iterations {
        train_step(&mut state, cost, source, target, config)?;
        if state.iteration % config.eval_every == 0 || state.iteration == config.n_iterations {
            callback(&state);
        }
    }
    Ok(state)
}

/// Draw `n_samples` approximate conditional samples at a fixed `x`:
/// independent chains from `N(0, sigma0^2 I)` advanced `k_test` ULA steps
/// at step size `eta_test`.
pub fn infer_conditional(
    net: &PotentialNetwork,
    cost: &CostFunction,
    x: &DVector<f64>,
    epsilon: f64,
    k_test: usize,
    eta_test: f64,
    sigma0: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>, EotError> {
    let d_y = net.input_dim();
    let x_rep = DMatrix::from_fn(n_samples, x.len(), |_, j| x[j]);
    let init = gaussian_init(n_samples, d_y, sigma0, seed);
    let cfg = SamplerConfig { epsilon, eta: eta_test, n_steps: k_test, sigma0 };
    sample_conditional(net, cost, &x_rep, &cfg, init, rng::derive(seed, 0x1fe2))
}

/// Joint plan samples `(x_i, y_i)` with `x_i` the given source points and
/// `y_i` one conditional chain each.
pub fn infer_joint(
    net: &PotentialNetwork,
    cost: &CostFunction,
    x: &DMatrix<f64>,
    epsilon: f64,
    k_test: usize,
    eta_test: f64,
    sigma0: f64,
    seed: u64,
) -> Result<DMatrix<f64>, EotError> {
    let d_y = net.input_dim();
    let n = x.nrows();
    let init = gaussian_init(n, d_y, sigma0, seed);
    let cfg = SamplerConfig { epsilon, eta: eta_test, n_steps: k_test, sigma0 };
    let y = sample_conditional(net, cost, x, &cfg, init, rng::derive(seed, 0x1fe2))?;
    let mut joint = DMatrix::zeros(n, x.ncols() + d_y);
    for i in 0..n {
        for j in 0..x.ncols() {
            joint[(i, j)] = x[(i, j)];
        }
        for j in 0..d_y {
            joint[(i, x.ncols() + j)] = y[(i, j)];
        }
    }
    Ok(joint)
}

/// Counter-based `N(0, sigma0^2 I)` initialization matrix.
pub fn gaussian_init(n: usize, d: usize, sigma0: f64, seed: u64) -> DMatrix<f64> {
    let mut init = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut stream = rng::substream(seed, 0x1217, i as u64);
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut stream);
            init[(i, j)] = sigma0 * z;
        }
    }
    init
}
