//! End-to-end training smoke test: on a small Gaussian-to-Gaussian
//! instance the learned plan must contract sharply toward the closed-form
//! optimum, measured by BW-UVP against the exact joint moments.

use eot_core::data::DistributionSpec;
use eot_core::eval::bw_uvp;
use eot_core::nn::{Activation, InitScheme, NetworkConfig};
use eot_core::sampler::{CostFunction, SamplerConfig};
use eot_core::solvers::gaussian_eot_plan;
use eot_core::trainer::{infer_joint, train, TrainConfig, TrainState};
use nalgebra::DMatrix;

fn eval_bw_uvp(state: &TrainState, epsilon: f64, seed: u64) -> f64 {
    let n_eval = 10_000;
    let source = DistributionSpec::standard_gaussian(2, seed);
    let x = source.sample_range(0, n_eval).unwrap();
    let cost = CostFunction::QuadraticHalvedL2;
    let joint = infer_joint(&state.net, &cost, &x, epsilon, 300, 0.1, 1.0, seed).unwrap();
    let reference = gaussian_eot_plan(
        &DMatrix::identity(2, 2),
        &DMatrix::identity(2, 2),
        epsilon,
    )
    .unwrap();
    bw_uvp(&joint, &reference).unwrap()
}

#[test]
fn training_contracts_bw_uvp_on_identity_gaussians() {
    let epsilon = 1.0;
    let config = TrainConfig {
        network: NetworkConfig {
            input_dim: 2,
            hidden_sizes: vec![48, 48],
            activation: Activation::Relu,
            init_scheme: InitScheme::UniformHe,
            seed: 7,
        },
        sampler: SamplerConfig { epsilon, eta: 0.1, n_steps: 50, sigma0: 1.0 },
        batch_size: 256,
        n_iterations: 600,
        lr: 1e-3,
        lr_final: Some(1e-4),
        lr_decay_start: Some(300),
        buffer_capacity: 10_000,
        buffer_init_prob: 0.95,
        seed: 21,
        eval_every: 100,
    };
    config.validate().unwrap();

    let cost = CostFunction::QuadraticHalvedL2;
    let source = DistributionSpec::standard_gaussian(2, 1001);
    let target = DistributionSpec::standard_gaussian(2, 1002);

    let initial_state = TrainState::new(&config).unwrap();
    let initial = eval_bw_uvp(&initial_state, epsilon, 555);

    let state = train(&config, &cost, &source, &target, |_| {}).unwrap();
    let final_uvp = eval_bw_uvp(&state, epsilon, 555);

    println!("bw_uvp: initial {initial:.3} -> final {final_uvp:.3}");
    assert!(
        final_uvp <= initial / 5.0,
        "bw_uvp did not contract: initial {initial}, final {final_uvp}"
    );
    // and the end point should be genuinely close to the optimum
    assert!(final_uvp <= 1.0, "final bw_uvp {final_uvp}");

    // training history stays finite and the buffer filled up
    let last = state.history.last().unwrap();
    assert!(last.loss.is_finite() && last.grad_norm.is_finite());
    assert!(state.buffer.len() > 5000);
}
