//! Experiment runners: Gaussian-to-Gaussian benchmark, the 2D
//! Gaussian-to-swissroll study, and the 1D oracle self-checks, plus the
//! result/checkpoint persistence they share.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eot_core::data::{make_random_gaussian_pair, DistributionSpec, GaussianPairSpec};
use eot_core::eval::{bw_uvp, conditional_compare, estimate_moments};
use eot_core::nn::PotentialNetwork;
use eot_core::rng;
use eot_core::sampler::CostFunction;
use eot_core::solvers::{
    cost_matrix, gaussian_eot_plan, kl_gap_check, semidual_consistency_check, sinkhorn,
    DensityGrid,
};
use eot_core::trainer::{infer_conditional, infer_joint, train, TrainState};
use eot_core::EotError;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::svg::scatter_svg;

/// Build identifier recorded with every result row.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

pub const RESULTS_HEADER: &str = "experiment,epsilon,dim,metric,value,seconds,seed,build";

/// One row of the results table.
#[derive(Debug, Clone)]
pub struct ResultRecord {
    pub experiment: &'static str,
    pub epsilon: f64,
    pub dim: usize,
    pub metric: String,
    pub value: f64,
    pub seconds: f64,
    pub seed: u64,
}

impl ResultRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{},{}",
            self.experiment,
            self.epsilon,
            self.dim,
            self.metric,
            self.value,
            self.seconds,
            self.seed,
            BUILD_ID
        )
    }
}

// ---------------------------------------------------------------------------
// Persistence

/// Write `contents` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, contents: &str) -> Result<(), EotError> {
    let display = path.display().to_string();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| EotError::io(&display, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    std::fs::write(&tmp, contents).map_err(|e| EotError::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| EotError::io(&display, e))?;
    Ok(())
}

pub fn results_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn save_results(records: &[ResultRecord], path: &Path) -> Result<(), EotError> {
    for r in records {
        if !r.value.is_finite() {
            return Err(EotError::Config(format!(
                "metric {} is not finite: {}",
                r.metric, r.value
            )));
        }
    }
    atomic_write(path, &results_csv(records))
}

pub fn save_checkpoint(net: &PotentialNetwork, path: &Path) -> Result<(), EotError> {
    atomic_write(path, &net.to_checkpoint_json())
}

pub fn load_checkpoint(path: &Path) -> Result<PotentialNetwork, EotError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EotError::io(path.display().to_string(), e))?;
    PotentialNetwork::from_checkpoint_json(&text)
}

fn history_csv(state: &TrainState) -> String {
    let mut out = String::from("iteration,loss,grad_norm,mean_neg_energy,buffer_size\n");
    for h in &state.history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            h.iteration, h.loss, h.grad_norm, h.mean_neg_energy, h.buffer_size
        );
    }
    out
}

/// Artifacts produced by a run, for callers that want them in memory.
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub state: Option<TrainState>,
    /// Present for toy2d runs; carries the plot clouds.
    pub toy2d_eval: Option<Toy2dEval>,
}

// ---------------------------------------------------------------------------
// Gaussian-to-Gaussian

pub fn run_g2g(config: &ExperimentConfig) -> Result<RunOutput, EotError> {
    let start = Instant::now();
    let pair_spec = GaussianPairSpec {
        dim: config.dim,
        seed: config.g2g.pair_seed.unwrap_or(config.seed),
        eigenvalue_lo: config.g2g.eigenvalue_lo,
        eigenvalue_hi: config.g2g.eigenvalue_hi,
    };
    let (sigma_x, sigma_y) = make_random_gaussian_pair(&pair_spec)?;
    let plan = gaussian_eot_plan(&sigma_x, &sigma_y, config.epsilon)?;

    let cost = CostFunction::QuadraticHalvedL2;
    let source = DistributionSpec::gaussian(
        DVector::zeros(config.dim),
        sigma_x.clone(),
        rng::derive(config.seed, 0x50c0),
    );
    let target = DistributionSpec::gaussian(
        DVector::zeros(config.dim),
        sigma_y.clone(),
        rng::derive(config.seed, 0x7a06),
    );
    let train_config = config.train_config()?;
    let state = train(&train_config, &cost, &source, &target, |s| {
        if let Some(h) = s.history.last() {
            eprintln!(
                "iter {:5}  loss {:+.4e}  grad {:.3e}  buffer {}",
                h.iteration, h.loss, h.grad_norm, h.buffer_size
            );
        }
    })?;
    let train_seconds = start.elapsed().as_secs_f64();

    // evaluation stream seeded separately from training
    let eval_seed = config.eval_seed();
    let eval_source = DistributionSpec::gaussian(
        DVector::zeros(config.dim),
        sigma_x.clone(),
        rng::derive(eval_seed, 0x50c1),
    );
    let x_eval = eval_source.sample_range(0, config.eval.n_samples)?;
    let joint = infer_joint(
        &state.net,
        &cost,
        &x_eval,
        config.epsilon,
        config.eval.k_test,
        config.eval.eta_test,
        config.sampler.sigma0,
        eval_seed,
    )?;
    let uvp = bw_uvp(&joint, &plan)?;
    let seconds = start.elapsed().as_secs_f64();

    let record = |metric: &str, value: f64| ResultRecord {
        experiment: ExperimentKind::G2g.id(),
        epsilon: config.epsilon,
        dim: config.dim,
        metric: metric.to_string(),
        value,
        seconds,
        seed: config.seed,
    };
    let last = state.history.last();
    let records = vec![
        record("bw_uvp", uvp),
        record("final_loss", last.map_or(f64::NAN, |h| h.loss)),
        record("final_grad_norm", last.map_or(f64::NAN, |h| h.grad_norm)),
        record("train_seconds", train_seconds),
    ];
    Ok(RunOutput { records, state: Some(state), toy2d_eval: None })
}

// ---------------------------------------------------------------------------
// Toy 2D: Gaussian to swissroll

pub fn run_toy2d(config: &ExperimentConfig) -> Result<RunOutput, EotError> {
    let start = Instant::now();
    let cost = CostFunction::QuadraticHalvedL2;
    let source =
        DistributionSpec::standard_gaussian(2, rng::derive(config.seed, 0x50c0));
    let target = DistributionSpec::swissroll(
        config.toy2d.scale,
        config.toy2d.noise_std,
        rng::derive(config.seed, 0x7a06),
    );
    let train_config = config.train_config()?;
    let state = train(&train_config, &cost, &source, &target, |s| {
        if let Some(h) = s.history.last() {
            eprintln!(
                "iter {:5}  loss {:+.4e}  grad {:.3e}  buffer {}",
                h.iteration, h.loss, h.grad_norm, h.buffer_size
            );
        }
    })?;
    let train_seconds = start.elapsed().as_secs_f64();

    let eval = evaluate_toy2d(config, &state.net)?;
    let seconds = start.elapsed().as_secs_f64();
    let records = finalize_toy2d_records(config, &eval, seconds, train_seconds, &state);
    Ok(RunOutput { records, state: Some(state), toy2d_eval: Some(eval) })
}

/// Everything the toy2d evaluation produces (metrics and plot clouds).
pub struct Toy2dEval {
    pub probe_gaps: Vec<(f64, f64)>,
    pub marginal_mean_gap: f64,
    pub marginal_cov_gap: f64,
    pub source_cloud: DMatrix<f64>,
    pub target_cloud: DMatrix<f64>,
    pub fitted_marginal: DMatrix<f64>,
    pub probe_clouds: Vec<DMatrix<f64>>,
}

/// Compare the learned conditionals and marginal against the discrete
/// Sinkhorn reference on an empirical instance whose first source rows
/// are the probe points.
pub fn evaluate_toy2d(
    config: &ExperimentConfig,
    net: &PotentialNetwork,
) -> Result<Toy2dEval, EotError> {
    let cost = CostFunction::QuadraticHalvedL2;
    let eval_seed = config.eval_seed();
    let eval_source =
        DistributionSpec::standard_gaussian(2, rng::derive(eval_seed, 0x50c1));
    let eval_target = DistributionSpec::swissroll(
        config.toy2d.scale,
        config.toy2d.noise_std,
        rng::derive(eval_seed, 0x7a07),
    );

    let n_ref = config.toy2d.n_reference;
    let probes = &config.toy2d.probes;
    if probes.len() > n_ref {
        return Err(EotError::Config(format!(
            "{} probes exceed the {n_ref}-point reference instance",
            probes.len()
        )));
    }
    // empirical source cloud whose first rows are the probes, matched with
    // an empirical target cloud of the same size
    let filler = eval_source.sample_range(0, n_ref - probes.len())?;
    let mut xs = DMatrix::zeros(n_ref, 2);
    for (i, p) in probes.iter().enumerate() {
        xs[(i, 0)] = p[0];
        xs[(i, 1)] = p[1];
    }
    for i in 0..filler.nrows() {
        xs[(probes.len() + i, 0)] = filler[(i, 0)];
        xs[(probes.len() + i, 1)] = filler[(i, 1)];
    }
    let ys = eval_target.sample_range(0, n_ref)?;
    let a = DVector::from_element(n_ref, 1.0 / n_ref as f64);
    let c = cost_matrix(&cost, &xs, &ys);
    let coupling = sinkhorn(&c, &a, &a, config.epsilon, config.toy2d.sinkhorn_max_iter,
        config.toy2d.sinkhorn_tol)?;

    let mut probe_gaps = Vec::with_capacity(probes.len());
    let mut probe_clouds = Vec::with_capacity(probes.len());
    for (i, p) in probes.iter().enumerate() {
        let x = DVector::from_row_slice(p);
        let learned = infer_conditional(
            net,
            &cost,
            &x,
            config.epsilon,
            config.eval.k_test,
            config.eval.eta_test,
            config.sampler.sigma0,
            config.toy2d.probe_samples,
            rng::derive(eval_seed, 0xdab0 + i as u64),
        )?;
        let row = coupling.conditional_row(i)?;
        probe_gaps.push(conditional_compare(&learned, &row, &ys)?);
        probe_clouds.push(learned);
    }

    // fitted marginal: the y-part of joint draws over fresh source points
    let x_eval = eval_source
        .sample_range(n_ref as u64, config.eval.n_samples)?;
    let joint = infer_joint(
        net,
        &cost,
        &x_eval,
        config.epsilon,
        config.eval.k_test,
        config.eval.eta_test,
        config.sampler.sigma0,
        rng::derive(eval_seed, 0x3a19),
    )?;
    let fitted = joint.columns(2, 2).into_owned();
    let fitted_m = estimate_moments(&fitted)?;
    let target_m = estimate_moments(&ys)?;
    let marginal_mean_gap = (&fitted_m.mean - &target_m.mean).norm();
    let marginal_cov_gap = (&fitted_m.cov - &target_m.cov).norm();

    Ok(Toy2dEval {
        probe_gaps,
        marginal_mean_gap,
        marginal_cov_gap,
        source_cloud: xs,
        target_cloud: ys,
        fitted_marginal: fitted,
        probe_clouds,
    })
}

fn finalize_toy2d_records(
    config: &ExperimentConfig,
    eval: &Toy2dEval,
    seconds: f64,
    train_seconds: f64,
    state: &TrainState,
) -> Vec<ResultRecord> {
    let record = |metric: String, value: f64| ResultRecord {
        experiment: ExperimentKind::Toy2d.id(),
        epsilon: config.epsilon,
        dim: config.dim,
        metric,
        value,
        seconds,
        seed: config.seed,
    };
    let mut records = Vec::new();
    for (i, (mean_gap, cov_gap)) in eval.probe_gaps.iter().enumerate() {
        records.push(record(format!("probe{i}_mean_gap"), *mean_gap));
        records.push(record(format!("probe{i}_cov_gap"), *cov_gap));
    }
    records.push(record("marginal_mean_gap".into(), eval.marginal_mean_gap));
    records.push(record("marginal_cov_gap".into(), eval.marginal_cov_gap));
    records.push(record(
        "final_loss".into(),
        state.history.last().map_or(f64::NAN, |h| h.loss),
    ));
    records.push(record("train_seconds".into(), train_seconds));
    records
}

/// Write the Figure-style scatter plots for a toy2d evaluation.
pub fn write_toy2d_plots(eval: &Toy2dEval, dir: &Path) -> Result<Vec<PathBuf>, EotError> {
    let mut paths = Vec::new();
    let mut emit = |name: String, points: &DMatrix<f64>, title: &str, color: &str| {
        let path = dir.join(name);
        atomic_write(&path, &scatter_svg(points, title, color))?;
        paths.push(path);
        Ok::<(), EotError>(())
    };
    emit("source.svg".into(), &eval.source_cloud, "source samples x ~ P", "#1f77b4")?;
    emit("target.svg".into(), &eval.target_cloud, "target samples y ~ Q", "#d62728")?;
    emit(
        "fitted_marginal.svg".into(),
        &eval.fitted_marginal,
        "fitted plan marginal",
        "#2ca02c",
    )?;
    for (i, cloud) in eval.probe_clouds.iter().enumerate() {
        emit(
            format!("conditional_probe{i}.svg"),
            cloud,
            &format!("conditional samples at probe {i}"),
            "#9467bd",
        )?;
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Oracle self-checks

/// Seeded random piecewise-linear test potential: a sum of a few hinge
/// functions with bounded coefficients.
pub fn random_piecewise_linear(seed: u64) -> impl Fn(f64) -> f64 {
    let mut stream = rng::substream(seed, 0x91e3, 0);
    let mut knots = Vec::new();
    for _ in 0..4 {
        let k: f64 = stream.gen_range(-2.0..3.0);
        let w: f64 = stream.gen_range(-0.4..0.4);
        knots.push((k, w));
    }
    let base: f64 = stream.gen_range(-0.3..0.3);
    move |y: f64| base * y + knots.iter().map(|&(k, w)| w * (y - k).max(0.0)).sum::<f64>()
}

pub fn run_oracle_check(config: &ExperimentConfig) -> Result<RunOutput, EotError> {
    let start = Instant::now();
    let cost = CostFunction::QuadraticHalvedL2;
    let o = &config.oracle;
    let p_grid = DensityGrid::gaussian(o.grid_lo, o.grid_hi, o.grid_points, 0.0, 1.0)?;
    let q_grid = DensityGrid::gaussian(o.grid_lo, o.grid_hi, o.grid_points, 1.0, 1.0)?;

    let f_zero = |_: f64| 0.0;
    let f_pwl = random_piecewise_linear(config.seed);

    let mut entries: Vec<(String, f64)> = Vec::new();
    for (name, f) in [("f0", &f_zero as &dyn Fn(f64) -> f64), ("pwl", &f_pwl)] {
        let gap = kl_gap_check(f, &p_grid, &q_grid, &cost, config.epsilon)?;
        let rel = (gap.lhs - gap.rhs).abs() / gap.lhs.abs().max(1e-12);
        entries.push((format!("kl_gap_{name}_lhs"), gap.lhs));
        entries.push((format!("kl_gap_{name}_rhs"), gap.rhs));
        entries.push((format!("kl_gap_{name}_rel_err"), rel));
        let spread =
            semidual_consistency_check(f, &q_grid, &cost, config.epsilon, &o.probes)?;
        entries.push((format!("semidual_spread_{name}"), spread));
    }
    let seconds = start.elapsed().as_secs_f64();
    let records = entries
        .into_iter()
        .map(|(metric, value)| ResultRecord {
            experiment: ExperimentKind::OracleCheck.id(),
            epsilon: config.epsilon,
            dim: 1,
            metric,
            value,
            seconds,
            seed: config.seed,
        })
        .collect();
    Ok(RunOutput { records, state: None, toy2d_eval: None })
}

// ---------------------------------------------------------------------------
// Top-level run plumbing shared by the binary and the test harness

/// Run the configured experiment end to end and persist all artifacts
/// into `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRecord>, EotError> {
    let out = match config.experiment {
        ExperimentKind::G2g => run_g2g(config)?,
        ExperimentKind::Toy2d => {
            let out = run_toy2d(config)?;
            if let Some(eval) = &out.toy2d_eval {
                write_toy2d_plots(eval, &config.output_dir)?;
            }
            out
        }
        ExperimentKind::OracleCheck => run_oracle_check(config)?,
    };
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| EotError::io(config.output_dir.display().to_string(), e))?;
    save_results(&out.records, &config.output_dir.join("results.csv"))?;
    if let Some(state) = &out.state {
        save_checkpoint(&state.net, &config.output_dir.join("checkpoint.json"))?;
        atomic_write(&config.output_dir.join("history.csv"), &history_csv(state))?;
    }
    Ok(out.records)
}

/// Re-run only the evaluation half of an experiment against an existing
/// checkpoint. Results go to stdout-friendly records; nothing is trained.
pub fn eval_experiment(
    config: &ExperimentConfig,
    net: &PotentialNetwork,
) -> Result<Vec<ResultRecord>, EotError> {
    let start = Instant::now();
    match config.experiment {
        ExperimentKind::G2g => {
            let pair_spec = GaussianPairSpec {
                dim: config.dim,
                seed: config.g2g.pair_seed.unwrap_or(config.seed),
                eigenvalue_lo: config.g2g.eigenvalue_lo,
                eigenvalue_hi: config.g2g.eigenvalue_hi,
            };
            let (sigma_x, sigma_y) = make_random_gaussian_pair(&pair_spec)?;
            let plan = gaussian_eot_plan(&sigma_x, &sigma_y, config.epsilon)?;
            let eval_seed = config.eval_seed();
            let eval_source = DistributionSpec::gaussian(
                DVector::zeros(config.dim),
                sigma_x,
                rng::derive(eval_seed, 0x50c1),
            );
            let x_eval = eval_source.sample_range(0, config.eval.n_samples)?;
            let joint = infer_joint(
                net,
                &CostFunction::QuadraticHalvedL2,
                &x_eval,
                config.epsilon,
                config.eval.k_test,
                config.eval.eta_test,
                config.sampler.sigma0,
                eval_seed,
            )?;
            let uvp = bw_uvp(&joint, &plan)?;
            Ok(vec![ResultRecord {
                experiment: ExperimentKind::G2g.id(),
                epsilon: config.epsilon,
                dim: config.dim,
                metric: "bw_uvp".into(),
                value: uvp,
                seconds: start.elapsed().as_secs_f64(),
                seed: config.seed,
            }])
        }
        ExperimentKind::Toy2d => {
            let eval = evaluate_toy2d(config, net)?;
            let seconds = start.elapsed().as_secs_f64();
            let record = |metric: String, value: f64| ResultRecord {
                experiment: ExperimentKind::Toy2d.id(),
                epsilon: config.epsilon,
                dim: config.dim,
                metric,
                value,
                seconds,
                seed: config.seed,
            };
            let mut records = Vec::new();
            for (i, (mean_gap, cov_gap)) in eval.probe_gaps.iter().enumerate() {
                records.push(record(format!("probe{i}_mean_gap"), *mean_gap));
                records.push(record(format!("probe{i}_cov_gap"), *cov_gap));
            }
            records.push(record("marginal_mean_gap".into(), eval.marginal_mean_gap));
            records.push(record("marginal_cov_gap".into(), eval.marginal_cov_gap));
            Ok(records)
        }
        ExperimentKind::OracleCheck => Ok(run_oracle_check(config)?.records),
    }
}
