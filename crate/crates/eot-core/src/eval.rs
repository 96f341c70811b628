//! Plan metrics: empirical moments, squared Bures-Wasserstein distance
//! between Gaussian coarsenings, and the normalized BW-UVP percentage.

use nalgebra::{DMatrix, DVector};

use crate::error::EotError;
use crate::linalg;
use crate::solvers::GaussianEotPlan;

/// Empirical mean / covariance summary of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn estimate_moments(samples: &DMatrix<f64>) -> Result<MomentSummary, EotError> {
    let n = samples.nrows();
    if n < 2 {
        return Err(EotError::InsufficientSamples { need: 2, got: n });
    }
    let d = samples.ncols();
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for j in 0..d {
            mean[j] += samples[(i, j)];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = samples[(i, a)] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (samples[(i, b)] - mean[b]);
            }
        }
    }
    cov /= (n - 1) as f64;
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    Ok(MomentSummary { mean, cov, n })
}

impl MomentSummary {
    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Self {
        MomentSummary { mean, cov, n }
    }
}

/// `W_2^2` between `N(mu1, S1)` and `N(mu2, S2)`:
/// `||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})`,
/// clamped at 0 against roundoff.
pub fn bures_wasserstein_sq(g1: &MomentSummary, g2: &MomentSummary) -> Result<f64, EotError> {
    if g1.mean.len() != g2.mean.len() {
        return Err(EotError::Shape(format!(
            "dimension mismatch: {} vs {}",
            g1.mean.len(),
            g2.mean.len()
        )));
    }
    let dm = &g1.mean - &g2.mean;
    let s1_half = linalg::sym_sqrt(&g1.cov)?;
    let inner = linalg::symmetrize(&(&s1_half * &g2.cov * &s1_half));
    let cross = linalg::sym_sqrt(&inner)?;
    let val = dm.norm_squared() + g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
    Ok(val.max(0.0))
}

/// BW-UVP in percent: `100 / (0.5 * Var(pi2)) * W_2^2(...)` with
/// `Var(pi2)` the trace of the reference joint covariance.
pub fn bw_uvp(plan_samples: &DMatrix<f64>, reference: &GaussianEotPlan) -> Result<f64, EotError> {
    let ref_moments = reference.joint_moments();
    if plan_samples.ncols() != ref_moments.mean.len() {
        return Err(EotError::Shape(format!(
            "plan samples have dimension {}, reference joint is {}",
            plan_samples.ncols(),
            ref_moments.mean.len()
        )));
    }
    let sample_moments = estimate_moments(plan_samples)?;
    bw_uvp_moments(&sample_moments, reference)
}

/// BW-UVP from precomputed moments (no sampling noise).
pub fn bw_uvp_moments(
    moments: &MomentSummary,
    reference: &GaussianEotPlan,
) -> Result<f64, EotError> {
    let ref_moments = reference.joint_moments();
    let w2 = bures_wasserstein_sq(moments, &ref_moments)?;
    let total_var = ref_moments.cov.trace();
    Ok(100.0 / (0.5 * total_var) * w2)
}

/// Compare learned conditional samples against a weighted discrete
/// reference: `(||mean gap||_2, Frobenius covariance gap)`.
pub fn conditional_compare(
    learned: &DMatrix<f64>,
    reference_weights: &DVector<f64>,
    reference_points: &DMatrix<f64>,
) -> Result<(f64, f64), EotError> {
    if reference_weights.len() != reference_points.nrows() {
        return Err(EotError::Shape(format!(
            "{} reference weights vs {} reference points",
            reference_weights.len(),
            reference_points.nrows()
        )));
    }
    let d = learned.ncols();
    if reference_points.ncols() != d {
        return Err(EotError::Shape(format!(
            "learned dimension {d} vs reference dimension {}",
            reference_points.ncols()
        )));
    }
    let learned_m = estimate_moments(learned)?;

    // weighted moments of the discrete reference
    let mut mean = DVector::zeros(d);
    for i in 0..reference_points.nrows() {
        for j in 0..d {
            mean[j] += reference_weights[i] * reference_points[(i, j)];
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..reference_points.nrows() {
        for a in 0..d {
            let da = reference_points[(i, a)] - mean[a];
            for b in 0..d {
                cov[(a, b)] += reference_weights[i] * da * (reference_points[(i, b)] - mean[b]);
            }
        }
    }

    let mean_gap = (&learned_m.mean - &mean).norm();
    let cov_gap = (&learned_m.cov - &cov).norm();
    Ok((mean_gap, cov_gap))
}
