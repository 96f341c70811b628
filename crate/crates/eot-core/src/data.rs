//! Seeded samplers for the experiment distributions.
//!
//! Sampling is counter-based: sample `i` of a spec is a pure function of
//! `(spec, seed, i)`, so drawing a batch of `n` then `m` equals drawing
//! `n + m` and splitting.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::EotError;
use crate::rng;

const TAG_GAUSS: u64 = 0x6a55;
const TAG_ROLL: u64 = 0x5011;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionKind {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Swissroll { scale: f64, noise_std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: DistributionKind,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn standard_gaussian(dim: usize, seed: u64) -> Self {
        let cov = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        DistributionSpec {
            dim,
            kind: DistributionKind::Gaussian { mean: vec![0.0; dim], cov },
            seed,
        }
    }

    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>, seed: u64) -> Self {
        let dim = mean.len();
        DistributionSpec {
            dim,
            kind: DistributionKind::Gaussian {
                mean: mean.iter().cloned().collect(),
                cov: (0..dim)
                    .map(|i| cov.row(i).iter().cloned().collect())
                    .collect(),
            },
            seed,
        }
    }

    pub fn swissroll(scale: f64, noise_std: f64, seed: u64) -> Self {
        DistributionSpec {
            dim: 2,
            kind: DistributionKind::Swissroll { scale, noise_std },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EotError> {
        match &self.kind {
            DistributionKind::Gaussian { mean, cov } => {
                if mean.len() != self.dim
                    || cov.len() != self.dim
                    || cov.iter().any(|r| r.len() != self.dim)
                {
                    return Err(EotError::Config(format!(
                        "gaussian spec dimensions inconsistent with dim={}",
                        self.dim
                    )));
                }
            }
            DistributionKind::Swissroll { scale, noise_std } => {
                if self.dim != 2 {
                    return Err(EotError::Config("swissroll requires dim = 2".into()));
                }
                if !(*scale > 0.0) || *noise_std < 0.0 {
                    return Err(EotError::Config(
                        "swissroll needs scale > 0 and noise_std >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Samples rows `[start, start + n)` of the infinite seeded stream.
    pub fn sample_range(&self, start: u64, n: usize) -> Result<DMatrix<f64>, EotError> {
        self.validate()?;
        match &self.kind {
            DistributionKind::Gaussian { mean, cov } => {
                let covm = DMatrix::from_fn(self.dim, self.dim, |i, j| cov[i][j]);
                let chol = nalgebra::Cholesky::new(covm).ok_or_else(|| {
                    EotError::Matrix("gaussian covariance is not positive definite".into())
                })?;
                let l = chol.l();
                let mut out = DMatrix::zeros(n, self.dim);
                for i in 0..n {
                    let mut stream = rng::substream(self.seed, TAG_GAUSS, start + i as u64);
                    let z = DVector::from_fn(self.dim, |_, _| stream.sample(StandardNormal));
                    let v = &l * z;
                    for j in 0..self.dim {
                        out[(i, j)] = mean[j] + v[j];
                    }
                }
                Ok(out)
            }
            DistributionKind::Swissroll { scale, noise_std } => {
                let mut out = DMatrix::zeros(n, 2);
                for i in 0..n {
                    let mut stream = rng::substream(self.seed, TAG_ROLL, start + i as u64);
                    let t = stream.gen_range(1.5 * std::f64::consts::PI..4.5 * std::f64::consts::PI);
                    let (s, c) = t.sin_cos();
                    let nx: f64 = stream.sample(StandardNormal);
                    let ny: f64 = stream.sample(StandardNormal);
                    out[(i, 0)] = t * c / scale + noise_std * nx;
                    out[(i, 1)] = t * s / scale + noise_std * ny;
                }
                Ok(out)
            }
        }
    }

    pub fn sample(&self, n: usize) -> Result<DMatrix<f64>, EotError> {
        self.sample_range(0, n)
    }
}

/// Spec for a random pair of covariance matrices for the
/// Gaussian-to-Gaussian experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairSpec {
    pub dim: usize,
    pub seed: u64,
    pub eigenvalue_lo: f64,
    pub eigenvalue_hi: f64,
}

impl Default for GaussianPairSpec {
    fn default() -> Self {
        GaussianPairSpec { dim: 2, seed: 0, eigenvalue_lo: 0.5, eigenvalue_hi: 2.0 }
    }
}

/// Random SPD matrix `Q diag(lambda) Q^T` with `Q` from a sign-fixed QR of
/// a Gaussian matrix and `lambda` uniform in `[lo, hi]`.
fn random_spd(dim: usize, lo: f64, hi: f64, seed: u64, tag: u64) -> DMatrix<f64> {
    let mut stream = rng::substream(seed, tag, 0);
    let g = DMatrix::from_fn(dim, dim, |_, _| stream.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let lambda = DVector::from_fn(dim, |_, _| stream.gen_range(lo..=hi));
    let m = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    // exact symmetry
    0.5 * (&m + m.transpose())
}

/// Deterministic pair `(Sigma_x, Sigma_y)` for a spec.
pub fn make_random_gaussian_pair(spec: &GaussianPairSpec) -> Result<(DMatrix<f64>, DMatrix<f64>), EotError> {
    if !(spec.eigenvalue_lo > 0.0 && spec.eigenvalue_lo <= spec.eigenvalue_hi) {
        return Err(EotError::Config(format!(
            "eigenvalue range must satisfy 0 < lo <= hi, got [{}, {}]",
            spec.eigenvalue_lo, spec.eigenvalue_hi
        )));
    }
    if spec.dim == 0 {
        return Err(EotError::Config("dimension must be positive".into()));
    }
    let sx = random_spd(spec.dim, spec.eigenvalue_lo, spec.eigenvalue_hi, spec.seed, 0x5157_0001);
    let sy = random_spd(spec.dim, spec.eigenvalue_lo, spec.eigenvalue_hi, spec.seed, 0x5157_0002);
    Ok((sx, sy))
}
