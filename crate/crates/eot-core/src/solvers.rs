//! Independent oracles for the learned plans.
//!
//! - log-domain Sinkhorn for discrete entropic couplings,
//! - trapezoidal quadrature of the weak transform `-eps log Z(f, x)`,
//!   the weak dual objective and the duality-gap identity,
//! - the closed-form Gaussian entropic plan for centered Gaussian
//!   marginals with halved quadratic cost.
//!
//! Epsilon convention of the Gaussian closed form: the cross-covariance
//! is derived from the Gibbs conditional `mu_x^f(y) ∝ exp((f(y) -
//! 0.5||x-y||^2)/eps)` with a quadratic optimal potential, which makes it
//! consistent with discrete Sinkhorn run at the same `eps` on the same
//! halved quadratic cost. The cross-validation tests pin this down
//! numerically.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::EotError;
use crate::linalg;
use crate::rng;
use crate::sampler::CostFunction;

// ---------------------------------------------------------------------------
// Grids

/// Strictly increasing 1D points with trapezoidal quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid1D {
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self, EotError> {
        if n < 2 || !(hi > lo) {
            return Err(EotError::Config(format!(
                "grid needs at least 2 points and hi > lo, got n={n}, [{lo}, {hi}]"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let points: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let weights: Vec<f64> = (0..n)
            .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
            .collect();
        Ok(Grid1D { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Product of 1D grids; nodes are the cartesian product.
#[derive(Debug, Clone)]
pub struct ProductGrid {
    pub axes: Vec<Grid1D>,
}

impl ProductGrid {
    pub fn new(axes: Vec<Grid1D>) -> Self {
        ProductGrid { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `k` in row-major (last axis fastest) order with its product
    /// quadrature weight; `true` marks boundary nodes.
    pub fn node(&self, k: usize) -> (Vec<f64>, f64, bool) {
        let mut idx = k;
        let mut point = vec![0.0; self.dim()];
        let mut weight = 1.0;
        let mut boundary = false;
        for a in (0..self.dim()).rev() {
            let n = self.axes[a].len();
            let i = idx % n;
            idx /= n;
            point[a] = self.axes[a].points[i];
            weight *= self.axes[a].weights[i];
            boundary |= i == 0 || i == n - 1;
        }
        (point, weight, boundary)
    }
}

/// A 1D grid carrying a (not necessarily normalized) density.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub grid: Grid1D,
    pub density: Vec<f64>,
}

impl DensityGrid {
    pub fn new(grid: Grid1D, density: Vec<f64>) -> Result<Self, EotError> {
        if density.len() != grid.len() {
            return Err(EotError::Shape(format!(
                "{} density values on a {}-point grid",
                density.len(),
                grid.len()
            )));
        }
        if density.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(EotError::Config("density values must be finite and >= 0".into()));
        }
        Ok(DensityGrid { grid, density })
    }

    pub fn gaussian(lo: f64, hi: f64, n: usize, mean: f64, std: f64) -> Result<Self, EotError> {
        let grid = Grid1D::uniform(lo, hi, n)?;
        let norm = 1.0 / (std * (2.0 * std::f64::consts::PI).sqrt());
        let density = grid
            .points
            .iter()
            .map(|&x| norm * (-0.5 * ((x - mean) / std).powi(2)).exp())
            .collect();
        DensityGrid::new(grid, density)
    }

    /// Normalized cell masses (trapezoid weight times density).
    pub fn masses(&self) -> DVector<f64> {
        let mut m = DVector::from_fn(self.grid.len(), |i, _| {
            self.grid.weights[i] * self.density[i]
        });
        let s: f64 = m.iter().sum();
        m /= s;
        m
    }
}

// ---------------------------------------------------------------------------
// Sinkhorn

/// Discrete entropic coupling with its marginals and regularization.
#[derive(Debug, Clone)]
pub struct DiscreteCoupling {
    /// `[N x M]` plan weights summing to 1.
    pub p: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub epsilon: f64,
    pub cost: DMatrix<f64>,
    /// Achieved marginal L1 violation.
    pub violation: f64,
    pub iterations: usize,
}

impl DiscreteCoupling {
    /// Conditional plan `P_{i.} / a_i`, a probability vector.
    pub fn conditional_row(&self, i: usize) -> Result<DVector<f64>, EotError> {
        if i >= self.p.nrows() {
            return Err(EotError::Shape(format!(
                "row {i} out of range for {} rows",
                self.p.nrows()
            )));
        }
        Ok(DVector::from_fn(self.p.ncols(), |j, _| self.p[(i, j)] / self.a[i]))
    }

    pub fn marginal_violation(&self) -> f64 {
        let row_err: f64 = (0..self.p.nrows())
            .map(|i| (self.p.row(i).sum() - self.a[i]).abs())
            .sum();
        let col_err: f64 = (0..self.p.ncols())
            .map(|j| (self.p.column(j).sum() - self.b[j]).abs())
            .sum();
        row_err.max(col_err)
    }
}

fn logsumexp(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn iterations until the max marginal L1 violation
/// drops below `tol`.
pub fn sinkhorn(
    cost: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<DiscreteCoupling, EotError> {
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(EotError::Shape(format!(
            "cost is {n}x{m} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if epsilon <= 0.0 {
        return Err(EotError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    for v in a.iter().chain(b.iter()) {
        if !(*v > 0.0) {
            return Err(EotError::Config("marginals must be strictly positive".into()));
        }
    }
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=max_iter {
        for i in 0..n {
            let lse = logsumexp((0..m).map(|j| (g[j] - cost[(i, j)]) / epsilon));
            f[i] = epsilon * (log_a[i] - lse);
        }
        for j in 0..m {
            let lse = logsumexp((0..n).map(|i| (f[i] - cost[(i, j)]) / epsilon));
            g[j] = epsilon * (log_b[j] - lse);
        }
        // after the g update, column marginals are exact; the violation is
        // carried by the rows
        let mut row_err = 0.0;
        for i in 0..n {
            let s: f64 = (0..m)
                .map(|j| ((f[i] + g[j] - cost[(i, j)]) / epsilon).exp())
                .sum();
            row_err += (s - a[i]).abs();
        }
        violation = row_err;
        iterations = it;
        if violation <= tol {
            break;
        }
    }
    if violation > tol {
        return Err(EotError::SinkhornNonConvergence { max_iter, violation });
    }
    let p = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost[(i, j)]) / epsilon).exp());
    Ok(DiscreteCoupling {
        p,
        a: a.clone(),
        b: b.clone(),
        epsilon,
        cost: cost.clone(),
        violation,
        iterations,
    })
}

/// Cost matrix `c(x_i, y_j)` from two point sets (rows are points).
pub fn cost_matrix(
    cost: &CostFunction,
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
) -> DMatrix<f64> {
    DMatrix::from_fn(xs.nrows(), ys.nrows(), |i, j| {
        let x: Vec<f64> = xs.row(i).iter().cloned().collect();
        let y: Vec<f64> = ys.row(j).iter().cloned().collect();
        cost.value(&x, &y)
    })
}

// ---------------------------------------------------------------------------
// Gaussian closed form

/// Closed-form optimal entropic plan between centered Gaussians for the
/// halved quadratic cost. With `A = Sigma_x^{1/2}` and
/// `U = (A Sigma_y A + eps^2/4 I)^{1/2} - eps/2 I`, the conditional plan
/// is `y | x ~ N(S x, eps S)` with `S = A^{-1} U A^{-1}` and the
/// cross-covariance is `C = A U A^{-1}`.
#[derive(Debug, Clone)]
pub struct GaussianEotPlan {
    pub sigma_x: DMatrix<f64>,
    pub sigma_y: DMatrix<f64>,
    /// `[D_x x D_y]` cross-covariance.
    pub c: DMatrix<f64>,
    /// Symmetric conditional map: `E[y | x] = S x`, `Cov[y | x] = eps S`.
    pub s: DMatrix<f64>,
    pub epsilon: f64,
}

pub fn gaussian_eot_plan(
    sigma_x: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
    epsilon: f64,
) -> Result<GaussianEotPlan, EotError> {
    if epsilon <= 0.0 {
        return Err(EotError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let d = sigma_x.nrows();
    if sigma_y.nrows() != d || !sigma_x.is_square() || !sigma_y.is_square() {
        return Err(EotError::Matrix(
            "sigma_x and sigma_y must be square with equal dimensions".into(),
        ));
    }
    let a = linalg::sym_sqrt(sigma_x)?;
    let a_inv = linalg::sym_inv_sqrt(sigma_x)?;
    // guard: sigma_y must be PSD too
    let _ = linalg::sym_sqrt(sigma_y)?;
    let inner = linalg::symmetrize(&(&a * sigma_y * &a))
        + DMatrix::from_diagonal_element(d, d, epsilon * epsilon / 4.0);
    let u = linalg::sym_sqrt(&inner)? - DMatrix::from_diagonal_element(d, d, epsilon / 2.0);
    let s = linalg::symmetrize(&(&a_inv * &u * &a_inv));
    let c = &a * &u * &a_inv;
    Ok(GaussianEotPlan {
        sigma_x: sigma_x.clone(),
        sigma_y: sigma_y.clone(),
        c,
        s,
        epsilon,
    })
}

impl GaussianEotPlan {
    pub fn dim(&self) -> usize {
        self.sigma_x.nrows()
    }

    /// Joint mean (zero) and block covariance `[[Sx, C], [C^T, Sy]]`.
    pub fn joint_moments(&self) -> crate::eval::MomentSummary {
        let d = self.dim();
        let mut cov = DMatrix::zeros(2 * d, 2 * d);
        cov.view_mut((0, 0), (d, d)).copy_from(&self.sigma_x);
        cov.view_mut((0, d), (d, d)).copy_from(&self.c);
        cov.view_mut((d, 0), (d, d)).copy_from(&self.c.transpose());
        cov.view_mut((d, d), (d, d)).copy_from(&self.sigma_y);
        crate::eval::MomentSummary::from_parts(DVector::zeros(2 * d), cov, 0)
    }

    /// Exact joint draws `(x, y)`: `x ~ N(0, Sigma_x)`,
    /// `y | x ~ N(S x, eps S)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>, EotError> {
        let d = self.dim();
        let lx = nalgebra::Cholesky::new(self.sigma_x.clone())
            .ok_or_else(|| EotError::Matrix("sigma_x is not positive definite".into()))?
            .l();
        let cond_cov = linalg::symmetrize(&(self.epsilon * &self.s));
        let ly = nalgebra::Cholesky::new(cond_cov.clone())
            .map(|c| c.l())
            .unwrap_or(linalg::sym_sqrt(&cond_cov)?);
        let mut out = DMatrix::zeros(n, 2 * d);
        for i in 0..n {
            let mut stream = rng::substream(seed, 0x9a55, i as u64);
            let zx = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut stream));
            let zy = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut stream));
            let x = &lx * zx;
            let y = &self.s * &x + &ly * zy;
            for j in 0..d {
                out[(i, j)] = x[j];
                out[(i, d + j)] = y[j];
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Quadrature of the weak transform and dual objective

/// Value of a quadrature together with the boundary-tail diagnostic.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    /// True when the integrand at every boundary node is below `1e-12`
    /// of its maximum.
    pub tail_ok: bool,
}

/// `-eps log Z(f, x)` with `Z(f, x) = ∫ exp((f(y) - c(x,y))/eps) dy`
/// evaluated by trapezoidal log-sum-exp on `grid`.
pub fn log_partition_quadrature(
    f: &dyn Fn(&[f64]) -> f64,
    cost: &CostFunction,
    x: &DVector<f64>,
    grid: &ProductGrid,
    epsilon: f64,
) -> Result<Quadrature, EotError> {
    if epsilon <= 0.0 {
        return Err(EotError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let xs: Vec<f64> = x.iter().cloned().collect();
    let n = grid.len();
    let mut terms = Vec::with_capacity(n);
    let mut max_all = f64::NEG_INFINITY;
    let mut max_boundary = f64::NEG_INFINITY;
    for k in 0..n {
        let (y, w, boundary) = grid.node(k);
        let exponent = (f(&y) - cost.value(&xs, &y)) / epsilon;
        if boundary {
            max_boundary = max_boundary.max(exponent);
        }
        max_all = max_all.max(exponent);
        terms.push(exponent + w.ln());
    }
    let log_z = logsumexp(terms.into_iter());
    Ok(Quadrature {
        value: -epsilon * log_z,
        tail_ok: max_boundary < max_all + (1e-12f64).ln(),
    })
}

/// Weak dual objective
/// `F(f) = -eps ∫ log Z(f, x) dP(x) + ∫ f(y) dQ(y)`, both integrals by
/// grid quadrature. 1D marginals.
pub fn weak_dual_value(
    f: &dyn Fn(f64) -> f64,
    p_grid: &DensityGrid,
    q_grid: &DensityGrid,
    cost: &CostFunction,
    epsilon: f64,
) -> Result<Quadrature, EotError> {
    let f_nd = |y: &[f64]| f(y[0]);
    let y_axis = ProductGrid::new(vec![q_grid.grid.clone()]);
    let p_mass = p_grid.masses();
    let mut first = 0.0;
    let mut tail_ok = true;
    for (i, &x) in p_grid.grid.points.iter().enumerate() {
        let q = log_partition_quadrature(&f_nd, cost, &DVector::from_element(1, x), &y_axis, epsilon)?;
        tail_ok &= q.tail_ok;
        first += p_mass[i] * q.value;
    }
    let q_mass = q_grid.masses();
    let second: f64 = q_grid
        .grid
        .points
        .iter()
        .enumerate()
        .map(|(j, &y)| q_mass[j] * f(y))
        .sum();
    Ok(Quadrature { value: first + second, tail_ok })
}

/// Discretized primal value (transport plus eps times negative
/// conditional entropy, with the differential-entropy cell-width
/// correction) and the Sinkhorn plan that attains it.
pub fn eot_value_1d(
    p_grid: &DensityGrid,
    q_grid: &DensityGrid,
    cost: &CostFunction,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(f64, DiscreteCoupling), EotError> {
    let a = p_grid.masses();
    let b = q_grid.masses();
    let xs = DMatrix::from_fn(p_grid.grid.len(), 1, |i, _| p_grid.grid.points[i]);
    let ys = DMatrix::from_fn(q_grid.grid.len(), 1, |j, _| q_grid.grid.points[j]);
    let c = cost_matrix(cost, &xs, &ys);
    let coupling = sinkhorn(&c, &a, &b, epsilon, max_iter, tol)?;
    let transport: f64 = coupling
        .p
        .iter()
        .zip(c.iter())
        .map(|(&p, &cv)| p * cv)
        .sum();
    // -eps * sum_i a_i H(pi(.|x_i)) with conditional density
    // P_ij / (a_i * dy_j)
    let mut neg_entropy = 0.0;
    for i in 0..coupling.p.nrows() {
        for j in 0..coupling.p.ncols() {
            let p = coupling.p[(i, j)];
            if p > 0.0 {
                neg_entropy += p * (p / (a[i] * q_grid.grid.weights[j])).ln();
            }
        }
    }
    Ok((transport + epsilon * neg_entropy, coupling))
}

/// Both sides of the duality-gap identity
/// `F* - F(f) = eps KL(pi* || pi^f)` on a 1D instance.
#[derive(Debug, Clone, Copy)]
pub struct KlGap {
    /// `F* - F(f)`.
    pub lhs: f64,
    /// `eps * KL(pi* || pi^f)`.
    pub rhs: f64,
    pub primal_value: f64,
    pub dual_value: f64,
}

pub fn kl_gap_check(
    f: &dyn Fn(f64) -> f64,
    p_grid: &DensityGrid,
    q_grid: &DensityGrid,
    cost: &CostFunction,
    epsilon: f64,
) -> Result<KlGap, EotError> {
    let (primal_value, optimal) = eot_value_1d(p_grid, q_grid, cost, epsilon, 200_000, 1e-11)?;
    let dual = weak_dual_value(f, p_grid, q_grid, cost, epsilon)?;
    let lhs = primal_value - dual.value;

    // assemble pi^f on the grid: row i is the normalized Gibbs conditional
    let a = p_grid.masses();
    let mut kl = 0.0;
    for i in 0..p_grid.grid.len() {
        let x = p_grid.grid.points[i];
        let logits: Vec<f64> = q_grid
            .grid
            .points
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                (f(y) - cost.value(&[x], &[y])) / epsilon + q_grid.grid.weights[j].ln()
            })
            .collect();
        let log_norm = logsumexp(logits.iter().cloned());
        for (j, &logit) in logits.iter().enumerate() {
            let p_star = optimal.p[(i, j)];
            if p_star > 0.0 {
                let log_pf = a[i].ln() + logit - log_norm;
                kl += p_star * (p_star.ln() - log_pf);
            }
        }
    }
    Ok(KlGap { lhs, rhs: epsilon * kl, primal_value, dual_value: dual.value })
}

/// Spread over probe points of
/// `v^{c,eps}(x) - (-eps log Z(f, x))` with `v = f + eps E_Q`; the
/// difference must be an x-independent constant.
pub fn semidual_consistency_check(
    f: &dyn Fn(f64) -> f64,
    q_grid: &DensityGrid,
    cost: &CostFunction,
    epsilon: f64,
    x_probes: &[f64],
) -> Result<f64, EotError> {
    if x_probes.is_empty() {
        return Err(EotError::Config("need at least one probe point".into()));
    }
    if q_grid.density.iter().any(|&q| q <= 0.0) {
        return Err(EotError::Config(
            "Q density must be strictly positive on the grid".into(),
        ));
    }
    let q_mass = q_grid.masses();
    let y_axis = ProductGrid::new(vec![q_grid.grid.clone()]);
    let f_nd = |y: &[f64]| f(y[0]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in x_probes {
        // v^{c,eps}(x) = -eps log ∫ exp((v(y) - c(x,y))/eps) dQ(y),
        // v = f + eps E_Q, E_Q = -log q
        let terms = q_grid.grid.points.iter().enumerate().map(|(j, &y)| {
            let v = f(y) - epsilon * q_grid.density[j].ln();
            (v - cost.value(&[x], &[y])) / epsilon + q_mass[j].ln()
        });
        let v_ceps = -epsilon * logsumexp(terms);
        let z =
            log_partition_quadrature(&f_nd, cost, &DVector::from_element(1, x), &y_axis, epsilon)?;
        let diff = v_ceps - z.value;
        lo = lo.min(diff);
        hi = hi.max(diff);
    }
    Ok(hi - lo)
}
