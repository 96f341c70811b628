//! Cross-validation of the closed-form Gaussian plan against the
//! discrete Sinkhorn oracle, and BW-UVP consistency checks.

use eot_core::eval::{bw_uvp, bw_uvp_moments, estimate_moments, MomentSummary};
use eot_core::sampler::CostFunction;
use eot_core::solvers::{cost_matrix, gaussian_eot_plan, sinkhorn, DensityGrid, Grid1D};
use nalgebra::{DMatrix, DVector};

/// Cross-covariance E[x y] of a discrete 1D coupling on grid points.
fn coupling_cross_cov(p: &DMatrix<f64>, xs: &[f64], ys: &[f64]) -> f64 {
    let mut exy = 0.0;
    let mut ex = 0.0;
    let mut ey = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let w = p[(i, j)];
            exy += w * xs[i] * ys[j];
            ex += w * xs[i];
            ey += w * ys[j];
        }
    }
    exy - ex * ey
}

fn sinkhorn_cross_cov_1d(var_x: f64, var_y: f64, epsilon: f64) -> f64 {
    let n = 400;
    // 6 standard deviations per side so the tails are negligible
    let (sx, sy) = (var_x.sqrt(), var_y.sqrt());
    let p = DensityGrid::gaussian(-6.0 * sx, 6.0 * sx, n, 0.0, sx).unwrap();
    let q = DensityGrid::gaussian(-6.0 * sy, 6.0 * sy, n, 0.0, sy).unwrap();
    let a = p.masses();
    let b = q.masses();
    let xs = DMatrix::from_fn(n, 1, |i, _| p.grid.points[i]);
    let ys = DMatrix::from_fn(n, 1, |j, _| q.grid.points[j]);
    let cost = cost_matrix(&CostFunction::QuadraticHalvedL2, &xs, &ys);
    let coupling = sinkhorn(&cost, &a, &b, epsilon, 200_000, 1e-10).unwrap();
    coupling_cross_cov(&coupling.p, &p.grid.points, &q.grid.points)
}

#[test]
fn cross_covariance_matches_sinkhorn_1d() {
    for &(vx, vy) in &[(1.0, 1.0), (1.0, 4.0)] {
        for &eps in &[0.1, 1.0, 10.0] {
            let plan = gaussian_eot_plan(
                &DMatrix::from_element(1, 1, vx),
                &DMatrix::from_element(1, 1, vy),
                eps,
            )
            .unwrap();
            let discrete = sinkhorn_cross_cov_1d(vx, vy, eps);
            assert!(
                (plan.c[(0, 0)] - discrete).abs() < 1e-2,
                "vx={vx} vy={vy} eps={eps}: closed form {} vs sinkhorn {discrete}",
                plan.c[(0, 0)]
            );
        }
    }
}

/// 2D non-diagonal instance on a product grid (moderate resolution here;
/// the acceptance suite runs the full 60x60 version).
fn sinkhorn_cross_cov_2d(
    sigma_x: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
    epsilon: f64,
    n_axis: usize,
    half_width: f64,
) -> DMatrix<f64> {
    let axis = Grid1D::uniform(-half_width, half_width, n_axis).unwrap();
    let n = n_axis * n_axis;

    let mass = |sigma: &DMatrix<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let inv = sigma.clone().try_inverse().unwrap();
        let mut pts = DMatrix::zeros(n, 2);
        let mut m = DVector::zeros(n);
        let mut k = 0;
        for (i, &xi) in axis.points.iter().enumerate() {
            for (j, &xj) in axis.points.iter().enumerate() {
                pts[(k, 0)] = xi;
                pts[(k, 1)] = xj;
                let v = nalgebra::dvector![xi, xj];
                let q = (&v.transpose() * &inv * &v)[(0, 0)];
                m[k] = axis.weights[i] * axis.weights[j] * (-0.5 * q).exp();
                k += 1;
            }
        }
        let s: f64 = m.iter().sum();
        m /= s;
        (pts, m)
    };

    let (xs, a) = mass(sigma_x);
    let (ys, b) = mass(sigma_y);
    let cost = cost_matrix(&CostFunction::QuadraticHalvedL2, &xs, &ys);
    let coupling = sinkhorn(&cost, &a, &b, epsilon, 100_000, 1e-8).unwrap();

    // cross covariance E[x y^T] (means are ~0 by symmetry of the grids)
    let mut c = DMatrix::zeros(2, 2);
    for i in 0..n {
        for j in 0..n {
            let w = coupling.p[(i, j)];
            if w > 1e-300 {
                for r in 0..2 {
                    for s in 0..2 {
                        c[(r, s)] += w * xs[(i, r)] * ys[(j, s)];
                    }
                }
            }
        }
    }
    c
}

#[test]
fn cross_covariance_matches_sinkhorn_2d_nondiagonal() {
    let sigma_x = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]);
    let sigma_y = DMatrix::from_row_slice(2, 2, &[0.9, -0.3, -0.3, 1.2]);
    let eps = 1.0;
    let plan = gaussian_eot_plan(&sigma_x, &sigma_y, eps).unwrap();
    let discrete = sinkhorn_cross_cov_2d(&sigma_x, &sigma_y, eps, 40, 4.5);
    for r in 0..2 {
        for s in 0..2 {
            assert!(
                (plan.c[(r, s)] - discrete[(r, s)]).abs() < 2e-2,
                "C[{r},{s}] closed form {} vs sinkhorn {}",
                plan.c[(r, s)],
                discrete[(r, s)]
            );
        }
    }
}

#[test]
fn sinkhorn_random_instances_marginal_violation() {
    use rand::Rng;
    for &eps in &[0.01f64, 0.1, 1.0, 10.0] {
        let mut stream = eot_core::rng::substream(55, eps.to_bits(), 0);
        let n = 50;
        let cost = DMatrix::from_fn(n, n, |_, _| stream.gen_range(0.0..1.0));
        let raw_a = DVector::from_fn(n, |_, _| stream.gen_range(0.5..1.5));
        let raw_b = DVector::from_fn(n, |_, _| stream.gen_range(0.5..1.5));
        let a = &raw_a / raw_a.sum();
        let b = &raw_b / raw_b.sum();
        let coupling = sinkhorn(&cost, &a, &b, eps, 500_000, 1e-9).unwrap();
        assert!(
            coupling.marginal_violation() <= 1e-9,
            "eps {eps}: violation {}",
            coupling.marginal_violation()
        );
    }
}

#[test]
fn plan_self_samples_have_tiny_bw_uvp() {
    let sigma_x = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.7]);
    let sigma_y = DMatrix::from_row_slice(2, 2, &[0.8, -0.2, -0.2, 1.4]);
    let plan = gaussian_eot_plan(&sigma_x, &sigma_y, 1.0).unwrap();
    let samples = plan.sample(1_000_000, 99).unwrap();
    // drawn exactly from the reference: metric is sampling noise only
    let v = bw_uvp(&samples, &plan).unwrap();
    assert!(v <= 0.05, "self bw_uvp {v}");
    // sanity: marginal of y matches sigma_y
    let m = estimate_moments(&samples).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((m.cov[(2 + i, 2 + j)] - sigma_y[(i, j)]).abs() < 0.02);
        }
    }
}

#[test]
fn bw_uvp_exact_moments_is_zero_and_diagonal_case() {
    let plan = gaussian_eot_plan(&DMatrix::identity(1, 1), &DMatrix::identity(1, 1), 1.0).unwrap();
    let exact = plan.joint_moments();
    assert_eq!(bw_uvp_moments(&exact, &plan).unwrap(), 0.0);

    // hand-checkable 1D joint: reference N(0, diag(1,4)) vs samples from
    // N(0, diag(1,1)) -> W2^2 = (2-1)^2 = 1, Var = 5, metric = 40%
    let mut reference = plan.clone();
    reference.sigma_y = DMatrix::from_element(1, 1, 4.0);
    reference.c = DMatrix::from_element(1, 1, 0.0);
    let moments = MomentSummary::from_parts(
        DVector::zeros(2),
        DMatrix::from_diagonal(&nalgebra::dvector![1.0, 1.0]),
        0,
    );
    let v = bw_uvp_moments(&moments, &reference).unwrap();
    assert!((v - 40.0).abs() < 1e-9, "{v}");
}

#[test]
fn bw_uvp_monotone_along_moment_interpolation() {
    let sigma_x = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.9]);
    let sigma_y = DMatrix::from_row_slice(2, 2, &[1.1, -0.1, -0.1, 0.6]);
    let plan = gaussian_eot_plan(&sigma_x, &sigma_y, 1.0).unwrap();
    let target = plan.joint_moments();
    let start = MomentSummary::from_parts(
        DVector::from_element(4, 0.5),
        DMatrix::identity(4, 4) * 2.0,
        0,
    );
    let mut last = f64::INFINITY;
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let m = MomentSummary::from_parts(
            (1.0 - t) * &start.mean + t * &target.mean,
            (1.0 - t) * &start.cov + t * &target.cov,
            0,
        );
        let v = bw_uvp_moments(&m, &plan).unwrap();
        assert!(v <= last + 1e-9, "not monotone at t={t}: {v} > {last}");
        last = v;
    }
    assert!(last <= 1e-9);
}
