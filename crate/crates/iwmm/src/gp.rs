//! Gaussian-process warping core: RBF-plus-noise kernel, Gram matrix with a
//! jitter-guarded Cholesky, the GP log marginal likelihood of the observed
//! data given latent coordinates, its gradients with respect to the latent
//! coordinates and the (log) kernel hyperparameters, and the GP predictive
//! for new latent points.
//!
//! The observed data enter only through products with the inverse Gram
//! matrix, so everything is routed through one Cholesky factorization per
//! latent configuration; no explicit determinant is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::math::chol_log_det;

const LN_2PI: f64 = 1.8378770664093453;

/// RBF kernel hyperparameters, stored in log space so samplers can move
/// freely while the exponentiated values stay positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// log signal variance
    pub log_alpha: f64,
    /// log lengthscale
    pub log_ell: f64,
    /// log noise precision
    pub log_beta: f64,
}

impl KernelParams {
    pub fn new(log_alpha: f64, log_ell: f64, log_beta: f64) -> Self {
        Self {
            log_alpha,
            log_ell,
            log_beta,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn ell(&self) -> f64 {
        self.log_ell.exp()
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    /// Noise variance β⁻¹ added on the Gram diagonal.
    pub fn noise_var(&self) -> f64 {
        (-self.log_beta).exp()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.log_alpha, self.log_ell, self.log_beta]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("log_alpha", self.log_alpha),
            ("log_ell", self.log_ell),
            ("log_beta", self.log_beta),
        ] {
            if !v.is_finite() || !v.exp().is_finite() || v.exp() <= 0.0 {
                return Err(Error::Numerical(format!(
                    "kernel parameter {name} = {v} does not exponentiate to a positive finite value"
                )));
            }
        }
        Ok(())
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        // unit signal and lengthscale, noise variance 1e-2
        Self::new(0.0, 0.0, 100.0f64.ln())
    }
}

/// Evaluate the kernel between two latent points.
///
/// `same_index` marks the diagonal of the Gram matrix, where the noise term
/// β⁻¹ is added; two distinct points that happen to coincide do not get it.
pub fn kernel_eval(
    x_n: &DVector<f64>,
    x_m: &DVector<f64>,
    same_index: bool,
    params: &KernelParams,
) -> Result<f64> {
    if x_n.len() != x_m.len() || x_n.is_empty() {
        return Err(Error::Shape(format!(
            "kernel inputs have dimensions {} and {}",
            x_n.len(),
            x_m.len()
        )));
    }
    let sq = (x_n - x_m).norm_squared();
    Ok(rbf(sq, params) + if same_index { params.noise_var() } else { 0.0 })
}

#[inline]
fn rbf(sq_dist: f64, params: &KernelParams) -> f64 {
    let ell = params.ell();
    params.alpha() * (-0.5 * sq_dist / (ell * ell)).exp()
}

/// Gram matrix of a latent configuration together with its Cholesky factor
/// and cached log-determinant.
///
/// `values` always holds the exact kernel matrix; any jitter needed to make
/// the factorization succeed lives only inside `chol`.
pub struct GramMatrix {
    values: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    sq_dists: DMatrix<f64>,
    jitter: f64,
}

impl GramMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Jitter actually added to the diagonal before factorization (0 normally).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Lower factor of the (possibly jittered) Cholesky decomposition.
    pub fn chol_lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Build the Gram matrix for latent coordinates `x` (rows are points).
///
/// If the factorization fails, escalating diagonal jitter 1e-10·α, ×10 per
/// retry (three retries), is attempted before giving up with a conditioning
/// error that carries the attempted jitter levels.
pub fn gram(x: &DMatrix<f64>, params: &KernelParams) -> Result<GramMatrix> {
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(Error::Shape(format!(
            "latent matrix must be nonempty, got {}x{}",
            n,
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("latent coordinates are not finite".into()));
    }

    let mut sq_dists = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq = (x.row(i) - x.row(j)).norm_squared();
            sq_dists[(i, j)] = sq;
            sq_dists[(j, i)] = sq;
        }
    }

    let noise = params.noise_var();
    let mut values = DMatrix::from_fn(n, n, |i, j| rbf(sq_dists[(i, j)], params));
    for i in 0..n {
        values[(i, i)] += noise;
    }

    let mut tried = Vec::new();
    let mut jitter = 0.0;
    let mut attempt = values.clone();
    loop {
        match attempt.cholesky() {
            Some(chol) => {
                let log_det = chol_log_det(chol.l_dirty());
                return Ok(GramMatrix {
                    values,
                    chol,
                    log_det,
                    sq_dists,
                    jitter,
                });
            }
            None if tried.len() < 3 => {
                jitter = if jitter == 0.0 {
                    1e-10 * params.alpha()
                } else {
                    jitter * 10.0
                };
                tried.push(jitter);
                attempt = values.clone();
                for i in 0..n {
                    attempt[(i, i)] += jitter;
                }
            }
            None => return Err(Error::NotPositiveDefinite { tried }),
        }
    }
}

/// GP log marginal likelihood of observations `y` (N×D) at latent `x` (N×Q):
/// the product over output dimensions of independent GP likelihoods.
pub fn gp_log_marginal(y: &DMatrix<f64>, x: &DMatrix<f64>, params: &KernelParams) -> Result<f64> {
    Ok(gp_fit(y, x, params)?.log_marginal)
}

/// One factorized GP likelihood evaluation, reusable for value, gradients
/// and predictions at a fixed latent configuration.
pub struct GpFit {
    pub gram: GramMatrix,
    kinv: DMatrix<f64>,
    /// K⁻¹ Y, N×D
    a: DMatrix<f64>,
    pub log_marginal: f64,
    d_out: usize,
}

pub fn gp_fit(y: &DMatrix<f64>, x: &DMatrix<f64>, params: &KernelParams) -> Result<GpFit> {
    if y.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "observations have {} rows but latent matrix has {}",
            y.nrows(),
            x.nrows()
        )));
    }
    let gram = gram(x, params)?;
    let n = gram.n() as f64;
    let d = y.ncols() as f64;
    let a = gram.solve_matrix(y);
    let trace = y.dot(&a);
    let log_marginal = -0.5 * (d * n * LN_2PI + d * gram.log_det() + trace);
    let kinv = gram.inverse();
    Ok(GpFit {
        gram,
        kinv,
        a,
        log_marginal,
        d_out: y.ncols(),
    })
}

impl GpFit {
    /// dL/dK = −(D/2)·K⁻¹ + ½·K⁻¹YYᵀK⁻¹, shared by both gradients.
    fn grad_wrt_gram(&self) -> DMatrix<f64> {
        let d = self.d_out as f64;
        0.5 * (&self.a * self.a.transpose()) - (0.5 * d) * &self.kinv
    }

    /// RBF part of the Gram matrix (noise removed from the diagonal).
    fn rbf_part(&self, params: &KernelParams) -> DMatrix<f64> {
        let mut e = self.gram.values().clone();
        let noise = params.noise_var();
        for i in 0..e.nrows() {
            e[(i, i)] -= noise;
        }
        e
    }

    /// Gradient of the log marginal with respect to every latent coordinate.
    pub fn grad_x(&self, x: &DMatrix<f64>, params: &KernelParams) -> DMatrix<f64> {
        let w = self.grad_wrt_gram().component_mul(&self.rbf_part(params));
        let ell2 = params.ell() * params.ell();
        let wx = &w * x;
        let row_sums: Vec<f64> = (0..w.nrows()).map(|i| w.row(i).sum()).collect();
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, q| {
            -2.0 / ell2 * (row_sums[i] * x[(i, q)] - wx[(i, q)])
        })
    }

    /// Gradient with respect to (log α, log ℓ, log β).
    pub fn grad_log_theta(&self, params: &KernelParams) -> [f64; 3] {
        let g = self.grad_wrt_gram();
        let e = self.rbf_part(params);
        let w = g.component_mul(&e);
        let ell2 = params.ell() * params.ell();
        let d_log_alpha = w.sum();
        let d_log_ell = w.dot(&self.gram.sq_dists) / ell2;
        let d_log_beta = -g.trace() / params.beta();
        [d_log_alpha, d_log_ell, d_log_beta]
    }

    /// GP predictive at a new latent point: mean over the D outputs and the
    /// shared scalar variance (noise included).
    pub fn predict(
        &self,
        x_star: &DVector<f64>,
        x: &DMatrix<f64>,
        params: &KernelParams,
    ) -> (DVector<f64>, f64) {
        let n = x.nrows();
        let k_star = DVector::from_fn(n, |i, _| {
            rbf((x.row(i).transpose() - x_star).norm_squared(), params)
        });
        let mean = self.a.transpose() * &k_star;
        let var =
            params.alpha() + params.noise_var() - k_star.dot(&self.gram.solve_vector(&k_star));
        (mean, var)
    }
}

/// Gradient of [`gp_log_marginal`] with respect to the latent coordinates.
pub fn gp_log_marginal_grad_x(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    Ok(gp_fit(y, x, params)?.grad_x(x, params))
}

/// Gradient of [`gp_log_marginal`] with respect to (log α, log ℓ, log β).
pub fn gp_log_marginal_grad_theta(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &KernelParams,
) -> Result<[f64; 3]> {
    Ok(gp_fit(y, x, params)?.grad_log_theta(params))
}

/// GP predictive distribution for a new latent point given training data.
pub fn gp_predict(
    x_star: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    params: &KernelParams,
) -> Result<(DVector<f64>, f64)> {
    if x_star.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "query point has dimension {} but latent matrix has {}",
            x_star.len(),
            x.ncols()
        )));
    }
    Ok(gp_fit(y, x, params)?.predict(x_star, x, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| (rng.random::<f64>() - 0.5) * 2.0 * scale)
    }

    #[test]
    fn kernel_eval_known_values() {
        let p = KernelParams::new(0.0, 0.0, 100.0f64.ln());
        let x = DVector::from_vec(vec![0.3, -0.7]);
        assert_relative_eq!(
            kernel_eval(&x, &x, true, &p).unwrap(),
            1.01,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            kernel_eval(&x, &x, false, &p).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        let y = DVector::from_vec(vec![0.3 + (0.5f64).sqrt(), -0.7 - (0.5f64).sqrt()]);
        assert_relative_eq!(
            kernel_eval(&x, &y, false, &p).unwrap(),
            (-0.5f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn kernel_eval_rejects_dimension_mismatch() {
        let p = KernelParams::default();
        let a = DVector::from_vec(vec![1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            kernel_eval(&a, &b, false, &p),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gram_single_point() {
        let p = KernelParams::new(0.0, 0.0, 100.0f64.ln());
        let x = DMatrix::from_row_slice(1, 2, &[0.4, 0.5]);
        let g = gram(&x, &p).unwrap();
        assert_relative_eq!(g.values()[(0, 0)], 1.01, max_relative = 1e-15);
        assert_relative_eq!(g.log_det(), 1.01f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn gram_two_identical_points() {
        let p = KernelParams::new(0.0, 0.0, 0.0);
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.1, 0.2]);
        let g = gram(&x, &p).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(g.values(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn gram_matches_pairwise_kernel_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = KernelParams::new(0.3, -0.2, 3.0);
        let x = rand_matrix(&mut rng, 5, 2, 1.0);
        let g = gram(&x, &p).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect =
                    kernel_eval(&x.row(i).transpose(), &x.row(j).transpose(), i == j, &p).unwrap();
                assert_relative_eq!(g.values()[(i, j)], expect, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn gram_symmetric_and_pd_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = 2 + (trial % 8);
            let q = 1 + (trial % 3);
            let x = rand_matrix(&mut rng, n, q, 2.0);
            // noise variance down to 1e-6
            let p = KernelParams::new(0.0, 0.0, (1e6f64).ln().min(13.8));
            let g = gram(&x, &p).unwrap();
            assert_eq!(g.jitter(), 0.0);
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(g.values()[(i, j)], g.values()[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn log_marginal_single_standardized_point() {
        let p = KernelParams::new(0.0, 0.0, 100.0f64.ln());
        let x = DMatrix::from_row_slice(1, 1, &[0.7]);
        let y = DMatrix::from_row_slice(1, 1, &[0.0]);
        let k11 = 1.01;
        assert_relative_eq!(
            gp_log_marginal(&y, &x, &p).unwrap(),
            -0.5 * (2.0 * std::f64::consts::PI * k11).ln(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn log_marginal_decomposes_over_output_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = KernelParams::new(0.1, -0.3, 2.0);
        let x = rand_matrix(&mut rng, 6, 2, 1.0);
        let y = rand_matrix(&mut rng, 6, 3, 1.0);

        let whole = gp_log_marginal(&y, &x, &p).unwrap();
        let mut sum = 0.0;
        for d in 0..3 {
            sum += gp_log_marginal(&y.columns(d, 1).into_owned(), &x, &p).unwrap();
        }
        assert_relative_eq!(whole, sum, max_relative = 1e-10);

        // duplicated column doubles the value
        let yc = y.columns(0, 1).into_owned();
        let y2 = DMatrix::from_columns(&[y.column(0), y.column(0)]);
        assert_relative_eq!(
            gp_log_marginal(&y2, &x, &p).unwrap(),
            2.0 * gp_log_marginal(&yc, &x, &p).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn log_marginal_matches_dense_mvn_oracle() {
        // independent route: stack the columns, build the ND×ND block-diagonal
        // covariance, use LU determinant and explicit inverse
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let p = KernelParams::new(-0.1, 0.2, 2.5);
        let n = 4;
        let d = 2;
        let x = rand_matrix(&mut rng, n, 2, 1.0);
        let y = rand_matrix(&mut rng, n, d, 1.5);

        let k = gram(&x, &p).unwrap().values().clone();
        let mut big = DMatrix::zeros(n * d, n * d);
        for b in 0..d {
            big.view_mut((b * n, b * n), (n, n)).copy_from(&k);
        }
        let mut v = DVector::zeros(n * d);
        for b in 0..d {
            for i in 0..n {
                v[b * n + i] = y[(i, b)];
            }
        }
        let det = big.determinant();
        let inv = big.clone().try_inverse().unwrap();
        let oracle = -0.5 * ((n * d) as f64 * LN_2PI + det.ln() + (&v.transpose() * inv * &v)[0]);

        assert_relative_eq!(
            gp_log_marginal(&y, &x, &p).unwrap(),
            oracle,
            max_relative = 1e-10
        );
    }

    #[test]
    fn log_marginal_invariant_under_joint_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = KernelParams::new(0.2, 0.1, 3.0);
        let x = rand_matrix(&mut rng, 7, 2, 1.0);
        let y = rand_matrix(&mut rng, 7, 3, 1.0);
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let xp = DMatrix::from_fn(7, 2, |i, j| x[(perm[i], j)]);
        let yp = DMatrix::from_fn(7, 3, |i, j| y[(perm[i], j)]);
        assert_relative_eq!(
            gp_log_marginal(&y, &x, &p).unwrap(),
            gp_log_marginal(&yp, &xp, &p).unwrap(),
            max_relative = 1e-12
        );
    }

    /// Central finite differences of f at x0 with step h, one coordinate at a time.
    fn finite_diff(f: impl Fn(&[f64]) -> f64, x0: &[f64], h: f64) -> Vec<f64> {
        (0..x0.len())
            .map(|i| {
                let mut hi = x0.to_vec();
                let mut lo = x0.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (f(&hi) - f(&lo)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn grad_x_single_point_is_zero() {
        let p = KernelParams::default();
        let x = DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.3]);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let g = gp_log_marginal_grad_x(&y, &x, &p).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = KernelParams::new(0.2, -0.1, 2.3);
        let (n, q, d) = (6, 2, 3);
        let x = rand_matrix(&mut rng, n, q, 1.0);
        let y = rand_matrix(&mut rng, n, d, 1.0);

        let grad = gp_log_marginal_grad_x(&y, &x, &p).unwrap();
        let flat: Vec<f64> = (0..n * q).map(|k| x[(k / q, k % q)]).collect();
        let fd = finite_diff(
            |v| {
                let xm = DMatrix::from_fn(n, q, |i, j| v[i * q + j]);
                gp_log_marginal(&y, &xm, &p).unwrap()
            },
            &flat,
            1e-5,
        );
        for k in 0..n * q {
            let g = grad[(k / q, k % q)];
            assert_relative_eq!(g, fd[k], max_relative = 1e-4, epsilon = 1e-8);
        }
    }

    #[test]
    fn grad_x_finite_at_coincident_points() {
        let p = KernelParams::default();
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.5, 0.5, -1.0, 0.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let g = gp_log_marginal_grad_x(&y, &x, &p).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grad_theta_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (seed_scale, log_ell) in [(1.0, -0.2), (0.01, 3.0)] {
            // second case is poorly conditioned: lengthscale far above data spread
            let p = KernelParams::new(0.1, log_ell, 4.0);
            let x = rand_matrix(&mut rng, 5, 2, seed_scale);
            let y = rand_matrix(&mut rng, 5, 2, 1.0);

            let grad = gp_log_marginal_grad_theta(&y, &x, &p).unwrap();
            let fd = finite_diff(
                |v| gp_log_marginal(&y, &x, &KernelParams::new(v[0], v[1], v[2])).unwrap(),
                &p.to_array(),
                1e-5,
            );
            for k in 0..3 {
                assert_relative_eq!(grad[k], fd[k], max_relative = 1e-4, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn grad_theta_bounded_when_signal_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let p = KernelParams::new(8.0, 0.0, 2.0);
        let x = rand_matrix(&mut rng, 5, 2, 1.0);
        let y = rand_matrix(&mut rng, 5, 2, 1.0);
        let g = gp_log_marginal_grad_theta(&y, &x, &p).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_interpolates_as_noise_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = KernelParams::new(0.0, 0.0, 1e8f64.ln());
        let x = rand_matrix(&mut rng, 5, 2, 1.0);
        let y = rand_matrix(&mut rng, 5, 3, 1.0);
        let (mean, _) = gp_predict(&x.row(2).transpose(), &x, &y, &p).unwrap();
        for d in 0..3 {
            assert_relative_eq!(mean[d], y[(2, d)], epsilon = 1e-3);
        }
    }

    #[test]
    fn predict_reverts_to_prior_far_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = KernelParams::new(0.0, 0.0, 100.0f64.ln());
        let x = rand_matrix(&mut rng, 5, 2, 1.0);
        let y = rand_matrix(&mut rng, 5, 2, 1.0);
        let far = DVector::from_vec(vec![500.0, -500.0]);
        let (mean, var) = gp_predict(&far, &x, &y, &p).unwrap();
        assert!(mean.norm() < 1e-10);
        assert_relative_eq!(var, 1.01, max_relative = 1e-12);
    }

    #[test]
    fn predict_matches_dense_solve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = KernelParams::new(0.3, -0.2, 3.1);
        let x = rand_matrix(&mut rng, 5, 2, 1.0);
        let y = rand_matrix(&mut rng, 5, 2, 1.0);
        let xs = DVector::from_vec(vec![0.25, -0.4]);

        let k = gram(&x, &p).unwrap().values().clone();
        let kinv = k.try_inverse().unwrap();
        let kstar = DVector::from_fn(5, |i, _| {
            kernel_eval(&x.row(i).transpose(), &xs, false, &p).unwrap()
        });
        let mean_oracle = y.transpose() * &kinv * &kstar;
        let var_oracle = p.alpha() + p.noise_var() - (kstar.transpose() * &kinv * &kstar)[0];

        let (mean, var) = gp_predict(&xs, &x, &y, &p).unwrap();
        assert_relative_eq!(mean, mean_oracle, epsilon = 1e-10);
        assert_relative_eq!(var, var_oracle, epsilon = 1e-10);
    }

    #[test]
    fn predict_variance_decreases_toward_training_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = KernelParams::new(0.0, 0.0, 100.0f64.ln());
        let x = rand_matrix(&mut rng, 5, 2, 1.0);
        let y = rand_matrix(&mut rng, 5, 2, 1.0);
        let fit = gp_fit(&y, &x, &p).unwrap();
        let direction = DVector::from_vec(vec![1.0, 1.0]).normalize();
        let mut last = f64::NEG_INFINITY;
        // walk inward from far away toward the data centroid
        for step in 0..10 {
            let radius = 50.0 * (1.0 - step as f64 / 10.0) + 0.5;
            let point = &direction * radius;
            let (_, var) = fit.predict(&point, &x, &p);
            if step == 0 {
                last = var;
            } else {
                assert!(
                    var <= last + 1e-12,
                    "variance rose moving inward: {var} > {last}"
                );
                last = var;
            }
        }
    }
}
