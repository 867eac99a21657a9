//! Sparse Gaussian process regression (projected-process approximation).
//!
//! Inducing points are chosen by seeded k-means on the inputs (or taken as
//! the inputs themselves when `m = n`, in which case predictions collapse to
//! exact GP regression). The RBF kernel uses a lengthscale parameterization
//! `k(x, x') = exp(-||x - x'||^2 / (2 l^2))`. Ill-conditioned kernel
//! matrices get escalating jitter, recorded on the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose, Mat};
use crate::rng::Rng;
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgprParams<F> {
    /// Number of inducing points (m <= n).
    pub inducing: usize,
    pub lengthscale: F,
    pub noise_var: F,
    pub seed: u64,
    pub kmeans_iters: usize,
}

impl<F: Real> SgprParams<F> {
    pub fn new(inducing: usize, lengthscale: F, noise_var: F) -> Self {
        Self {
            inducing,
            lengthscale,
            noise_var,
            seed: 0,
            kmeans_iters: 25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgprModel<F> {
    inducing: Mat<F>,
    /// Weights for the predictive mean: mu(x) = k(x, Z) w.
    mean_weights: Vec<F>,
    /// Cholesky of (Kzz + jitter I).
    kzz_chol: Mat<F>,
    /// Cholesky of the whitened system noise_var I + A A^T with
    /// A = L^-1 Kzx; keeps the solve well conditioned even for tiny noise.
    inner_chol: Mat<F>,
    lengthscale: F,
    noise_var: F,
    /// Jitter that had to be added to factor the kernel matrices, if any.
    pub jitter_used: Option<f64>,
}

impl<F: Real> SgprModel<F> {
    pub fn predict_row(&self, row: &[F]) -> F {
        let kz = self.kernel_vector(row);
        kz.iter()
            .zip(&self.mean_weights)
            .fold(F::zero(), |acc, (k, w)| acc + *k * *w)
    }

    /// Predictive mean and variance of the latent function.
    pub fn predict_with_variance(&self, row: &[F]) -> (F, F) {
        let kz = self.kernel_vector(row);
        let mean = kz
            .iter()
            .zip(&self.mean_weights)
            .fold(F::zero(), |acc, (k, w)| acc + *k * *w);
        // var = k** - kz' Kzz^-1 kz + noise * kz' B^-1 kz, with B^-1 applied
        // through the whitened factorization.
        let v1 = solve_lower(&self.kzz_chol, &kz);
        let q = v1.iter().map(|t| *t * *t).sum::<F>();
        let v2 = solve_lower(&self.inner_chol, &v1);
        let s = v2.iter().map(|t| *t * *t).sum::<F>();
        let var = F::one() - q + self.noise_var * s;
        (mean, var.max(F::zero()))
    }

    fn kernel_vector(&self, row: &[F]) -> Vec<F> {
        (0..self.inducing.n_rows())
            .map(|i| rbf_lengthscale(self.lengthscale, self.inducing.row(i), row))
            .collect()
    }

    pub fn n_inducing(&self) -> usize {
        self.inducing.n_rows()
    }
}

pub fn rbf_lengthscale<F: Real>(lengthscale: F, a: &[F], b: &[F]) -> F {
    let mut d2 = F::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        d2 += d * d;
    }
    (-d2 / (F::c(2.0) * lengthscale * lengthscale)).exp()
}

/// Cholesky with escalating jitter: 1e-8, x10 per step, up to 1e-4.
fn cholesky_with_jitter<F: Real>(a: &Mat<F>) -> Result<(Mat<F>, Option<f64>)> {
    if let Some(l) = cholesky(a) {
        return Ok((l, None));
    }
    let mut jitter = 1e-8;
    while jitter <= 1e-4 {
        let mut aj = a.clone();
        for i in 0..a.n_rows() {
            aj[(i, i)] += F::c(jitter);
        }
        if let Some(l) = cholesky(&aj) {
            return Ok((l, Some(jitter)));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(
        "kernel matrix not positive definite even with 1e-4 jitter".to_string(),
    ))
}

pub fn fit_sgpr<F: Real>(x: &Mat<F>, y: &[F], params: &SgprParams<F>) -> Result<SgprModel<F>> {
    let n = x.n_rows();
    let m = params.inducing;
    if m == 0 || m > n {
        return Err(Error::Parameter(format!(
            "inducing count must be in [1, {n}], got {m}"
        )));
    }
    if params.noise_var <= F::zero() || params.lengthscale <= F::zero() {
        return Err(Error::Parameter("noise variance and lengthscale must be positive".to_string()));
    }
    if y.len() != n {
        return Err(Error::Parameter("label length does not match row count".to_string()));
    }

    let inducing = if m == n {
        x.clone()
    } else {
        kmeans(x, m, params.seed, params.kmeans_iters)
    };

    let ell = params.lengthscale;
    let mut kzz = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let k = rbf_lengthscale(ell, inducing.row(i), inducing.row(j));
            kzz[(i, j)] = k;
            kzz[(j, i)] = k;
        }
    }
    let mut kzx = Mat::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            kzx[(i, j)] = rbf_lengthscale(ell, inducing.row(i), x.row(j));
        }
    }

    let (kzz_chol, jitter_a) = cholesky_with_jitter(&kzz)?;

    // Whitened cross-covariance A = L^-1 Kzx, column by column.
    let mut a = Mat::zeros(m, n);
    let mut col = vec![F::zero(); m];
    for j in 0..n {
        for i in 0..m {
            col[i] = kzx[(i, j)];
        }
        let solved = solve_lower(&kzz_chol, &col);
        for i in 0..m {
            a[(i, j)] = solved[i];
        }
    }

    // inner = noise_var I + A A^T; B = L inner L^T, so solving against
    // inner keeps conditioning bounded below by the noise floor.
    let mut inner = a.gram_rows();
    for i in 0..m {
        inner[(i, i)] += params.noise_var;
    }
    let (inner_chol, jitter_b) = cholesky_with_jitter(&inner)?;

    // mean_weights = B^-1 Kzx y = L^-T inner^-1 A y.
    let ay = a.matvec(y);
    let t1 = solve_lower(&inner_chol, &ay);
    let t2 = solve_lower_transpose(&inner_chol, &t1);
    let mean_weights = solve_lower_transpose(&kzz_chol, &t2);

    let jitter_used = match (jitter_a, jitter_b) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(0.0).max(b.unwrap_or(0.0))),
    };

    Ok(SgprModel {
        inducing,
        mean_weights,
        kzz_chol,
        inner_chol,
        lengthscale: ell,
        noise_var: params.noise_var,
        jitter_used,
    })
}

/// Seeded k-means (k-means++ init, Lloyd iterations). Empty clusters keep
/// their previous center.
#[allow(clippy::needless_range_loop)]
fn kmeans<F: Real>(x: &Mat<F>, k: usize, seed: u64, iters: usize) -> Mat<F> {
    let n = x.n_rows();
    let d = x.n_cols();
    let mut rng = Rng::new(seed);

    // k-means++ seeding.
    let mut centers: Vec<Vec<F>> = Vec::with_capacity(k);
    centers.push(x.row(rng.below(n)).to_vec());
    let mut dist2: Vec<F> = (0..n)
        .map(|i| squared_distance(x.row(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: F = dist2.iter().copied().sum();
        let next = if total <= F::zero() {
            rng.below(n)
        } else {
            let target = F::c(rng.next_f64()) * total;
            let mut acc = F::zero();
            let mut pick = n - 1;
            for (i, d2) in dist2.iter().enumerate() {
                acc += *d2;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(x.row(next).to_vec());
        for i in 0..n {
            let d2 = squared_distance(x.row(i), centers.last().unwrap());
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        let mut moved = false;
        for i in 0..n {
            let mut best = F::infinity();
            let mut arg = 0;
            for (c, center) in centers.iter().enumerate() {
                let d2 = squared_distance(x.row(i), center);
                if d2 < best {
                    best = d2;
                    arg = c;
                }
            }
            if assignment[i] != arg {
                assignment[i] = arg;
                moved = true;
            }
        }
        let mut sums = vec![vec![F::zero(); d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(x.row(i)) {
                *s += *v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let cf = F::from_count(counts[c]);
                for (dst, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *dst = *s / cf;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Mat::from_rows(centers)
}

fn squared_distance<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}
