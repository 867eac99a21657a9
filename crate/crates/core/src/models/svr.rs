//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved by sequential pairwise optimization over the 2n
//! variables (alpha_plus, alpha_minus), picking the maximal-violating pair
//! each step. Termination is a KKT gap below `tol`; the bias is the midpoint
//! of the KKT bounds at convergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvrParams<F> {
    /// Box constraint on each dual variable.
    pub cost: F,
    /// Half-width of the insensitive tube.
    pub epsilon: F,
    /// RBF kernel coefficient: k(x, x') = exp(-gamma * ||x - x'||^2).
    pub gamma: F,
    /// KKT gap at which optimization stops.
    pub tol: F,
    /// Cap on pair updates; hitting it returns the best iterate flagged
    /// unconverged.
    pub max_iter: usize,
}

impl<F: Real> SvrParams<F> {
    pub fn new(cost: F, epsilon: F, gamma: F) -> Self {
        Self {
            cost,
            epsilon,
            gamma,
            tol: F::c(1e-3),
            max_iter: 500_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvrModel<F> {
    /// Support vectors with their dual coefficient (alpha+ - alpha-).
    pub support: Vec<(Vec<F>, F)>,
    pub bias: F,
    pub gamma: F,
    pub converged: bool,
    /// Value of the minimized dual objective at termination.
    pub dual_objective: F,
    /// Largest KKT violation at termination.
    pub kkt_gap: F,
}

impl<F: Real> SvrModel<F> {
    pub fn predict_row(&self, row: &[F]) -> F {
        let mut y = self.bias;
        for (sv, beta) in &self.support {
            y += *beta * rbf(self.gamma, sv, row);
        }
        y
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }
}

pub fn rbf<F: Real>(gamma: F, a: &[F], b: &[F]) -> F {
    let mut d2 = F::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        d2 += d * d;
    }
    (-gamma * d2).exp()
}

/// Fit epsilon-SVR on `x` (rows = samples) against `y`.
pub fn fit_svr<F: Real>(x: &Mat<F>, y: &[F], params: &SvrParams<F>) -> Result<SvrModel<F>> {
    let n = x.n_rows();
    if n < 10 {
        return Err(Error::Parameter(format!("svr needs at least 10 rows, found {n}")));
    }
    if y.len() != n {
        return Err(Error::Parameter("label length does not match row count".to_string()));
    }
    if params.cost <= F::zero() || params.epsilon < F::zero() || params.gamma <= F::zero() {
        return Err(Error::Parameter("svr hyperparameters must be positive".to_string()));
    }

    // Kernel cache.
    let mut kernel = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = rbf(params.gamma, x.row(i), x.row(j));
            kernel[(i, j)] = k;
            kernel[(j, i)] = k;
        }
    }

    // 2n dual variables: k < n are alpha_plus (z = +1), k >= n alpha_minus
    // (z = -1). Minimize 1/2 a^T Q a + p^T a subject to z^T a = 0,
    // 0 <= a <= C, with Q_kl = z_k z_l K(phi(k), phi(l)).
    let m = 2 * n;
    let c = params.cost;
    let sign = |k: usize| if k < n { F::one() } else { -F::one() };
    let phi = |k: usize| if k < n { k } else { k - n };
    let p: Vec<F> = (0..m)
        .map(|k| {
            if k < n {
                params.epsilon - y[k]
            } else {
                params.epsilon + y[k - n]
            }
        })
        .collect();

    let mut alpha = vec![F::zero(); m];
    let mut grad = p.clone();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut kkt_gap;

    loop {
        // First index: maximal -z_k grad_k over the up set. Second index:
        // among the low set below that bound, the one with the largest
        // second-order gain (b^2 / a); the plain minimum still defines the
        // stopping gap.
        let mut m_up = F::neg_infinity();
        let mut i_up = usize::MAX;
        let mut m_low = F::infinity();
        for k in 0..m {
            let zk = sign(k);
            let v = -zk * grad[k];
            let in_up = (zk > F::zero() && alpha[k] < c) || (zk < F::zero() && alpha[k] > F::zero());
            let in_low = (zk < F::zero() && alpha[k] < c) || (zk > F::zero() && alpha[k] > F::zero());
            if in_up && v > m_up {
                m_up = v;
                i_up = k;
            }
            if in_low && v < m_low {
                m_low = v;
            }
        }
        kkt_gap = m_up - m_low;
        if kkt_gap <= params.tol || i_up == usize::MAX || !m_low.is_finite() {
            converged = true;
            break;
        }
        if iterations >= params.max_iter {
            break;
        }
        iterations += 1;

        let i = i_up;
        let pi_sel = phi(i);
        let kii = kernel[(pi_sel, pi_sel)];
        let mut i_low = usize::MAX;
        let mut best_gain = F::neg_infinity();
        for k in 0..m {
            let zk = sign(k);
            let v = -zk * grad[k];
            let in_low = (zk < F::zero() && alpha[k] < c) || (zk > F::zero() && alpha[k] > F::zero());
            if !in_low || v >= m_up {
                continue;
            }
            let b = m_up - v;
            let mut a = kii + kernel[(phi(k), phi(k))] - F::c(2.0) * kernel[(pi_sel, phi(k))];
            if a <= F::zero() {
                a = F::c(1e-12);
            }
            let gain = b * b / a;
            if gain > best_gain {
                best_gain = gain;
                i_low = k;
            }
        }
        if i_low == usize::MAX {
            converged = true;
            break;
        }

        let j = i_low;
        let (zi, zj) = (sign(i), sign(j));
        let (pi_, pj_) = (phi(i), phi(j));
        let kij = kernel[(pi_, pj_)];
        let mut a = kernel[(pi_, pi_)] + kernel[(pj_, pj_)] - F::c(2.0) * kij;
        if a <= F::zero() {
            a = F::c(1e-12);
        }
        let g = grad[i] - zi * zj * grad[j];
        let mut delta = -g / a;

        // Box feasibility for delta on alpha_i, and on alpha_j through
        // delta_j = -z_i z_j delta.
        let (mut lo, mut hi) = (-alpha[i], c - alpha[i]);
        if zi * zj > F::zero() {
            lo = lo.max(alpha[j] - c);
            hi = hi.min(alpha[j]);
        } else {
            lo = lo.max(-alpha[j]);
            hi = hi.min(c - alpha[j]);
        }
        delta = delta.max(lo).min(hi);
        if delta == F::zero() {
            // Numerically stuck pair; treat the gap as converged enough.
            break;
        }
        let delta_j = -zi * zj * delta;
        alpha[i] += delta;
        alpha[j] += delta_j;

        for k in 0..m {
            let zk = sign(k);
            let qki = zk * zi * kernel[(phi(k), pi_)];
            let qkj = zk * zj * kernel[(phi(k), pj_)];
            grad[k] = grad[k] + delta * qki + delta_j * qkj;
        }
    }

    // Bias from the KKT bounds: at optimality every unbounded support vector
    // pins -z_k grad_k to the same value; the midpoint is robust.
    let mut m_up = F::neg_infinity();
    let mut m_low = F::infinity();
    for k in 0..m {
        let zk = sign(k);
        let v = -zk * grad[k];
        let in_up = (zk > F::zero() && alpha[k] < c) || (zk < F::zero() && alpha[k] > F::zero());
        let in_low = (zk < F::zero() && alpha[k] < c) || (zk > F::zero() && alpha[k] > F::zero());
        if in_up && v > m_up {
            m_up = v;
        }
        if in_low && v < m_low {
            m_low = v;
        }
    }
    let bias = if m_up.is_finite() && m_low.is_finite() {
        (m_up + m_low) / F::c(2.0)
    } else {
        crate::stats::mean(y)
    };

    // Dual objective value 1/2 a^T Q a + p^T a, computed via the gradient
    // identity: grad = Q a + p  =>  value = 1/2 a^T (grad + p).
    let mut dual_objective = F::zero();
    for k in 0..m {
        dual_objective += alpha[k] * (grad[k] + p[k]);
    }
    dual_objective /= F::c(2.0);

    let support: Vec<(Vec<F>, F)> = (0..n)
        .filter_map(|i| {
            let beta = alpha[i] - alpha[i + n];
            (beta != F::zero()).then(|| (x.row(i).to_vec(), beta))
        })
        .collect();

    Ok(SvrModel {
        support,
        bias,
        gamma: params.gamma,
        converged,
        dual_objective,
        kkt_gap,
    })
}
