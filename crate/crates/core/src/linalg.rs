//! Dense linear algebra kernels used by the regression models.
//!
//! Small and self-contained: row-major matrices, Cholesky factorization for
//! kernel solves, and Householder QR with column pivoting for least squares
//! (including the minimum-norm completion for rank-deficient systems).

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<F>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        debug_assert!(rows.iter().all(|row| row.len() == c));
        Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(F::zero(), |acc, (a, b)| acc + *a * *b)
            })
            .collect()
    }

    /// `self^T * x` without materializing the transpose.
#[allow(clippy::needless_range_loop)]
    pub fn tr_matvec(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![F::zero(); self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += *a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * *b;
                }
            }
        }
        out
    }

    /// `self * self^T` (row Gram matrix).
    pub fn gram_rows(&self) -> Mat<F> {
        let mut out = Mat::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let dot = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .fold(F::zero(), |acc, (a, b)| acc + *a * *b);
                out[(i, j)] = dot;
                out[(j, i)] = dot;
            }
        }
        out
    }

    /// `self^T * self` (Gram matrix).
    pub fn gram(&self) -> Mat<F> {
        let mut out = Mat::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == F::zero() {
                    continue;
                }
                let out_row = out.row_mut(a);
                for (o, rb) in out_row.iter_mut().zip(r) {
                    *o += ra * *rb;
                }
            }
        }
        out
    }
}

impl<F> std::ops::Index<(usize, usize)> for Mat<F> {
    type Output = F;
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Mat<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a non-positive pivot is met.
pub fn cholesky<F: Real>(a: &Mat<F>) -> Option<Mat<F>> {
    let n = a.n_rows();
    debug_assert_eq!(n, a.n_cols());
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= F::zero() {
                    return None;
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solve `L y = b` (forward substitution, `L` lower triangular).
pub fn solve_lower<F: Real>(l: &Mat<F>, b: &[F]) -> Vec<F> {
    let n = l.n_rows();
    let mut y = vec![F::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * y[k];
        }
        y[i] = sum / l[(i, i)];
    }
    y
}

/// Solve `L^T x = y` (back substitution against the transpose of lower `L`).
pub fn solve_lower_transpose<F: Real>(l: &Mat<F>, y: &[F]) -> Vec<F> {
    let n = l.n_rows();
    let mut x = vec![F::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[(k, i)] * x[k];
        }
        x[i] = sum / l[(i, i)];
    }
    x
}

/// Solve `A x = b` for symmetric positive-definite `A` via Cholesky.
pub fn solve_spd<F: Real>(a: &Mat<F>, b: &[F]) -> Option<Vec<F>> {
    let l = cholesky(a)?;
    let y = solve_lower(&l, b);
    Some(solve_lower_transpose(&l, &y))
}

/// Least-squares solution of `X beta = y`.
#[derive(Debug, Clone)]
pub struct Lstsq<F> {
    pub coefficients: Vec<F>,
    pub rank: usize,
    /// True when the column-pivoted factorization detected rank deficiency
    /// and the minimum-norm completion was used.
    pub rank_deficient: bool,
}

/// Householder QR with column pivoting; minimum-norm solution when the
/// design matrix is rank deficient.
pub fn lstsq<F: Real>(x: &Mat<F>, y: &[F]) -> Lstsq<F> {
    let n = x.n_rows();
    let p = x.n_cols();
    debug_assert_eq!(n, y.len());
    debug_assert!(n >= p, "lstsq requires rows >= columns");

    // Working copies: A is factored in place, qty accumulates Q^T y.
    let mut a = x.clone();
    let mut qty: Vec<F> = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();

    let mut col_norms: Vec<F> = (0..p)
        .map(|j| (0..n).map(|i| a[(i, j)] * a[(i, j)]).sum::<F>())
        .collect();

    let mut rank = p;
    let mut r_diag_max = F::zero();
    for k in 0..p {
        // Pivot: bring the column with the largest remaining norm to front.
        let (pivot, _) = col_norms
            .iter()
            .enumerate()
            .skip(k)
            .fold((k, F::neg_infinity()), |(bi, bv), (i, v)| {
                if *v > bv {
                    (i, *v)
                } else {
                    (bi, bv)
                }
            });
        if pivot != k {
            for i in 0..n {
                let tmp = a[(i, k)];
                a[(i, k)] = a[(i, pivot)];
                a[(i, pivot)] = tmp;
            }
            col_norms.swap(k, pivot);
            perm.swap(k, pivot);
        }

        // Householder reflector for column k.
        let norm = (k..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<F>().sqrt();
        if k == 0 {
            r_diag_max = norm;
        }
        let tol = r_diag_max * F::c(1e-12) * F::from_count(n.max(p));
        if norm <= tol {
            rank = k;
            break;
        }
        let alpha = if a[(k, k)] >= F::zero() { -norm } else { norm };
        let mut v: Vec<F> = (k..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|t| *t * *t).sum::<F>();
        if vnorm2 > F::zero() {
            // Apply I - 2 v v^T / (v^T v) to the trailing block and to qty.
            for j in k..p {
                let dot = (k..n).map(|i| v[i - k] * a[(i, j)]).sum::<F>();
                let scale = F::c(2.0) * dot / vnorm2;
                for i in k..n {
                    a[(i, j)] -= scale * v[i - k];
                }
            }
            let dot = (k..n).map(|i| v[i - k] * qty[i]).sum::<F>();
            let scale = F::c(2.0) * dot / vnorm2;
            for i in k..n {
                qty[i] -= scale * v[i - k];
            }
        }
        a[(k, k)] = alpha;
        for j in k + 1..p {
            col_norms[j] -= a[(k, j)] * a[(k, j)];
        }
    }

    let rank_deficient = rank < p;
    let permuted = if rank_deficient {
        min_norm_from_qr(&a, &qty, rank, p)
    } else {
        // Back-substitute R beta' = (Q^T y)[..p].
        let mut beta = vec![F::zero(); p];
        for i in (0..p).rev() {
            let mut sum = qty[i];
            for j in i + 1..p {
                sum -= a[(i, j)] * beta[j];
            }
            beta[i] = sum / a[(i, i)];
        }
        beta
    };

    let mut coefficients = vec![F::zero(); p];
    for (k, &orig) in perm.iter().enumerate() {
        coefficients[orig] = permuted[k];
    }
    Lstsq {
        coefficients,
        rank,
        rank_deficient,
    }
}

/// Minimum-norm completion: with `R1 = R[..r, ..p]` from the pivoted QR,
/// factor `R1^T = V T` and return `V T^{-T} c` which minimizes `||z||`
/// subject to `R1 z = c`.
fn min_norm_from_qr<F: Real>(a: &Mat<F>, qty: &[F], r: usize, p: usize) -> Vec<F> {
    // R1^T is p x r; plain Householder QR (no pivoting needed: R1 has full
    // row rank r by construction).
    let mut m = Mat::zeros(p, r);
    for i in 0..r {
        for j in i..p {
            m[(j, i)] = a[(i, j)];
        }
    }
    let mut reflectors: Vec<(usize, Vec<F>)> = Vec::with_capacity(r);
    for k in 0..r {
        let norm = (k..p).map(|i| m[(i, k)] * m[(i, k)]).sum::<F>().sqrt();
        let alpha = if m[(k, k)] >= F::zero() { -norm } else { norm };
        let mut v: Vec<F> = (k..p).map(|i| m[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|t| *t * *t).sum::<F>();
        if vnorm2 > F::zero() {
            for j in k..r {
                let dot = (k..p).map(|i| v[i - k] * m[(i, j)]).sum::<F>();
                let scale = F::c(2.0) * dot / vnorm2;
                for i in k..p {
                    m[(i, j)] -= scale * v[i - k];
                }
            }
        }
        m[(k, k)] = alpha;
        reflectors.push((k, v));
    }
    // Solve T^T w = c  (T is the upper-triangular r x r block of m).
    let mut w = vec![F::zero(); r];
    for i in 0..r {
        let mut sum = qty[i];
        for j in 0..i {
            sum -= m[(j, i)] * w[j];
        }
        w[i] = sum / m[(i, i)];
    }
    // z = V w = H_0 H_1 ... H_{r-1} [w; 0].
    let mut z = vec![F::zero(); p];
    z[..r].copy_from_slice(&w);
    for (k, v) in reflectors.iter().rev() {
        let vnorm2 = v.iter().map(|t| *t * *t).sum::<F>();
        if vnorm2 > F::zero() {
            let dot = (*k..p).map(|i| v[i - k] * z[i]).sum::<F>();
            let scale = F::c(2.0) * dot / vnorm2;
            for i in *k..p {
                z[i] -= scale * v[i - k];
            }
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Mat::from_rows(vec![vec![4.0_f64, 2.0], vec![2.0, 3.0]]);
        let x = solve_spd(&a, &[8.0, 7.0]).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(cholesky(&a).is_none());
    }

    #[test]
    fn lstsq_matches_normal_equations_oracle() {
        // Deterministic pseudo-random 50x5 system.
        let mut rng = crate::rng::Rng::new(99);
        let x = Mat::from_rows(
            (0..50)
                .map(|_| (0..5).map(|_| rng.next_f64() * 2.0 - 1.0).collect())
                .collect(),
        );
        let y: Vec<f64> = (0..50).map(|_| rng.next_f64()).collect();
        let fit = lstsq(&x, &y);
        assert!(!fit.rank_deficient);

        // Oracle: solve X^T X beta = X^T y directly.
        let oracle = solve_spd(&x.gram(), &x.tr_matvec(&y)).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn lstsq_min_norm_splits_duplicated_column() {
        // x2 duplicates x1: minimum-norm solution spreads the weight evenly.
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let v = i as f64 / 10.0;
                vec![1.0, v, v]
            })
            .collect();
        let y: Vec<f64> = (0..20).map(|i| 2.0 + 3.0 * (i as f64 / 10.0)).collect();
        let fit = lstsq(&Mat::from_rows(rows), &y);
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 2);
        assert!((fit.coefficients[1] - 1.5).abs() < 1e-8, "{:?}", fit.coefficients);
        assert!((fit.coefficients[2] - 1.5).abs() < 1e-8);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let mut rng = crate::rng::Rng::new(7);
        let x = Mat::from_rows(
            (0..30)
                .map(|_| (0..4).map(|_| rng.next_f64()).collect())
                .collect(),
        );
        let y: Vec<f64> = (0..30).map(|_| rng.next_f64()).collect();
        let fit = lstsq(&x, &y);
        let pred = x.matvec(&fit.coefficients);
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        for dot in x.tr_matvec(&resid) {
            assert!(dot.abs() < 1e-8, "residual correlation {dot}");
        }
    }
}
