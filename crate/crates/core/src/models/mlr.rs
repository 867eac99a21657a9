//! Multiple linear regression (ordinary least squares).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, Mat};
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlrModel<F> {
    pub intercept: F,
    pub coefficients: Vec<F>,
    /// Set when the design matrix was rank deficient and the minimum-norm
    /// solution was taken.
    pub rank_deficient: bool,
}

impl<F: Real> MlrModel<F> {
    pub fn predict_row(&self, row: &[F]) -> F {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .fold(F::zero(), |acc, (c, x)| acc + *c * *x)
    }
}

/// Ordinary least squares with intercept, solved by a column-pivoted
/// Householder QR (minimum-norm completion on rank deficiency).
pub fn fit_mlr<F: Real>(x: &Mat<F>, y: &[F]) -> Result<MlrModel<F>> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n <= p + 1 {
        return Err(Error::Parameter(format!(
            "least squares needs rows > columns + 1, got {n} rows and {p} columns"
        )));
    }
    if y.len() != n {
        return Err(Error::Parameter("label length does not match row count".to_string()));
    }

    let design = Mat::from_rows(
        (0..n)
            .map(|i| {
                let mut row = Vec::with_capacity(p + 1);
                row.push(F::one());
                row.extend_from_slice(x.row(i));
                row
            })
            .collect(),
    );
    let fit = lstsq(&design, y);
    Ok(MlrModel {
        intercept: fit.coefficients[0],
        coefficients: fit.coefficients[1..].to_vec(),
        rank_deficient: fit.rank_deficient,
    })
}
