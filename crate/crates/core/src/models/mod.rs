//! Estimators mapping critical-feature vectors to degradation modes.
//!
//! Four single-output baselines (MLR, ENR, SVR, SGPR), trained once per
//! mode, and the jointly trained three-output network. [`TrainedModel`]
//! wraps an estimator with its feature schema and the normalization
//! statistics bound at training time; prediction binds input columns by
//! feature identifier, so column order never matters.

pub mod enr;
pub mod fnn;
pub mod mlr;
pub mod sgpr;
pub mod svr;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix, NormStat};
use crate::io;
use crate::linalg::Mat;
use crate::scalar::Real;

pub use enr::{fit_enr, EnrModel, EnrParams};
pub use fnn::{clamp01, fit_fnn, loss_and_grads, weighted_rmse_loss, FnnModel, FnnSpec, FnnTrainReport};
pub use mlr::{fit_mlr, MlrModel};
pub use sgpr::{fit_sgpr, SgprModel, SgprParams};
pub use svr::{fit_svr, SvrModel, SvrParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Mlr,
    Enr,
    Svr,
    Sgpr,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Svr,
        BaselineKind::Sgpr,
        BaselineKind::Mlr,
        BaselineKind::Enr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Mlr => "MLR",
            BaselineKind::Enr => "ENR",
            BaselineKind::Svr => "SVR",
            BaselineKind::Sgpr => "SGPR",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Estimator<F> {
    Mlr(MlrModel<F>),
    Enr(EnrModel<F>),
    Svr(SvrModel<F>),
    Sgpr(SgprModel<F>),
    Fnn(FnnModel<F>),
}

impl<F: Real> Estimator<F> {
    pub fn is_multi_output(&self) -> bool {
        matches!(self, Estimator::Fnn(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Mlr(_) => "mlr",
            Estimator::Enr(_) => "enr",
            Estimator::Svr(_) => "svr",
            Estimator::Sgpr(_) => "sgpr",
            Estimator::Fnn(_) => "fnn",
        }
    }
}

/// Predictions: one value per row for baselines, three for the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictions<F> {
    Single(Vec<F>),
    Triple(Vec<[F; 3]>),
}

impl<F: Real> Predictions<F> {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Single(v) => v.len(),
            Predictions::Triple(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reporting boundary: multi-output predictions clamped to [0, 1].
    pub fn reported(&self) -> Predictions<F> {
        match self {
            Predictions::Single(v) => Predictions::Single(v.clone()),
            Predictions::Triple(v) => Predictions::Triple(
                v.iter()
                    .map(|t| [clamp01(t[0]), clamp01(t[1]), clamp01(t[2])])
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMetadata<F> {
    pub final_loss: F,
    pub epochs: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// An estimator bound to its feature schema and training-time normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel<F> {
    pub schema: Vec<FeatureId>,
    pub normalization: Vec<NormStat<F>>,
    pub estimator: Estimator<F>,
    pub metadata: TrainingMetadata<F>,
}

impl<F: Real> TrainedModel<F> {
    /// Predict on a feature matrix carrying raw (unnormalized) values.
    ///
    /// The matrix must contain exactly the schema's features (any order);
    /// missing or extra features are a contract error naming them.
    pub fn predict(&self, matrix: &FeatureMatrix<F>) -> Result<Predictions<F>> {
        let missing: Vec<String> = self
            .schema
            .iter()
            .filter(|id| matrix.index_of(id).is_none())
            .map(|id| id.to_string())
            .collect();
        let extra: Vec<String> = matrix
            .feature_ids
            .iter()
            .filter(|id| !self.schema.contains(id))
            .map(|id| id.to_string())
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::SchemaMismatch {
                missing: missing.join(", "),
                extra: extra.join(", "),
            });
        }
        let bound = matrix.restrict(&self.schema)?;
        let x = Mat::from_rows(
            bound
                .rows
                .iter()
                .map(|r| {
                    r.values
                        .iter()
                        .zip(&self.normalization)
                        .map(|(v, s)| s.apply(*v))
                        .collect()
                })
                .collect(),
        );
        Ok(match &self.estimator {
            Estimator::Mlr(m) => {
                Predictions::Single((0..x.n_rows()).map(|i| m.predict_row(x.row(i))).collect())
            }
            Estimator::Enr(m) => {
                Predictions::Single((0..x.n_rows()).map(|i| m.predict_row(x.row(i))).collect())
            }
            Estimator::Svr(m) => {
                Predictions::Single((0..x.n_rows()).map(|i| m.predict_row(x.row(i))).collect())
            }
            Estimator::Sgpr(m) => {
                Predictions::Single((0..x.n_rows()).map(|i| m.predict_row(x.row(i))).collect())
            }
            Estimator::Fnn(m) => Predictions::Triple(m.predict(&x)),
        })
    }

    /// Persist as a self-describing JSON bundle; reloading reproduces
    /// predictions bitwise (f64 values round-trip exactly through JSON).
    pub fn save_json(&self, path: &Path) -> Result<()>
    where
        F: Serialize,
    {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Parameter(format!("serializing model: {e}")))?;
        io::write_text(path, &text)
    }

    pub fn load_json(path: &Path) -> Result<Self>
    where
        F: for<'de> Deserialize<'de>,
    {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DmLabel, LabelSource};
    use crate::features::{feature_library, FeatureVector};
    use crate::rng::Rng;

    fn raw_matrix(ids: &[FeatureId], cols: Vec<Vec<f64>>, seed_labels: f64) -> FeatureMatrix<f64> {
        let n = cols[0].len();
        let rows: Vec<FeatureVector<f64>> = (0..n)
            .map(|i| FeatureVector {
                cell_id: format!("cell_{}", i % 4),
                cycle_index: i as u32,
                efc: i as f64,
                values: cols.iter().map(|c| c[i]).collect(),
                flagged: Vec::new(),
            })
            .collect();
        let labels = vec![
            DmLabel {
                lli: seed_labels,
                lam_pe: 0.0,
                lam_ne: 0.0,
                source: LabelSource::Interpolated,
            };
            n
        ];
        FeatureMatrix {
            feature_ids: ids.to_vec(),
            rows,
            labels,
            normalization: None,
        }
    }

    fn trained_mlr_fixture() -> (TrainedModel<f64>, FeatureMatrix<f64>, Vec<f64>) {
        let ids = &feature_library()[..3];
        let mut rng = Rng::new(81);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..30).map(|_| rng.next_f64() * 4.0).collect())
            .collect();
        let matrix = raw_matrix(ids, cols, 0.0);
        let normalized = matrix.normalize().unwrap();
        let norm_stats = normalized.normalization.clone().unwrap();
        let x = Mat::from_rows(normalized.rows.iter().map(|r| r.values.clone()).collect());
        let y: Vec<f64> = (0..30)
            .map(|i| 0.2 + 0.5 * x[(i, 0)] - 0.3 * x[(i, 1)] + 0.1 * x[(i, 2)])
            .collect();
        let model = TrainedModel {
            schema: ids.to_vec(),
            normalization: norm_stats,
            estimator: Estimator::Mlr(fit_mlr(&x, &y).unwrap()),
            metadata: TrainingMetadata {
                final_loss: 0.0,
                epochs: 0,
                seed: 81,
                warnings: Vec::new(),
            },
        };
        (model, matrix, y)
    }

    #[test]
    fn training_rows_predict_their_targets_on_exact_linear_data() {
        let (model, matrix, y) = trained_mlr_fixture();
        match model.predict(&matrix).unwrap() {
            Predictions::Single(pred) => {
                for (p, t) in pred.iter().zip(&y) {
                    assert!((p - t).abs() < 1e-8, "{p} vs {t}");
                }
            }
            _ => panic!("baseline must be single-output"),
        }
    }

    #[test]
    fn identical_input_gives_bit_identical_output() {
        let (model, matrix, _) = trained_mlr_fixture();
        assert_eq!(model.predict(&matrix).unwrap(), model.predict(&matrix).unwrap());
    }

    #[test]
    fn permuted_columns_with_correct_names_bind_identically() {
        let (model, matrix, _) = trained_mlr_fixture();
        let expected = model.predict(&matrix).unwrap();
        // Reverse the column order (names travel with the columns).
        let permuted_ids: Vec<FeatureId> = matrix.feature_ids.iter().rev().copied().collect();
        let permuted = matrix.restrict(&permuted_ids).unwrap();
        assert_eq!(model.predict(&permuted).unwrap(), expected);
    }

    #[test]
    fn schema_mismatch_names_the_offenders() {
        let (model, matrix, _) = trained_mlr_fixture();
        let narrowed = matrix.restrict(&matrix.feature_ids[..2]).unwrap();
        match model.predict(&narrowed) {
            Err(Error::SchemaMismatch { missing, .. }) => {
                assert!(missing.contains(&model.schema[2].to_string()), "{missing}");
            }
            other => panic!("expected schema mismatch, got {other:?}"),
        }
    }

    #[test]
    fn persistence_round_trip_reproduces_predictions_bitwise() {
        let (model, matrix, _) = trained_mlr_fixture();
        let dir = std::env::temp_dir().join("dmq_model_roundtrip");
        let path = dir.join("model.json");
        model.save_json(&path).unwrap();
        let loaded = TrainedModel::<f64>::load_json(&path).unwrap();
        assert_eq!(model.predict(&matrix).unwrap(), loaded.predict(&matrix).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn reported_predictions_clamp_the_network_only() {
        let triple = Predictions::Triple(vec![[-0.1, 0.5, 1.4]]);
        match triple.reported() {
            Predictions::Triple(v) => assert_eq!(v[0], [0.0, 0.5, 1.0]),
            _ => unreachable!(),
        }
        let single = Predictions::Single(vec![-0.1, 1.4]);
        match single.reported() {
            Predictions::Single(v) => assert_eq!(v, vec![-0.1, 1.4]),
            _ => unreachable!(),
        }
    }
}
