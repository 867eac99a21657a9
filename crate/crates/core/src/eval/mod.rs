//! The six-test evaluation protocol, error metrics, and model comparison.
//!
//! Six tests of three held-out cells each (thirteen train cells per test)
//! cover both protocols and all three temperature classes. Per test and
//! degradation mode the report carries MAPE and RMSE (in DM percentage
//! points); aggregates are means and n-1 standard deviations over the six
//! tests. Baselines are compared against the SVR benchmark with a pooled
//! two-sample t statistic at a fixed threshold.

pub mod report;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dm, Protocol, TemperatureClass};
use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};
use crate::filters::CriticalFeatureSet;
use crate::linalg::Mat;
use crate::models::{
    fit_enr, fit_fnn, fit_mlr, fit_sgpr, fit_svr, BaselineKind, EnrParams, Estimator, FnnSpec,
    Predictions, SgprParams, SvrParams, TrainedModel, TrainingMetadata,
};
use crate::parallel::par_map;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Real;
use crate::stats;

/// Default MAPE floor: labels below 0.5 DM-percentage-points are excluded
/// from relative error (they would dominate it).
pub const DEFAULT_MAPE_FLOOR: f64 = 0.005;
/// Fixed t threshold at the 5% significance level used by the comparison.
pub const T_THRESHOLD: f64 = 2.145;
/// Tests in the plan.
pub const N_TESTS: usize = 6;
/// Held-out cells per test.
pub const CELLS_PER_TEST: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellInfo {
    pub cell_id: String,
    pub protocol: Protocol,
    pub temperature_class: TemperatureClass,
}

/// The six-test assignment: three held-out cells per test; training cells
/// are the complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPlan {
    pub tests: Vec<[String; CELLS_PER_TEST]>,
}

impl TestPlan {
    /// The documented default assignment over the standard sixteen-cell
    /// corpus (CCD_1..8, DCD_1..8). Every cell appears as a test cell at
    /// least once; test cells span both protocols and all three temperature
    /// classes.
    pub fn default_plan() -> Self {
        let t = |a: &str, b: &str, c: &str| [a.to_string(), b.to_string(), c.to_string()];
        TestPlan {
            tests: vec![
                t("CCD_1", "CCD_4", "CCD_6"),
                t("DCD_1", "DCD_4", "DCD_6"),
                t("CCD_2", "CCD_5", "CCD_7"),
                t("DCD_2", "DCD_5", "DCD_7"),
                t("CCD_3", "CCD_8", "DCD_3"),
                t("DCD_8", "CCD_4", "DCD_1"),
            ],
        }
    }

    /// Validate against the corpus: six tests of three distinct known cells,
    /// and plan-wide coverage of every protocol and temperature class the
    /// corpus contains.
    pub fn validate(&self, cells: &[CellInfo]) -> Result<()> {
        if self.tests.len() != N_TESTS {
            return Err(Error::Parameter(format!(
                "test plan must have {N_TESTS} tests, found {}",
                self.tests.len()
            )));
        }
        let known: BTreeSet<&str> = cells.iter().map(|c| c.cell_id.as_str()).collect();
        for (i, test) in self.tests.iter().enumerate() {
            let distinct: BTreeSet<&str> = test.iter().map(String::as_str).collect();
            if distinct.len() != CELLS_PER_TEST {
                return Err(Error::Parameter(format!(
                    "test {} lists a duplicated test cell: {:?}",
                    i + 1,
                    test
                )));
            }
            for cell in test {
                if !known.contains(cell.as_str()) {
                    return Err(Error::Parameter(format!(
                        "test {} references unknown cell '{cell}'",
                        i + 1
                    )));
                }
            }
            if cells.len() - CELLS_PER_TEST == 0 {
                return Err(Error::Parameter("no training cells would remain".to_string()));
            }
        }
        // Coverage across the plan.
        let test_cells: BTreeSet<&str> = self.tests.iter().flatten().map(String::as_str).collect();
        let covered_protocols: BTreeSet<&str> = cells
            .iter()
            .filter(|c| test_cells.contains(c.cell_id.as_str()))
            .map(|c| c.protocol.as_str())
            .collect();
        let corpus_protocols: BTreeSet<&str> = cells.iter().map(|c| c.protocol.as_str()).collect();
        if covered_protocols != corpus_protocols {
            return Err(Error::Parameter(
                "test cells must span every protocol present in the corpus".to_string(),
            ));
        }
        let covered_classes: BTreeSet<&str> = cells
            .iter()
            .filter(|c| test_cells.contains(c.cell_id.as_str()))
            .map(|c| c.temperature_class.as_str())
            .collect();
        let corpus_classes: BTreeSet<&str> =
            cells.iter().map(|c| c.temperature_class.as_str()).collect();
        if covered_classes != corpus_classes {
            return Err(Error::Parameter(
                "test cells must span every temperature class present in the corpus".to_string(),
            ));
        }
        Ok(())
    }

    pub fn train_cells(&self, test_index: usize, cells: &[CellInfo]) -> Vec<String> {
        let held: BTreeSet<&str> = self.tests[test_index].iter().map(String::as_str).collect();
        cells
            .iter()
            .filter(|c| !held.contains(c.cell_id.as_str()))
            .map(|c| c.cell_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MapeResult<F> {
    pub percent: F,
    /// Samples excluded by the floor.
    pub excluded: usize,
    pub used: usize,
}

/// Mean absolute percentage error over samples with |truth| >= floor.
pub fn mape<F: Real>(y_true: &[F], y_pred: &[F], floor: F) -> Result<MapeResult<F>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Parameter("mape needs equal lengths".to_string()));
    }
    let mut sum = F::zero();
    let mut used = 0usize;
    for (t, p) in y_true.iter().zip(y_pred) {
        if t.abs() < floor {
            continue;
        }
        sum += ((*t - *p) / *t).abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(format!(
            "all {} samples fall below the MAPE floor {}",
            y_true.len(),
            floor.as_f64()
        )));
    }
    Ok(MapeResult {
        percent: sum / F::from_count(used) * F::c(100.0),
        excluded: y_true.len() - used,
        used,
    })
}

/// Root mean squared error, reported in DM percentage points
/// (fractions scaled by 100).
pub fn rmse_percent<F: Real>(y_true: &[F], y_pred: &[F]) -> F {
    debug_assert_eq!(y_true.len(), y_pred.len());
    let n = F::from_count(y_true.len());
    (y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (*t - *p) * (*t - *p))
        .sum::<F>()
        / n)
        .sqrt()
        * F::c(100.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTestResult<F> {
    pub t: F,
    /// Both spreads were zero while the means differed.
    pub infinite: bool,
    pub df: usize,
    pub threshold: F,
    /// One-sided verdict: the candidate is significantly worse than the
    /// benchmark when t exceeds the threshold.
    pub significant: bool,
}

/// Pooled-variance two-sample t statistic with equal sample counts.
pub fn t_test<F: Real>(mean_a: F, std_a: F, mean_b: F, std_b: F, n: usize) -> TTestResult<F> {
    debug_assert!(n >= 2);
    let df = 2 * n - 2;
    let threshold = F::c(T_THRESHOLD);
    let denom = (std_a * std_a / F::from_count(n) + std_b * std_b / F::from_count(n)).sqrt();
    if denom == F::zero() {
        let infinite = mean_a != mean_b;
        return TTestResult {
            t: F::zero(),
            infinite,
            df,
            threshold,
            significant: infinite,
        };
    }
    let t = (mean_a - mean_b) / denom;
    TTestResult {
        t,
        infinite: false,
        df,
        threshold,
        significant: t > threshold,
    }
}

/// Which feature set a network variant trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSetChoice {
    Critical,
    All,
}

impl FeatureSetChoice {
    pub fn fnn_label(self) -> &'static str {
        match self {
            FeatureSetChoice::Critical => "CF-FNN",
            FeatureSetChoice::All => "AF-FNN",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrGridConfig {
    pub cost: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for SvrGridConfig {
    fn default() -> Self {
        // Labels are DM fractions (~0 to 0.3), so the insensitive tube must
        // sit well below their spread.
        Self {
            cost: vec![10.0, 100.0],
            epsilon: vec![0.001],
            gamma: vec![0.5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnrGridConfig {
    pub l1_weight: Vec<f64>,
    pub l2_weight: Vec<f64>,
}

impl Default for EnrGridConfig {
    fn default() -> Self {
        Self {
            l1_weight: vec![1e-4, 1e-3],
            l2_weight: vec![1e-4, 1e-2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgprGridConfig {
    pub inducing: usize,
    pub lengthscale: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl Default for SgprGridConfig {
    fn default() -> Self {
        Self {
            inducing: 64,
            lengthscale: vec![1.0, 2.0],
            noise_var: vec![1e-4],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FnnConfig {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_weights: [f64; 3],
}

impl Default for FnnConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 500,
            patience: 25,
            loss_weights: [1.0, 4.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mape_floor: f64,
    pub seed: u64,
    pub jobs: usize,
    pub include_baselines: bool,
    pub fnn_variants: Vec<FeatureSetChoice>,
    /// Training cells held out per test for hyperparameter selection and
    /// network early stopping.
    pub validation_cells: usize,
    pub svr: SvrGridConfig,
    pub enr: EnrGridConfig,
    pub sgpr: SgprGridConfig,
    pub fnn: FnnConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mape_floor: DEFAULT_MAPE_FLOOR,
            seed: 0,
            jobs: 1,
            include_baselines: true,
            fnn_variants: vec![FeatureSetChoice::Critical, FeatureSetChoice::All],
            validation_cells: 3,
            svr: SvrGridConfig::default(),
            enr: EnrGridConfig::default(),
            sgpr: SgprGridConfig::default(),
            fnn: FnnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCell<F> {
    pub model: String,
    pub test_index: usize,
    pub dm: Dm,
    pub mape_pct: F,
    pub rmse_pct: F,
    pub mape_excluded: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate<F> {
    pub model: String,
    pub dm: Dm,
    pub amape: F,
    pub std_mape: F,
    pub armse: F,
    pub std_rmse: F,
    pub n_tests: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTestRow<F> {
    pub model: String,
    pub per_dm: Vec<TTestResult<F>>,
    pub total: F,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldFailure {
    pub model: String,
    pub test_index: usize,
    pub message: String,
}

/// One prediction on a held-out cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredRecord<F> {
    pub model: String,
    pub test_index: usize,
    pub cell_id: String,
    pub efc: F,
    pub dm: Dm,
    pub truth: F,
    pub pred: F,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport<F> {
    pub plan: TestPlan,
    pub metrics: Vec<MetricCell<F>>,
    pub aggregates: Vec<Aggregate<F>>,
    pub ttest: Vec<TTestRow<F>>,
    pub t_threshold: F,
    pub t_df: usize,
    pub failures: Vec<FoldFailure>,
    pub predictions: Vec<PredRecord<F>>,
    pub seed: u64,
}

impl<F: Real> EvaluationReport<F> {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn aggregate(&self, model: &str, dm: Dm) -> Option<&Aggregate<F>> {
        self.aggregates.iter().find(|a| a.model == model && a.dm == dm)
    }

    /// Spearman rank correlation between predicted and true trajectories,
    /// per (test, cell, mode), for one model.
    pub fn per_cell_trajectory_correlation(&self, model: &str) -> Vec<(usize, String, Dm, F)> {
        let mut keys: Vec<(usize, String, Dm)> = self
            .predictions
            .iter()
            .filter(|p| p.model == model)
            .map(|p| (p.test_index, p.cell_id.clone(), p.dm))
            .collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|(test, cell, dm)| {
                let mut pairs: Vec<(F, F, F)> = self
                    .predictions
                    .iter()
                    .filter(|p| {
                        p.model == model && p.test_index == test && p.cell_id == cell && p.dm == dm
                    })
                    .map(|p| (p.efc, p.truth, p.pred))
                    .collect();
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
                let truth: Vec<F> = pairs.iter().map(|p| p.1).collect();
                let pred: Vec<F> = pairs.iter().map(|p| p.2).collect();
                (test, cell, dm, stats::spearman(&truth, &pred))
            })
            .collect()
    }
}

/// Featurize a corpus of labeled cells into one matrix plus the metadata
/// the protocol needs. Per-cycle featurization failures are collected as
/// (cell, cycle, error) without aborting the corpus.
#[allow(clippy::type_complexity)]
pub fn featurize_corpus<F: Real>(
    cells: &[crate::dataset::CellDataset<F>],
    bin_width_v: F,
) -> Result<(FeatureMatrix<F>, Vec<CellInfo>, Vec<(String, u32, Error)>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut infos = Vec::new();
    let mut skipped = Vec::new();
    for cell in cells {
        let (matrix, cell_skipped) = crate::features::featurize_cell(cell, bin_width_v)?;
        rows.extend(matrix.rows);
        labels.extend(matrix.labels);
        skipped.extend(
            cell_skipped
                .into_iter()
                .map(|(idx, e)| (cell.cell_id.clone(), idx, e)),
        );
        infos.push(CellInfo {
            cell_id: cell.cell_id.clone(),
            protocol: cell.protocol,
            temperature_class: cell.temperature_class,
        });
    }
    Ok((FeatureMatrix::new(rows, labels), infos, skipped))
}

struct Fold<F> {
    train_raw: FeatureMatrix<F>,
    test_raw: FeatureMatrix<F>,
    /// Training cells held out for validation (hyperparameter selection,
    /// network early stopping).
    val_cells: BTreeSet<String>,
}

fn make_fold<F: Real>(
    matrix: &FeatureMatrix<F>,
    cells: &[CellInfo],
    plan: &TestPlan,
    test_index: usize,
    validation_cells: usize,
    seed: u64,
) -> Fold<F> {
    let held: BTreeSet<&str> = plan.tests[test_index].iter().map(String::as_str).collect();
    let train_raw = matrix.filter_cells(|c| !held.contains(c));
    let test_raw = matrix.filter_cells(|c| held.contains(c));
    let mut train_cells = plan.train_cells(test_index, cells);
    let mut rng = Rng::new(derive_seed(seed, &format!("eval.valcells.{test_index}")));
    rng.shuffle(&mut train_cells);
    let n_val = validation_cells.clamp(1, train_cells.len().saturating_sub(1));
    let val_cells: BTreeSet<String> = train_cells.into_iter().take(n_val).collect();
    Fold {
        train_raw,
        test_raw,
        val_cells,
    }
}

/// Design matrix + per-DM label columns from a (already restricted,
/// normalized) feature matrix.
fn design<F: Real>(matrix: &FeatureMatrix<F>) -> Mat<F> {
    Mat::from_rows(matrix.rows.iter().map(|r| r.values.clone()).collect())
}

fn fit_baseline<F: Real>(
    kind: BaselineKind,
    fold: &Fold<F>,
    feature_set: &[FeatureId],
    dm: Dm,
    config: &EvalConfig,
    seed: u64,
) -> Result<TrainedModel<F>> {
    // Normalization statistics come from the full training fold.
    let train = fold.train_raw.restrict(feature_set)?.normalize()?;
    let norm = train.normalization.clone().expect("normalize() sets stats");

    // Grid selection on a per-cell validation split.
    let fit_subset = |cells_keep: &dyn Fn(&str) -> bool| -> (Mat<F>, Vec<F>) {
        let sub = train.filter_cells(cells_keep);
        let y = sub.label_column(dm);
        (design(&sub), y)
    };
    let (x_fit, y_fit) = fit_subset(&|c: &str| !fold.val_cells.contains(c));
    let (x_val, y_val) = fit_subset(&|c: &str| fold.val_cells.contains(c));
    let (x_all, y_all) = (design(&train), train.label_column(dm));

    let val_rmse = |est: &Estimator<F>| -> F {
        let pred: Vec<F> = (0..x_val.n_rows())
            .map(|i| match est {
                Estimator::Mlr(m) => m.predict_row(x_val.row(i)),
                Estimator::Enr(m) => m.predict_row(x_val.row(i)),
                Estimator::Svr(m) => m.predict_row(x_val.row(i)),
                Estimator::Sgpr(m) => m.predict_row(x_val.row(i)),
                Estimator::Fnn(_) => unreachable!("baselines are single-output"),
            })
            .collect();
        rmse_percent(&y_val, &pred)
    };

    let mut warnings = Vec::new();
    let estimator = match kind {
        BaselineKind::Mlr => {
            let m = fit_mlr(&x_all, &y_all)?;
            if m.rank_deficient {
                warnings.push("rank-deficient design; minimum-norm solution".to_string());
            }
            Estimator::Mlr(m)
        }
        BaselineKind::Enr => {
            let mut grid = Vec::new();
            for l1 in &config.enr.l1_weight {
                for l2 in &config.enr.l2_weight {
                    grid.push(EnrParams::new(F::c(*l1), F::c(*l2)));
                }
            }
            let best = select_on_grid(grid, |p| Ok(Estimator::Enr(fit_enr(&x_fit, &y_fit, p)?)), &val_rmse)?;
            let m = fit_enr(&x_all, &y_all, &best)?;
            if !m.converged {
                warnings.push("coordinate descent hit the sweep cap".to_string());
            }
            Estimator::Enr(m)
        }
        BaselineKind::Svr => {
            let mut grid = Vec::new();
            for c in &config.svr.cost {
                for e in &config.svr.epsilon {
                    for g in &config.svr.gamma {
                        grid.push(SvrParams::new(F::c(*c), F::c(*e), F::c(*g)));
                    }
                }
            }
            let best = select_on_grid(grid, |p| Ok(Estimator::Svr(fit_svr(&x_fit, &y_fit, p)?)), &val_rmse)?;
            let m = fit_svr(&x_all, &y_all, &best)?;
            if !m.converged {
                warnings.push("smo hit the iteration cap".to_string());
            }
            Estimator::Svr(m)
        }
        BaselineKind::Sgpr => {
            let mut grid = Vec::new();
            for l in &config.sgpr.lengthscale {
                for nv in &config.sgpr.noise_var {
                    let mut p = SgprParams::new(
                        config.sgpr.inducing.min(x_fit.n_rows()),
                        F::c(*l),
                        F::c(*nv),
                    );
                    p.seed = derive_seed(seed, "sgpr.kmeans");
                    grid.push(p);
                }
            }
            let best = select_on_grid(grid, |p| Ok(Estimator::Sgpr(fit_sgpr(&x_fit, &y_fit, p)?)), &val_rmse)?;
            let mut refit = best.clone();
            refit.inducing = best.inducing.min(x_all.n_rows());
            let m = fit_sgpr(&x_all, &y_all, &refit)?;
            if let Some(j) = m.jitter_used {
                warnings.push(format!("kernel factorization needed jitter {j}"));
            }
            Estimator::Sgpr(m)
        }
    };

    Ok(TrainedModel {
        schema: feature_set.to_vec(),
        normalization: norm,
        estimator,
        metadata: TrainingMetadata {
            final_loss: F::zero(),
            epochs: 0,
            seed,
            warnings,
        },
    })
}

fn select_on_grid<F: Real, P: Clone>(
    grid: Vec<P>,
    fit: impl Fn(&P) -> Result<Estimator<F>>,
    val_rmse: &dyn Fn(&Estimator<F>) -> F,
) -> Result<P> {
    debug_assert!(!grid.is_empty());
    if grid.len() == 1 {
        return Ok(grid.into_iter().next().unwrap());
    }
    let mut best: Option<(F, P)> = None;
    for params in grid {
        let est = fit(&params)?;
        let score = val_rmse(&est);
        let better = best.as_ref().is_none_or(|(b, _)| score < *b);
        if better {
            best = Some((score, params));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

fn fit_fnn_variant<F: Real>(
    fold: &Fold<F>,
    feature_set: &[FeatureId],
    config: &EvalConfig,
    seed: u64,
) -> Result<TrainedModel<F>> {
    let train = fold.train_raw.restrict(feature_set)?.normalize()?;
    let norm = train.normalization.clone().expect("normalize() sets stats");
    let x = design(&train);
    let y = Mat::from_rows(
        train
            .labels
            .iter()
            .map(|l| vec![l.lli, l.lam_pe, l.lam_ne])
            .collect(),
    );
    let val_mask: Vec<bool> = train
        .rows
        .iter()
        .map(|r| fold.val_cells.contains(&r.cell_id))
        .collect();

    let width = config.fnn.hidden_width;
    let spec = FnnSpec {
        input_dim: feature_set.len(),
        embedding_widths: [width; 5],
        prediction_widths: [width; 5],
        loss_weights: [
            F::c(config.fnn.loss_weights[0]),
            F::c(config.fnn.loss_weights[1]),
            F::c(config.fnn.loss_weights[2]),
        ],
        learning_rate: F::c(config.fnn.learning_rate),
        batch_size: config.fnn.batch_size,
        max_epochs: config.fnn.max_epochs,
        patience: config.fnn.patience,
        val_fraction: 0.15,
        seed,
    };
    let (model, train_report) = fit_fnn(&x, &y, &spec, Some(&val_mask))?;
    Ok(TrainedModel {
        schema: feature_set.to_vec(),
        normalization: norm,
        estimator: Estimator::Fnn(model),
        metadata: TrainingMetadata {
            final_loss: train_report.final_train_loss,
            epochs: train_report.epochs_run,
            seed,
            warnings: Vec::new(),
        },
    })
}

struct ModelOutcome<F> {
    model_name: String,
    metrics: Vec<MetricCell<F>>,
    predictions: Vec<PredRecord<F>>,
}

/// Evaluate one trained model on the held-out cells of one test.
fn score_model<F: Real>(
    name: &str,
    model: &TrainedModel<F>,
    fold: &Fold<F>,
    test_index: usize,
    dm_scope: Option<Dm>,
    mape_floor: F,
) -> Result<ModelOutcome<F>> {
    let test = fold.test_raw.restrict(&model.schema)?;
    let preds = model.predict(&test)?.reported();
    let mut metrics = Vec::new();
    let mut predictions = Vec::new();

    let dms: Vec<Dm> = match dm_scope {
        Some(dm) => vec![dm],
        None => Dm::ALL.to_vec(),
    };
    for dm in dms {
        let truth = test.label_column(dm);
        let pred: Vec<F> = match (&preds, dm_scope) {
            (Predictions::Single(v), _) => v.clone(),
            (Predictions::Triple(v), _) => v.iter().map(|t| t[dm.index()]).collect(),
        };
        let mape_res = mape(&truth, &pred, mape_floor)?;
        metrics.push(MetricCell {
            model: name.to_string(),
            test_index,
            dm,
            mape_pct: mape_res.percent,
            rmse_pct: rmse_percent(&truth, &pred),
            mape_excluded: mape_res.excluded,
        });
        for ((row, t), p) in test.rows.iter().zip(&truth).zip(&pred) {
            predictions.push(PredRecord {
                model: name.to_string(),
                test_index,
                cell_id: row.cell_id.clone(),
                efc: row.efc,
                dm,
                truth: *t,
                pred: *p,
            });
        }
    }
    Ok(ModelOutcome {
        model_name: name.to_string(),
        metrics,
        predictions,
    })
}

/// Run the full protocol: per test, fit every requested model on the
/// training cells and score the held-out cells; aggregate; compare the
/// baselines against the SVR benchmark.
pub fn run_protocol<F: Real>(
    matrix: &FeatureMatrix<F>,
    cells: &[CellInfo],
    critical: Option<&CriticalFeatureSet>,
    plan: &TestPlan,
    config: &EvalConfig,
) -> Result<EvaluationReport<F>> {
    plan.validate(cells)?;
    if matrix.rows.is_empty() {
        return Err(Error::Parameter("empty feature matrix".to_string()));
    }

    let all_features: Vec<FeatureId> = matrix.feature_ids.clone();
    let critical_features: Option<Vec<FeatureId>> = critical.map(|c| {
        c.ordered_unified()
            .into_iter()
            .filter(|id| matrix.index_of(id).is_some())
            .collect()
    });
    let baseline_features: &[FeatureId] = critical_features
        .as_deref()
        .unwrap_or(all_features.as_slice());
    if config
        .fnn_variants
        .contains(&FeatureSetChoice::Critical)
        && critical_features.is_none()
    {
        return Err(Error::Dependency(
            "critical-feature variant requested but no critical set provided".to_string(),
        ));
    }

    let mape_floor = F::c(config.mape_floor);

    // The six tests are independent; run them through the deterministic
    // fan-out (output order is fixed regardless of job count).
    let fold_results: Vec<(Vec<ModelOutcome<F>>, Vec<FoldFailure>)> =
        par_map(plan.tests.len(), config.jobs.max(1), |test_index| {
            let fold = make_fold(
                matrix,
                cells,
                plan,
                test_index,
                config.validation_cells,
                config.seed,
            );
            let mut outcomes = Vec::new();
            let mut failures = Vec::new();

            if config.include_baselines {
                for kind in BaselineKind::ALL {
                    for dm in Dm::ALL {
                        let name = kind.label().to_string();
                        let seed = derive_seed(
                            config.seed,
                            &format!("eval.{}.{}.{}", name, dm.column(), test_index),
                        );
                        let result = fit_baseline(kind, &fold, baseline_features, dm, config, seed)
                            .and_then(|model| {
                                score_model(&name, &model, &fold, test_index, Some(dm), mape_floor)
                            });
                        match result {
                            Ok(outcome) => outcomes.push(outcome),
                            Err(e) => failures.push(FoldFailure {
                                model: format!("{name}/{}", dm.label()),
                                test_index,
                                message: e.to_string(),
                            }),
                        }
                    }
                }
            }

            for variant in &config.fnn_variants {
                let feature_set: &[FeatureId] = match variant {
                    FeatureSetChoice::Critical => critical_features.as_ref().expect("checked"),
                    FeatureSetChoice::All => &all_features,
                };
                let name = variant.fnn_label();
                let seed = derive_seed(config.seed, &format!("eval.{name}.{test_index}"));
                let result = fit_fnn_variant(&fold, feature_set, config, seed).and_then(|model| {
                    score_model(name, &model, &fold, test_index, None, mape_floor)
                });
                match result {
                    Ok(outcome) => outcomes.push(outcome),
                    Err(e) => failures.push(FoldFailure {
                        model: name.to_string(),
                        test_index,
                        message: e.to_string(),
                    }),
                }
            }
            (outcomes, failures)
        });

    let mut metrics: Vec<MetricCell<F>> = Vec::new();
    let mut predictions: Vec<PredRecord<F>> = Vec::new();
    let mut failures: Vec<FoldFailure> = Vec::new();
    let mut model_names: Vec<String> = Vec::new();
    for (outcomes, fold_failures) in fold_results {
        for outcome in outcomes {
            if !model_names.contains(&outcome.model_name) {
                model_names.push(outcome.model_name.clone());
            }
            metrics.extend(outcome.metrics);
            predictions.extend(outcome.predictions);
        }
        failures.extend(fold_failures);
    }

    // Aggregates over tests (n-1 spread).
    let mut aggregates = Vec::new();
    for model in &model_names {
        for dm in Dm::ALL {
            let mapes: Vec<F> = metrics
                .iter()
                .filter(|m| &m.model == model && m.dm == dm)
                .map(|m| m.mape_pct)
                .collect();
            let rmses: Vec<F> = metrics
                .iter()
                .filter(|m| &m.model == model && m.dm == dm)
                .map(|m| m.rmse_pct)
                .collect();
            if mapes.is_empty() {
                continue;
            }
            let spread = |xs: &[F]| {
                if xs.len() >= 2 {
                    stats::sample_std(xs)
                } else {
                    F::zero()
                }
            };
            aggregates.push(Aggregate {
                model: model.clone(),
                dm,
                amape: stats::mean(&mapes),
                std_mape: spread(&mapes),
                armse: stats::mean(&rmses),
                std_rmse: spread(&rmses),
                n_tests: mapes.len(),
            });
        }
    }

    // Baseline t-test matrix against the SVR benchmark (its own row is
    // zeros by construction).
    let benchmark = BaselineKind::Svr.label();
    let mut ttest = Vec::new();
    if config.include_baselines {
        for kind in BaselineKind::ALL {
            let model = kind.label();
            let mut per_dm = Vec::new();
            let mut sum = F::zero();
            for dm in Dm::ALL {
                let (a, b) = match (
                    aggregates.iter().find(|x| x.model == model && x.dm == dm),
                    aggregates.iter().find(|x| x.model == benchmark && x.dm == dm),
                ) {
                    (Some(a), Some(b)) => (a, b),
                    _ => continue,
                };
                let res = t_test(a.amape, a.std_mape, b.amape, b.std_mape, a.n_tests.max(2));
                sum += res.t;
                per_dm.push(res);
            }
            if per_dm.len() == 3 {
                ttest.push(TTestRow {
                    model: model.to_string(),
                    total: sum / F::c(3.0),
                    per_dm,
                });
            }
        }
    }

    Ok(EvaluationReport {
        plan: plan.clone(),
        metrics,
        aggregates,
        ttest,
        t_threshold: F::c(T_THRESHOLD),
        t_df: 10,
        failures,
        predictions,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_arithmetic() {
        let r = mape(&[0.10_f64, 0.20], &[0.11, 0.18], 0.005).unwrap();
        assert!((r.percent - 10.0).abs() < 1e-12);
        assert_eq!(r.excluded, 0);
        let exact = mape(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], 0.005).unwrap();
        assert_eq!(exact.percent, 0.0);
    }

    #[test]
    fn mape_floor_matches_masked_oracle() {
        let y_true = [0.001_f64, 0.10, 0.004, 0.20, 0.30];
        let y_pred = [0.50, 0.11, 0.90, 0.18, 0.33];
        let floor = 0.005;
        let r = mape(&y_true, &y_pred, floor).unwrap();
        // Oracle: explicit masking.
        let mut acc = 0.0;
        let mut n = 0;
        for (t, p) in y_true.iter().zip(&y_pred) {
            if t.abs() >= floor {
                acc += ((t - p) / t).abs();
                n += 1;
            }
        }
        assert_eq!(r.excluded, 2);
        assert!((r.percent - acc / n as f64 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn mape_with_everything_floored_is_undefined() {
        assert!(matches!(
            mape(&[0.001, 0.002], &[0.0, 0.0], 0.005),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn rmse_arithmetic_and_oracle() {
        // Errors of +1 and -1 percentage points.
        assert!((rmse_percent(&[0.10_f64, 0.20], &[0.11, 0.19]) - 1.0).abs() < 1e-9);
        assert_eq!(rmse_percent(&[0.5; 4], &[0.5; 4]), 0.0);
        let mut rng = crate::rng::Rng::new(91);
        let a: Vec<f64> = (0..100).map(|_| rng.next_f64()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.next_f64()).collect();
        let naive = {
            let mut sq = 0.0;
            for (x, y) in a.iter().zip(&b) {
                sq += (x - y) * (x - y);
            }
            (sq / 100.0).sqrt() * 100.0
        };
        let got = rmse_percent(&a, &b);
        assert!(((got - naive) / naive).abs() < 1e-12);
    }

    #[test]
    fn t_test_reproduces_reference_comparisons() {
        // Benchmark AMAPE/std triplets and their expected t values.
        let svr = [(9.98_f64, 1.91_f64), (15.53, 4.38), (13.92, 3.52)];
        let sgpr = [(11.51, 1.36), (17.17, 3.11), (17.67, 4.44)];
        let mlr = [(12.73, 1.87), (18.87, 2.15), (20.40, 4.62)];
        let enr = [(17.28, 3.50), (23.46, 2.33), (23.03, 4.98)];
        let expect_sgpr = [1.598, 0.748, 1.621];
        let expect_mlr = [2.520, 1.677, 2.733];
        let expect_enr = [4.485, 3.915, 3.659];
        for ((cand, bench), expect) in [(sgpr, svr), (mlr, svr), (enr, svr)]
            .iter()
            .zip([expect_sgpr, expect_mlr, expect_enr])
        {
            for k in 0..3 {
                let r = t_test(cand[k].0, cand[k].1, bench[k].0, bench[k].1, 6);
                assert!(
                    (r.t - expect[k]).abs() <= 0.005,
                    "t {} vs expected {}",
                    r.t,
                    expect[k]
                );
                assert_eq!(r.df, 10);
            }
        }
        // Self-comparison is exactly zero.
        let own = t_test(9.98, 1.91, 9.98, 1.91, 6);
        assert_eq!(own.t, 0.0);
        assert!(!own.significant);
    }

    #[test]
    fn t_test_is_antisymmetric() {
        let a = t_test(12.0, 2.0, 9.0, 1.5, 6);
        let b = t_test(9.0, 1.5, 12.0, 2.0, 6);
        assert_eq!(a.t, -b.t);
    }

    #[test]
    fn t_test_zero_spread_cases() {
        let same = t_test(5.0, 0.0, 5.0, 0.0, 6);
        assert_eq!(same.t, 0.0);
        assert!(!same.infinite);
        let differ = t_test(6.0, 0.0, 5.0, 0.0, 6);
        assert!(differ.infinite);
    }

    fn sixteen_cells() -> Vec<CellInfo> {
        let mut cells = Vec::new();
        for protocol in [Protocol::Ccd, Protocol::Dcd] {
            for i in 1..=8u32 {
                let class = match i {
                    1..=3 => TemperatureClass::T10,
                    4..=5 => TemperatureClass::T25,
                    _ => TemperatureClass::T40,
                };
                cells.push(CellInfo {
                    cell_id: format!("{}_{i}", protocol.as_str()),
                    protocol,
                    temperature_class: class,
                });
            }
        }
        cells
    }

    #[test]
    fn default_plan_is_valid_and_covering() {
        let cells = sixteen_cells();
        let plan = TestPlan::default_plan();
        plan.validate(&cells).unwrap();
        // Thirteen training cells per test.
        for t in 0..N_TESTS {
            assert_eq!(plan.train_cells(t, &cells).len(), 13);
        }
        // Every cell serves as a test cell at least once.
        let test_cells: BTreeSet<&str> = plan.tests.iter().flatten().map(String::as_str).collect();
        assert_eq!(test_cells.len(), 16);
    }

    #[test]
    fn duplicated_test_cell_fails_validation() {
        let cells = sixteen_cells();
        let mut plan = TestPlan::default_plan();
        plan.tests[2][1] = plan.tests[2][0].clone();
        assert!(plan.validate(&cells).is_err());
    }

    #[test]
    fn unknown_cell_fails_validation() {
        let cells = sixteen_cells();
        let mut plan = TestPlan::default_plan();
        plan.tests[0][0] = "CCD_99".to_string();
        assert!(plan.validate(&cells).is_err());
    }
}
