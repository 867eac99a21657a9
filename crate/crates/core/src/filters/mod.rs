//! The three-stage critical-feature filter pipeline.
//!
//! Stage 1 screens by dispersion: absolute mean deviation over normalized
//! feature columns, keeping a fixed count (63 of 91 by default). Stage 2
//! scores the survivors two ways in parallel (permutation importance under
//! a gradient-boosted ensemble, mutual information with each degradation
//! mode), and a feature passing either screen for a mode becomes critical
//! for that mode. The unified critical set is the union over modes.
//!
//! Ordering is fixed: permutation importance and mutual information are only
//! ever computed over the dispersion survivors.

pub mod gbt;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dm;
use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};
use crate::io;
use crate::linalg::Mat;
use crate::parallel::par_map;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Real;
use crate::stats;

pub use gbt::{rmse, train_gbt, GbtModel, GbtParams};

/// Default dispersion-stage keep ratio: 63 of the 91 library features.
pub const DEFAULT_KEEP_RATIO: f64 = 63.0 / 91.0;
/// Default permutation-importance repeat count.
pub const DEFAULT_PI_REPEATS: usize = 100;
/// Default mutual-information bin count (equal-frequency per variable).
pub const DEFAULT_MI_BINS: usize = 16;

/// Scores produced by the three filters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterScores<F> {
    /// Absolute mean deviation per feature, on normalized values.
    pub amd: BTreeMap<FeatureId, F>,
    /// Permutation-importance score per (survivor, mode). May be negative.
    pub pi: BTreeMap<Dm, BTreeMap<FeatureId, F>>,
    /// Mutual information per (survivor, mode), in nats, >= 0.
    pub mi: BTreeMap<Dm, BTreeMap<FeatureId, F>>,
}

/// Which second-stage filter(s) admitted a feature for a mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub pi: bool,
    pub mi: bool,
}

/// Output of the filter pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalFeatureSet {
    pub per_dm: BTreeMap<Dm, BTreeSet<FeatureId>>,
    pub unified: BTreeSet<FeatureId>,
    /// For each admitted feature, per mode, which filter(s) admitted it.
    pub provenance: BTreeMap<FeatureId, BTreeMap<Dm, Provenance>>,
}

impl CriticalFeatureSet {
    /// Unified set in canonical library order (stable model schemas).
    pub fn ordered_unified(&self) -> Vec<FeatureId> {
        crate::features::feature_library()
            .iter()
            .filter(|id| self.unified.contains(id))
            .copied()
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parameter(format!("serializing critical set: {e}")))?;
        io::write_text(path, &text)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }
}

/// Stage 1: keep the `ceil(keep_ratio * n_features)` most dispersed features
/// by absolute mean deviation. Zero-dispersion (constant) features are never
/// retained. Returns (survivors in canonical order, all scores).
pub fn amd_filter<F: Real>(
    matrix: &FeatureMatrix<F>,
    keep_ratio: f64,
) -> Result<(Vec<FeatureId>, BTreeMap<FeatureId, F>)> {
    if matrix.normalization.is_none() {
        return Err(Error::Parameter(
            "dispersion filter expects a normalized feature matrix".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&keep_ratio) {
        return Err(Error::Parameter(format!("keep_ratio must be in [0, 1], got {keep_ratio}")));
    }
    let n = matrix.n_features();
    let keep = (keep_ratio * n as f64).ceil() as usize;

    let mut scores: Vec<(usize, F)> = (0..n)
        .map(|j| (j, stats::abs_mean_deviation(&matrix.column(j))))
        .collect();
    // Descending score; canonical column order breaks ties.
    scores.sort_by(|(ia, a), (ib, b)| {
        b.partial_cmp(a)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.cmp(ib))
    });

    let mut survivors: Vec<FeatureId> = scores
        .iter()
        .take(keep)
        .filter(|(_, s)| *s > F::zero())
        .map(|(j, _)| matrix.feature_ids[*j])
        .collect();
    // Canonical order for downstream determinism.
    survivors.sort_by_key(|id| crate::features::feature_index(id).unwrap_or(usize::MAX));

    let score_map = scores
        .into_iter()
        .map(|(j, s)| (matrix.feature_ids[j], s))
        .collect();
    Ok((survivors, score_map))
}

/// Stage 2a seed schedule: repeat `r` of a run seeded with `seed` shuffles
/// with `pi_repeat_seed(seed, r)`. Exposed so single repeats can reproduce
/// any slice of a longer run.
pub fn pi_repeat_seed(seed: u64, repeat: usize) -> u64 {
    derive_seed(seed, &format!("filter.pi.repeat.{repeat}"))
}

/// Stage 2a: permutation importance of each column of `x` under `model`.
///
/// Per repeat and feature, the column is shuffled (seeded), the model is
/// re-evaluated without retraining, and the score is the mean RMSE increase
/// over repeats.
pub fn permutation_importance<F: Real>(
    model: &GbtModel<F>,
    x: &Mat<F>,
    y: &[F],
    repeats: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<F>> {
    if repeats == 0 {
        return Err(Error::Parameter("permutation importance needs repeats >= 1".to_string()));
    }
    let schedule: Vec<u64> = (0..repeats).map(|r| pi_repeat_seed(seed, r)).collect();
    permutation_importance_with_schedule(model, x, y, &schedule, jobs)
}

/// Permutation importance with an explicit per-repeat seed schedule.
pub fn permutation_importance_with_schedule<F: Real>(
    model: &GbtModel<F>,
    x: &Mat<F>,
    y: &[F],
    repeat_seeds: &[u64],
    jobs: usize,
) -> Result<Vec<F>> {
    let n = x.n_rows();
    let p = x.n_cols();
    if y.len() != n {
        return Err(Error::Parameter("label length does not match row count".to_string()));
    }
    let baseline_pred = model.predict(x);
    let baseline = rmse(y, &baseline_pred);

    // Permuting column j only changes the trees that split on it; cache the
    // per-row contribution of each such tree once and re-evaluate just those
    // trees on the modified rows.
    let scores = par_map(p, jobs, |j| {
        let affected = model.trees_using(j);
        if affected.is_empty() {
            // No tree reads this feature: every permutation leaves the
            // predictions unchanged.
            return F::zero();
        }
        let column: Vec<F> = (0..n).map(|i| x[(i, j)]).collect();
        let affected_base: Vec<F> = (0..n)
            .map(|i| {
                affected
                    .iter()
                    .map(|&t| model.tree_contribution(t, x.row(i)))
                    .sum()
            })
            .collect();

        let mut acc = F::zero();
        let mut shuffled = column.clone();
        let mut row = vec![F::zero(); p];
        for seed_r in repeat_seeds {
            shuffled.copy_from_slice(&column);
            let mut rng = Rng::new(derive_seed(*seed_r, &format!("col.{j}")));
            rng.shuffle(&mut shuffled);
            let mut sq = F::zero();
            for i in 0..n {
                row.copy_from_slice(x.row(i));
                row[j] = shuffled[i];
                let affected_new: F = affected
                    .iter()
                    .map(|&t| model.tree_contribution(t, &row))
                    .sum();
                let pred = baseline_pred[i] - affected_base[i] + affected_new;
                let e = y[i] - pred;
                sq += e * e;
            }
            acc += (sq / F::from_count(n)).sqrt() - baseline;
        }
        acc / F::from_count(repeat_seeds.len())
    });
    Ok(scores)
}

/// Stage 2b: plug-in mutual information from a 2-D histogram with
/// equal-frequency bins per variable. Result in nats, clamped at 0.
///
/// The summation iterates unordered bin pairs symmetrically, so
/// `mutual_information(x, y, b) == mutual_information(y, x, b)` bitwise.
pub fn mutual_information<F: Real>(x: &[F], y: &[F], bins: usize) -> Result<F> {
    if x.len() != y.len() {
        return Err(Error::Parameter(format!(
            "mutual information needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 100 {
        return Err(Error::Parameter(format!("mutual information needs >= 100 samples, got {n}")));
    }
    if bins < 2 {
        return Err(Error::Parameter(format!("mutual information needs >= 2 bins, got {bins}")));
    }

    let ax = stats::equal_frequency_bins(x, bins);
    let ay = stats::equal_frequency_bins(y, bins);
    let mut joint = vec![0usize; bins * bins];
    let mut px = vec![0usize; bins];
    let mut py = vec![0usize; bins];
    for (a, b) in ax.iter().zip(&ay) {
        joint[a * bins + b] += 1;
        px[*a] += 1;
        py[*b] += 1;
    }

    let nf = F::from_count(n);
    let term = |a: usize, b: usize| -> F {
        let c = joint[a * bins + b];
        if c == 0 {
            return F::zero();
        }
        let pab = F::from_count(c) / nf;
        let pa = F::from_count(px[a]) / nf;
        let pb = F::from_count(py[b]) / nf;
        pab * (pab / (pa * pb)).ln()
    };

    // Sum diagonal terms first, then each unordered off-diagonal pair as one
    // commutative addition; swapping x and y transposes the joint histogram
    // but leaves this summation order unchanged.
    let mut mi = F::zero();
    for a in 0..bins {
        mi += term(a, a);
    }
    for a in 0..bins {
        for b in a + 1..bins {
            mi += term(a, b) + term(b, a);
        }
    }
    Ok(mi.max(F::zero()))
}

/// Threshold rule for the second-stage screens.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum ThresholdRule<F> {
    /// Pass when the score exceeds the survivor mean (per mode, per filter).
    AboveMean,
    /// Fixed absolute cutoffs.
    Absolute { pi: F, mi: F },
}

/// Stage 3: union the two screens per mode, then unify across modes.
/// Raising any feature's score can only add it, never remove it.
pub fn assemble_critical_set<F: Real>(
    scores: &FilterScores<F>,
    amd_survivors: &[FeatureId],
    rule: ThresholdRule<F>,
) -> Result<CriticalFeatureSet> {
    let mut per_dm: BTreeMap<Dm, BTreeSet<FeatureId>> = BTreeMap::new();
    let mut provenance: BTreeMap<FeatureId, BTreeMap<Dm, Provenance>> = BTreeMap::new();

    for dm in Dm::ALL {
        let pi = scores
            .pi
            .get(&dm)
            .ok_or_else(|| Error::Parameter(format!("missing permutation scores for {dm}")))?;
        let mi = scores
            .mi
            .get(&dm)
            .ok_or_else(|| Error::Parameter(format!("missing mutual-information scores for {dm}")))?;
        for id in amd_survivors {
            if !pi.contains_key(id) || !mi.contains_key(id) {
                return Err(Error::Parameter(format!(
                    "feature {id} lacks a {dm} score; all survivors must be scored"
                )));
            }
        }

        let (pi_cut, mi_cut) = match rule {
            ThresholdRule::Absolute { pi, mi } => (pi, mi),
            ThresholdRule::AboveMean => {
                let pi_vals: Vec<F> = amd_survivors.iter().map(|id| pi[id]).collect();
                let mi_vals: Vec<F> = amd_survivors.iter().map(|id| mi[id]).collect();
                (stats::mean(&pi_vals), stats::mean(&mi_vals))
            }
        };

        let mut selected = BTreeSet::new();
        for id in amd_survivors {
            let pass = Provenance {
                pi: pi[id] > pi_cut,
                mi: mi[id] > mi_cut,
            };
            if pass.pi || pass.mi {
                selected.insert(*id);
                provenance.entry(*id).or_default().insert(dm, pass);
            }
        }
        per_dm.insert(dm, selected);
    }

    let unified = per_dm.values().flatten().copied().collect();
    Ok(CriticalFeatureSet {
        per_dm,
        unified,
        provenance,
    })
}

/// Structured score report: one row per library feature with AMD, per-mode
/// PI and MI scores, pass flags, and provenance.
pub fn write_scores_csv<F: Real>(
    scores: &FilterScores<F>,
    set: &CriticalFeatureSet,
    amd_survivors: &[FeatureId],
    path: &Path,
) -> Result<()> {
    let mut header = vec!["feature".to_string(), "amd".to_string(), "amd_survivor".to_string()];
    for dm in Dm::ALL {
        header.push(format!("pi_{}", dm.column()));
    }
    for dm in Dm::ALL {
        header.push(format!("mi_{}", dm.column()));
    }
    for dm in Dm::ALL {
        header.push(format!("critical_{}", dm.column()));
    }
    header.push("provenance".to_string());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

    let survivor_set: BTreeSet<_> = amd_survivors.iter().collect();
    let rows: Vec<Vec<String>> = crate::features::feature_library()
        .iter()
        .map(|id| {
            let mut row = vec![
                id.to_string(),
                scores.amd.get(id).map(|v| io::fmt_scalar(*v)).unwrap_or_default(),
                (survivor_set.contains(id) as u8).to_string(),
            ];
            for table in [&scores.pi, &scores.mi] {
                for dm in Dm::ALL {
                    row.push(
                        table
                            .get(&dm)
                            .and_then(|m| m.get(id))
                            .map(|v| io::fmt_scalar(*v))
                            .unwrap_or_default(),
                    );
                }
            }
            for dm in Dm::ALL {
                let is_critical = set.per_dm.get(&dm).is_some_and(|s| s.contains(id));
                row.push((is_critical as u8).to_string());
            }
            let prov = set
                .provenance
                .get(id)
                .map(|per_dm| {
                    per_dm
                        .iter()
                        .map(|(dm, p)| {
                            let mut tags = Vec::new();
                            if p.pi {
                                tags.push("pi");
                            }
                            if p.mi {
                                tags.push("mi");
                            }
                            format!("{}:{}", dm.column(), tags.join("+"))
                        })
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default();
            row.push(prov);
            row
        })
        .collect();
    io::write_table(path, &header_refs, &rows)
}
