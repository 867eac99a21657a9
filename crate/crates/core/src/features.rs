//! The 91-feature statistical library and feature-matrix handling.
//!
//! Features are named `source.family.statistic`. The IC set (64) covers six
//! transform families of the incremental-capacity curve; the temperature set
//! (27) mirrors the same families on the charge-segment temperature series.
//! The enumeration is fixed: exactly 91 features, the cumulative-IC family
//! has exactly 16, and every critical-feature identifier used downstream is
//! present.
//!
//! Non-finite intermediates (for example skewness of a zero-variance
//! sequence) are substituted with 0 and flagged; an extracted vector never
//! contains NaN.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dm, DmLabel, LabelSource};
use crate::error::{Error, Result};
use crate::ic::{TransformBundle, ENTROPY_BINS};
use crate::io::{self, Table};
use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Ic,
    Temperature,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Ic => "ic",
            Source::Temperature => "temperature",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ic" => Some(Source::Ic),
            "temperature" => Some(Source::Temperature),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Basic,
    PosNegSplit,
    Cumulative,
    Entropy,
    Differences,
    Hybrid,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Basic => "basic",
            Family::PosNegSplit => "pos_neg_split",
            Family::Cumulative => "cumulative",
            Family::Entropy => "entropy",
            Family::Differences => "differences",
            Family::Hybrid => "hybrid",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "basic" => Some(Family::Basic),
            "pos_neg_split" => Some(Family::PosNegSplit),
            "cumulative" => Some(Family::Cumulative),
            "entropy" => Some(Family::Entropy),
            "differences" => Some(Family::Differences),
            "hybrid" => Some(Family::Hybrid),
            _ => None,
        }
    }
}

/// The statistic menu across all families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Statistic {
    Max,
    Min,
    Mean,
    Median,
    StdDev,
    Var,
    Skewness,
    Kurtosis,
    Range,
    P10,
    P30,
    P40,
    P60,
    P70,
    P80,
    P90,
    PosMean,
    PosMax,
    PosArea,
    PosCountFrac,
    NegMean,
    NegMin,
    NegArea,
    NegCountFrac,
    RiseFraction,
    ShannonEntropy,
    NormalizedEntropy,
    EntropyOfCumulativeHistogram,
    Thp,
    ThpXBasicMean,
    ThpXBasicStdDev,
    ThpXPosMean,
    ThpXNegMean,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        use Statistic::*;
        match self {
            Max => "max",
            Min => "min",
            Mean => "mean",
            Median => "median",
            StdDev => "std_dev",
            Var => "var",
            Skewness => "skewness",
            Kurtosis => "kurtosis",
            Range => "range",
            P10 => "p10",
            P30 => "p30",
            P40 => "p40",
            P60 => "p60",
            P70 => "p70",
            P80 => "p80",
            P90 => "p90",
            PosMean => "pos_mean",
            PosMax => "pos_max",
            PosArea => "pos_area",
            PosCountFrac => "pos_count_frac",
            NegMean => "neg_mean",
            NegMin => "neg_min",
            NegArea => "neg_area",
            NegCountFrac => "neg_count_frac",
            RiseFraction => "rise_fraction",
            ShannonEntropy => "shannon_entropy",
            NormalizedEntropy => "normalized_entropy",
            EntropyOfCumulativeHistogram => "entropy_of_cumulative_histogram",
            Thp => "thp",
            ThpXBasicMean => "thp_x_basic_mean",
            ThpXBasicStdDev => "thp_x_basic_std_dev",
            ThpXPosMean => "thp_x_pos_mean",
            ThpXNegMean => "thp_x_neg_mean",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        use Statistic::*;
        Some(match s {
            "max" => Max,
            "min" => Min,
            "mean" => Mean,
            "median" => Median,
            "std_dev" => StdDev,
            "var" => Var,
            "skewness" => Skewness,
            "kurtosis" => Kurtosis,
            "range" => Range,
            "p10" => P10,
            "p30" => P30,
            "p40" => P40,
            "p60" => P60,
            "p70" => P70,
            "p80" => P80,
            "p90" => P90,
            "pos_mean" => PosMean,
            "pos_max" => PosMax,
            "pos_area" => PosArea,
            "pos_count_frac" => PosCountFrac,
            "neg_mean" => NegMean,
            "neg_min" => NegMin,
            "neg_area" => NegArea,
            "neg_count_frac" => NegCountFrac,
            "rise_fraction" => RiseFraction,
            "shannon_entropy" => ShannonEntropy,
            "normalized_entropy" => NormalizedEntropy,
            "entropy_of_cumulative_histogram" => EntropyOfCumulativeHistogram,
            "thp" => Thp,
            "thp_x_basic_mean" => ThpXBasicMean,
            "thp_x_basic_std_dev" => ThpXBasicStdDev,
            "thp_x_pos_mean" => ThpXPosMean,
            "thp_x_neg_mean" => ThpXNegMean,
            _ => return None,
        })
    }
}

/// Identifier of one feature: data source, transform family, statistic.
///
/// Serializes as its canonical dotted name (`ic.basic.p30`), so it can key
/// JSON maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureId {
    pub source: Source,
    pub family: Family,
    pub statistic: Statistic,
}

impl Serialize for FeatureId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FeatureId::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown feature id '{s}'")))
    }
}

impl FeatureId {
    pub const fn new(source: Source, family: Family, statistic: Statistic) -> Self {
        Self {
            source,
            family,
            statistic,
        }
    }

    /// Parse `source.family.statistic`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = s.splitn(3, '.');
        let source = Source::parse(parts.next()?)?;
        let family = Family::parse(parts.next()?)?;
        let statistic = Statistic::parse(parts.next()?)?;
        Some(Self::new(source, family, statistic))
    }
}

impl std::fmt::Display for FeatureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}.{}.{}",
            self.source.as_str(),
            self.family.as_str(),
            self.statistic.as_str()
        )
    }
}

const M16: [Statistic; 16] = [
    Statistic::Max,
    Statistic::Min,
    Statistic::Mean,
    Statistic::Median,
    Statistic::StdDev,
    Statistic::Var,
    Statistic::Skewness,
    Statistic::Kurtosis,
    Statistic::Range,
    Statistic::P10,
    Statistic::P30,
    Statistic::P40,
    Statistic::P60,
    Statistic::P70,
    Statistic::P80,
    Statistic::P90,
];

/// The full fixed enumeration, in canonical column order. Always 91 entries.
pub fn feature_library() -> &'static [FeatureId] {
    static LIB: OnceLock<Vec<FeatureId>> = OnceLock::new();
    LIB.get_or_init(|| {
        let mut ids = Vec::with_capacity(91);
        let mut push = |source, family, stat| ids.push(FeatureId::new(source, family, stat));

        for stat in M16 {
            push(Source::Ic, Family::Basic, stat);
        }
        for stat in M16 {
            push(Source::Ic, Family::Cumulative, stat);
        }
        for stat in M16 {
            push(Source::Ic, Family::Differences, stat);
        }
        for stat in [
            Statistic::PosMean,
            Statistic::PosMax,
            Statistic::PosArea,
            Statistic::PosCountFrac,
            Statistic::NegMean,
            Statistic::NegMin,
            Statistic::NegArea,
            Statistic::NegCountFrac,
        ] {
            push(Source::Ic, Family::PosNegSplit, stat);
        }
        for stat in [
            Statistic::ShannonEntropy,
            Statistic::NormalizedEntropy,
            Statistic::EntropyOfCumulativeHistogram,
        ] {
            push(Source::Ic, Family::Entropy, stat);
        }
        for stat in [
            Statistic::Thp,
            Statistic::ThpXBasicMean,
            Statistic::ThpXBasicStdDev,
            Statistic::ThpXPosMean,
            Statistic::ThpXNegMean,
        ] {
            push(Source::Ic, Family::Hybrid, stat);
        }

        for stat in M16 {
            push(Source::Temperature, Family::Basic, stat);
        }
        for stat in [
            Statistic::Max,
            Statistic::Min,
            Statistic::Mean,
            Statistic::StdDev,
            Statistic::Range,
        ] {
            push(Source::Temperature, Family::Differences, stat);
        }
        for stat in [Statistic::Mean, Statistic::Max, Statistic::Range] {
            push(Source::Temperature, Family::Cumulative, stat);
        }
        push(Source::Temperature, Family::Entropy, Statistic::ShannonEntropy);
        push(Source::Temperature, Family::PosNegSplit, Statistic::RiseFraction);
        push(Source::Temperature, Family::Hybrid, Statistic::ThpXBasicMean);

        debug_assert_eq!(ids.len(), 91);
        ids
    })
}

/// Canonical column index of a feature.
pub fn feature_index(id: &FeatureId) -> Option<usize> {
    static INDEX: OnceLock<BTreeMap<FeatureId, usize>> = OnceLock::new();
    INDEX
        .get_or_init(|| {
            feature_library()
                .iter()
                .enumerate()
                .map(|(i, id)| (*id, i))
                .collect()
        })
        .get(id)
        .copied()
}

/// One cycle's feature values, aligned to [`feature_library`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<F> {
    pub cell_id: String,
    pub cycle_index: u32,
    pub efc: F,
    pub values: Vec<F>,
    /// Library indices whose value was substituted with 0 because the
    /// statistic was undefined (zero variance, empty part, ...).
    pub flagged: Vec<usize>,
}

impl<F: Real> FeatureVector<F> {
    pub fn get(&self, id: &FeatureId) -> Option<F> {
        feature_index(id).map(|i| self.values[i])
    }
}

/// Extract all 91 features from a transform bundle and the segment's
/// temperature series.
pub fn extract_features<F: Real>(
    bundle: &TransformBundle<F>,
    temp_series: &[F],
) -> Result<FeatureVector<F>> {
    if temp_series.len() < 16 {
        return Err(Error::Parameter(format!(
            "temperature series has {} samples, need 16",
            temp_series.len()
        )));
    }

    let mut values = Vec::with_capacity(91);
    let mut flagged = Vec::new();
    let push = |v: Option<F>, values: &mut Vec<F>, flagged: &mut Vec<usize>| {
        match v {
            Some(x) if x.is_finite() => values.push(x),
            _ => {
                flagged.push(values.len());
                values.push(F::zero());
            }
        }
    };

    let d = &bundle.basic.dq_dv;
    let w = bundle.basic.bin_width();
    let thp = bundle.throughput_ah;

    // ic.basic, ic.cumulative, ic.differences: the full statistic menu.
    for series in [d.as_slice(), bundle.cumulative.as_slice(), bundle.differences.as_slice()] {
        for v in stats16(series) {
            push(v, &mut values, &mut flagged);
        }
    }

    // ic.pos_neg_split.
    let pos = &bundle.pos_part;
    let neg = &bundle.neg_part;
    let total = F::from_count(d.len());
    let part = |xs: &[F], f: &dyn Fn(&[F]) -> F| {
        if xs.is_empty() {
            None
        } else {
            Some(f(xs))
        }
    };
    push(part(pos, &|xs| stats::mean(xs)), &mut values, &mut flagged);
    push(part(pos, &|xs| stats::max(xs)), &mut values, &mut flagged);
    push(
        part(pos, &|xs| xs.iter().copied().sum::<F>() * w),
        &mut values,
        &mut flagged,
    );
    push(Some(F::from_count(pos.len()) / total), &mut values, &mut flagged);
    push(part(neg, &|xs| stats::mean(xs)), &mut values, &mut flagged);
    push(part(neg, &|xs| stats::min(xs)), &mut values, &mut flagged);
    push(
        part(neg, &|xs| xs.iter().copied().sum::<F>() * w),
        &mut values,
        &mut flagged,
    );
    push(Some(F::from_count(neg.len()) / total), &mut values, &mut flagged);

    // ic.entropy.
    let h = stats::shannon_entropy(&bundle.entropy_inputs);
    push(Some(h), &mut values, &mut flagged);
    push(Some(h / F::c((ENTROPY_BINS as f64).ln())), &mut values, &mut flagged);
    let cum_hist = stats::equal_width_histogram(&bundle.cumulative, ENTROPY_BINS);
    push(Some(stats::shannon_entropy(&cum_hist)), &mut values, &mut flagged);

    // ic.hybrid.
    let pos_mean = part(pos, &|xs| stats::mean(xs));
    let neg_mean = part(neg, &|xs| stats::mean(xs));
    push(Some(thp), &mut values, &mut flagged);
    push(Some(thp * stats::mean(d)), &mut values, &mut flagged);
    push(Some(thp * stats::std_dev(d)), &mut values, &mut flagged);
    push(pos_mean.map(|m| thp * m), &mut values, &mut flagged);
    push(neg_mean.map(|m| thp * m), &mut values, &mut flagged);

    // temperature.basic.
    for v in stats16(temp_series) {
        push(v, &mut values, &mut flagged);
    }

    // temperature.differences.
    let dt: Vec<F> = temp_series.windows(2).map(|p| p[1] - p[0]).collect();
    push(Some(stats::max(&dt)), &mut values, &mut flagged);
    push(Some(stats::min(&dt)), &mut values, &mut flagged);
    push(Some(stats::mean(&dt)), &mut values, &mut flagged);
    push(Some(stats::std_dev(&dt)), &mut values, &mut flagged);
    push(Some(stats::range(&dt)), &mut values, &mut flagged);

    // temperature.cumulative (running sum of the series).
    let mut acc = F::zero();
    let cum_t: Vec<F> = temp_series
        .iter()
        .map(|t| {
            acc += *t;
            acc
        })
        .collect();
    push(Some(stats::mean(&cum_t)), &mut values, &mut flagged);
    push(Some(stats::max(&cum_t)), &mut values, &mut flagged);
    push(Some(stats::range(&cum_t)), &mut values, &mut flagged);

    // temperature.entropy.
    let t_hist = stats::equal_width_histogram(temp_series, ENTROPY_BINS);
    push(Some(stats::shannon_entropy(&t_hist)), &mut values, &mut flagged);

    // temperature.pos_neg_split.rise_fraction.
    let rises = dt.iter().filter(|x| **x > F::zero()).count();
    push(
        Some(F::from_count(rises) / F::from_count(dt.len())),
        &mut values,
        &mut flagged,
    );

    // temperature.hybrid.
    push(Some(thp * stats::mean(temp_series)), &mut values, &mut flagged);

    debug_assert_eq!(values.len(), feature_library().len());
    // Identity fields are attached by the caller, which knows the cycle.
    Ok(FeatureVector {
        cell_id: String::new(),
        cycle_index: 0,
        efc: F::zero(),
        values,
        flagged,
    })
}

/// The 16-statistic menu over one sequence, in library order.
fn stats16<F: Real>(xs: &[F]) -> [Option<F>; 16] {
    if xs.is_empty() {
        return [None; 16];
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pct = |p: f64| Some(stats::percentile_of_sorted(&sorted, p));
    [
        Some(sorted[sorted.len() - 1]),
        Some(sorted[0]),
        Some(stats::mean(xs)),
        pct(50.0),
        Some(stats::std_dev(xs)),
        Some(stats::variance(xs)),
        stats::skewness_checked(xs),
        stats::kurtosis_checked(xs),
        Some(sorted[sorted.len() - 1] - sorted[0]),
        pct(10.0),
        pct(30.0),
        pct(40.0),
        pct(60.0),
        pct(70.0),
        pct(80.0),
        pct(90.0),
    ]
}

/// Featurize every cycle of a labeled cell: original IC curve, transform
/// bundle, 91 features. The hybrid throughput covariate is the cell's
/// cumulative charge throughput at each cycle (EFC times nominal capacity).
///
/// Cycles whose IC computation fails are skipped and reported alongside the
/// matrix rather than aborting the batch.
#[allow(clippy::type_complexity)]
pub fn featurize_cell<F: Real>(
    cell: &crate::dataset::CellDataset<F>,
    bin_width_v: F,
) -> Result<(FeatureMatrix<F>, Vec<(u32, Error)>)> {
    if !cell.is_labeled() {
        return Err(Error::Parameter(format!(
            "cell {} has no interpolated labels yet",
            cell.cell_id
        )));
    }
    let mut rows = Vec::with_capacity(cell.cycles.len());
    let mut labels = Vec::with_capacity(cell.cycles.len());
    let mut skipped = Vec::new();
    for (rec, label) in cell.cycles.iter().zip(&cell.labels) {
        let throughput = rec.efc * cell.nominal_capacity_ah;
        let result = crate::ic::compute_ic(rec, bin_width_v)
            .and_then(|curve| crate::ic::build_transforms(&curve, throughput))
            .and_then(|bundle| extract_features(&bundle, &rec.temperature_c));
        match result {
            Ok(mut fv) => {
                fv.cell_id = rec.cell_id.clone();
                fv.cycle_index = rec.cycle_index;
                fv.efc = rec.efc;
                rows.push(fv);
                labels.push(*label);
            }
            Err(e) => skipped.push((rec.cycle_index, e)),
        }
    }
    Ok((FeatureMatrix::new(rows, labels), skipped))
}

/// Per-feature min-max statistics recorded at normalization time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStat<F> {
    pub min: F,
    pub max: F,
    pub degenerate: bool,
}

impl<F: Real> NormStat<F> {
    pub fn apply(&self, x: F) -> F {
        if self.degenerate {
            F::zero()
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }
}

/// A feature matrix: rows of feature vectors with aligned labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMatrix<F> {
    pub feature_ids: Vec<FeatureId>,
    pub rows: Vec<FeatureVector<F>>,
    pub labels: Vec<DmLabel<F>>,
    /// Present after normalization: the (min, max) recorded per feature.
    pub normalization: Option<Vec<NormStat<F>>>,
}

impl<F: Real> FeatureMatrix<F> {
    pub fn new(rows: Vec<FeatureVector<F>>, labels: Vec<DmLabel<F>>) -> Self {
        debug_assert_eq!(rows.len(), labels.len());
        Self {
            feature_ids: feature_library().to_vec(),
            rows,
            labels,
            normalization: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn label_column(&self, dm: Dm) -> Vec<F> {
        self.labels.iter().map(|l| l.get(dm)).collect()
    }

    /// Column index of a feature in this matrix (not the library).
    pub fn index_of(&self, id: &FeatureId) -> Option<usize> {
        self.feature_ids.iter().position(|f| f == id)
    }

    /// New matrix with only the requested features, in the requested order.
    pub fn restrict(&self, ids: &[FeatureId]) -> Result<FeatureMatrix<F>> {
        let mut indices = Vec::with_capacity(ids.len());
        let mut missing = Vec::new();
        for id in ids {
            match self.index_of(id) {
                Some(i) => indices.push(i),
                None => missing.push(id.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch {
                missing: missing.join(", "),
                extra: String::new(),
            });
        }
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureVector {
                cell_id: r.cell_id.clone(),
                cycle_index: r.cycle_index,
                efc: r.efc,
                values: indices.iter().map(|&i| r.values[i]).collect(),
                flagged: Vec::new(),
            })
            .collect();
        Ok(FeatureMatrix {
            feature_ids: ids.to_vec(),
            rows,
            labels: self.labels.clone(),
            normalization: self
                .normalization
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        })
    }

    /// Keep only rows whose cell id satisfies the predicate.
    pub fn filter_cells(&self, keep: impl Fn(&str) -> bool) -> FeatureMatrix<F> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (r, l) in self.rows.iter().zip(&self.labels) {
            if keep(&r.cell_id) {
                rows.push(r.clone());
                labels.push(*l);
            }
        }
        FeatureMatrix {
            feature_ids: self.feature_ids.clone(),
            rows,
            labels,
            normalization: self.normalization.clone(),
        }
    }

    /// Min-max normalize every feature column (training-set statistics are
    /// computed here and stored for reuse on unseen data). Degenerate
    /// features (max = min) map to 0 and are flagged.
    pub fn normalize(&self) -> Result<FeatureMatrix<F>> {
        if self.rows.len() < 2 {
            return Err(Error::Parameter(format!(
                "normalization needs at least 2 rows, found {}",
                self.rows.len()
            )));
        }
        let stats: Vec<NormStat<F>> = (0..self.n_features())
            .map(|j| {
                let col = self.column(j);
                let min = stats::min(&col);
                let max = stats::max(&col);
                NormStat {
                    min,
                    max,
                    degenerate: max == min,
                }
            })
            .collect();
        Ok(self.normalized_with(&stats))
    }

    /// Apply previously recorded normalization statistics; unseen values may
    /// land outside [0, 1].
    pub fn normalized_with(&self, stats: &[NormStat<F>]) -> FeatureMatrix<F> {
        debug_assert_eq!(stats.len(), self.n_features());
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureVector {
                cell_id: r.cell_id.clone(),
                cycle_index: r.cycle_index,
                efc: r.efc,
                values: r
                    .values
                    .iter()
                    .zip(stats)
                    .map(|(x, s)| s.apply(*x))
                    .collect(),
                flagged: r.flagged.clone(),
            })
            .collect();
        FeatureMatrix {
            feature_ids: self.feature_ids.clone(),
            rows,
            labels: self.labels.clone(),
            normalization: Some(stats.to_vec()),
        }
    }

    /// Persist as delimited text: `cell_id,cycle_index,efc,<features...>,
    /// lli,lam_pe,lam_ne`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = vec!["cell_id".into(), "cycle_index".into(), "efc".into()];
        header.extend(self.feature_ids.iter().map(|id| id.to_string()));
        header.extend(["lli", "lam_pe", "lam_ne"].map(String::from));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(r, l)| {
                let mut row = Vec::with_capacity(3 + r.values.len() + 3);
                row.push(r.cell_id.clone());
                row.push(r.cycle_index.to_string());
                row.push(io::fmt_scalar(r.efc));
                row.extend(r.values.iter().map(|v| io::fmt_scalar(*v)));
                row.push(io::fmt_scalar(l.lli));
                row.push(io::fmt_scalar(l.lam_pe));
                row.push(io::fmt_scalar(l.lam_ne));
                row
            })
            .collect();
        io::write_table(path, &header_refs, &rows)
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix<F>> {
        let table = Table::read(path)?;
        if table.header.len() < 7 {
            return Err(Error::parse(&table.path, 1, "too few columns for a feature matrix"));
        }
        let n_feat = table.header.len() - 6;
        let mut feature_ids = Vec::with_capacity(n_feat);
        for name in &table.header[3..3 + n_feat] {
            let id = FeatureId::parse(name).ok_or_else(|| {
                Error::parse(&table.path, 1, format!("unknown feature column '{name}'"))
            })?;
            feature_ids.push(id);
        }
        let mut rows = Vec::with_capacity(table.rows.len());
        let mut labels = Vec::with_capacity(table.rows.len());
        for i in 0..table.rows.len() {
            let cell_id: String = table.field(i, 0)?;
            let cycle_index: u32 = table.field(i, 1)?;
            let efc: F = table.scalar_field(i, 2)?;
            let mut values = Vec::with_capacity(n_feat);
            for j in 0..n_feat {
                values.push(table.scalar_field(i, 3 + j)?);
            }
            let lli: F = table.scalar_field(i, 3 + n_feat)?;
            let lam_pe: F = table.scalar_field(i, 4 + n_feat)?;
            let lam_ne: F = table.scalar_field(i, 5 + n_feat)?;
            rows.push(FeatureVector {
                cell_id,
                cycle_index,
                efc,
                values,
                flagged: Vec::new(),
            });
            labels.push(DmLabel {
                lli,
                lam_pe,
                lam_ne,
                source: LabelSource::Interpolated,
            });
        }
        Ok(FeatureMatrix {
            feature_ids,
            rows,
            labels,
            normalization: None,
        })
    }
}
