//! Cycle ingestion and degradation-mode labeling.
//!
//! A cell arrives as one directory of delimited-text files: `meta.csv`
//! (protocol, temperature class, nominal capacity), `anchors.csv` (sparse
//! RPT-derived degradation labels over EFC), and `cycles/cycle_<n>.csv`
//! (one time series per charging segment). Ingestion validates anchors,
//! removes abnormal cycles with a recorded reason, and computes each cycle's
//! EFC from cumulative charge throughput. Labeling interpolates the anchors
//! piecewise-linearly in EFC onto every retained cycle.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Table};
use crate::scalar::Real;

/// Discharge protocol of the aging experiment the cell came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Ccd,
    Dcd,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Ccd => "CCD",
            Protocol::Dcd => "DCD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CCD" => Some(Protocol::Ccd),
            "DCD" => Some(Protocol::Dcd),
            _ => None,
        }
    }
}

/// Ambient temperature class of the aging experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemperatureClass {
    T10,
    T25,
    T40,
}

impl TemperatureClass {
    pub fn setpoint_c(self) -> f64 {
        match self {
            TemperatureClass::T10 => 10.0,
            TemperatureClass::T25 => 25.0,
            TemperatureClass::T40 => 40.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemperatureClass::T10 => "T10",
            TemperatureClass::T25 => "T25",
            TemperatureClass::T40 => "T40",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T10" | "10" => Some(TemperatureClass::T10),
            "T25" | "25" => Some(TemperatureClass::T25),
            "T40" | "40" => Some(TemperatureClass::T40),
            _ => None,
        }
    }
}

/// One of the three degradation modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dm {
    Lli,
    LamPe,
    LamNe,
}

impl Dm {
    pub const ALL: [Dm; 3] = [Dm::Lli, Dm::LamPe, Dm::LamNe];

    pub fn index(self) -> usize {
        match self {
            Dm::Lli => 0,
            Dm::LamPe => 1,
            Dm::LamNe => 2,
        }
    }

    /// Column name used in file formats.
    pub fn column(self) -> &'static str {
        match self {
            Dm::Lli => "lli",
            Dm::LamPe => "lam_pe",
            Dm::LamNe => "lam_ne",
        }
    }

    /// Human-facing label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Dm::Lli => "LLI",
            Dm::LamPe => "LAMpe",
            Dm::LamNe => "LAMne",
        }
    }
}

impl std::fmt::Display for Dm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Where a per-cycle label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    RptAnchor,
    Interpolated,
}

/// Degradation-mode fractions for one cycle. Stored as fractions in [0, 1];
/// reports multiply by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmLabel<F> {
    pub lli: F,
    pub lam_pe: F,
    pub lam_ne: F,
    pub source: LabelSource,
}

impl<F: Real> DmLabel<F> {
    pub fn get(&self, dm: Dm) -> F {
        match dm {
            Dm::Lli => self.lli,
            Dm::LamPe => self.lam_pe,
            Dm::LamNe => self.lam_ne,
        }
    }
}

/// Sparse ground-truth label at a known EFC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor<F> {
    pub efc: F,
    pub label: DmLabel<F>,
}

/// One charging segment with aligned signal sequences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord<F> {
    pub cell_id: String,
    pub cycle_index: u32,
    /// Equivalent full cycles accumulated through the end of this cycle.
    pub efc: F,
    pub time_s: Vec<F>,
    pub voltage_v: Vec<F>,
    pub current_a: Vec<F>,
    pub capacity_ah: Vec<F>,
    pub temperature_c: Vec<F>,
    /// Non-fatal quality markers attached during cleaning.
    pub flags: BTreeSet<String>,
}

impl<F: Real> CycleRecord<F> {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    /// Charge moved within this segment.
    pub fn capacity_span(&self) -> F {
        match (self.capacity_ah.first(), self.capacity_ah.last()) {
            (Some(a), Some(b)) => *b - *a,
            _ => F::zero(),
        }
    }
}

/// A removed cycle and why it was removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedCycle {
    pub cycle_index: u32,
    pub reason: String,
}

/// All retained cycles of one cell plus metadata, anchors, and (after
/// labeling) one interpolated label per cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellDataset<F> {
    pub cell_id: String,
    pub protocol: Protocol,
    pub temperature_class: TemperatureClass,
    pub nominal_capacity_ah: F,
    pub cycles: Vec<CycleRecord<F>>,
    pub anchors: Vec<Anchor<F>>,
    /// Parallel to `cycles` once labeled; empty before `interpolate_labels`.
    pub labels: Vec<DmLabel<F>>,
    pub dropped: Vec<DroppedCycle>,
}

impl<F: Real> CellDataset<F> {
    pub fn is_labeled(&self) -> bool {
        !self.cycles.is_empty() && self.labels.len() == self.cycles.len()
    }

    pub fn save_json(&self, path: &Path) -> Result<()>
    where
        F: Serialize,
    {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Parameter(format!("serializing {}: {e}", self.cell_id)))?;
        io::write_text(path, &text)
    }

    pub fn load_json(path: &Path) -> Result<Self>
    where
        F: for<'de> Deserialize<'de>,
    {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }
}

/// Ingest settings: voltage bounds, abnormal-cycle thresholds, file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// Cleaning bounds: samples outside [v_min, v_max] volts are trimmed.
    pub v_min_v: f64,
    pub v_max_v: f64,
    /// Drop a cycle when |T - setpoint| exceeds this band on more than
    /// `temp_excursion_frac` of its samples.
    pub temp_band_c: f64,
    pub temp_excursion_frac: f64,
    /// Drop a cycle when capacity regresses by more than this within the
    /// charge segment; smaller dips are flattened to keep capacity monotone.
    pub capacity_regression_ah: f64,
    /// Minimum samples per cycle after cleaning.
    pub min_samples: usize,
    /// Subdirectory holding per-cycle files, and their filename prefix.
    pub cycles_subdir: String,
    pub cycle_file_prefix: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            v_min_v: 2.5,
            v_max_v: 4.3,
            temp_band_c: 5.0,
            temp_excursion_frac: 0.05,
            capacity_regression_ah: 0.001,
            min_samples: 16,
            cycles_subdir: "cycles".to_string(),
            cycle_file_prefix: "cycle_".to_string(),
        }
    }
}

pub const CYCLE_COLUMNS: [&str; 5] =
    ["time_s", "voltage_v", "current_a", "capacity_ah", "temperature_c"];
pub const ANCHOR_COLUMNS: [&str; 4] = ["efc", "lli", "lam_pe", "lam_ne"];
pub const META_COLUMNS: [&str; 3] = ["protocol", "temperature_class", "nominal_capacity_ah"];

/// Ingest one cell directory into a cleaned, unlabeled dataset.
///
/// Abnormal cycles (non-finite samples, temperature excursions, capacity
/// regressions, too few samples after cleaning) are removed and logged with
/// a reason. Anchors are validated: at least two, sorted by EFC, each DM
/// component non-decreasing.
pub fn ingest_cell<F: Real>(cell_dir: &Path, config: &IngestConfig) -> Result<CellDataset<F>> {
    let cell_id = cell_dir
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "cell".to_string());

    let meta = Table::read(&cell_dir.join("meta.csv"))?;
    meta.expect_header(&META_COLUMNS)?;
    if meta.rows.is_empty() {
        return Err(Error::parse(&meta.path, 1, "meta.csv has no data row"));
    }
    let protocol_raw: String = meta.field(0, 0)?;
    let protocol = Protocol::parse(&protocol_raw)
        .ok_or_else(|| Error::parse(&meta.path, meta.rows[0].0, format!("unknown protocol '{protocol_raw}'")))?;
    let class_raw: String = meta.field(0, 1)?;
    let temperature_class = TemperatureClass::parse(&class_raw)
        .ok_or_else(|| Error::parse(&meta.path, meta.rows[0].0, format!("unknown temperature class '{class_raw}'")))?;
    let nominal_capacity_ah: F = meta.scalar_field(0, 2)?;
    if nominal_capacity_ah <= F::zero() {
        return Err(Error::parse(&meta.path, meta.rows[0].0, "nominal capacity must be positive"));
    }

    let anchors = read_anchors(&cell_dir.join("anchors.csv"), &cell_id)?;

    // Per-cycle files, ordered by the numeric index in their filename.
    let cycles_dir = cell_dir.join(&config.cycles_subdir);
    let mut cycle_files: Vec<(u32, std::path::PathBuf)> = Vec::new();
    let entries = fs::read_dir(&cycles_dir)
        .map_err(|e| Error::io(cycles_dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(cycles_dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(idx) = name
            .strip_prefix(&config.cycle_file_prefix)
            .and_then(|rest| rest.strip_suffix(".csv"))
            .and_then(|digits| digits.parse::<u32>().ok())
        {
            cycle_files.push((idx, entry.path()));
        }
    }
    cycle_files.sort_by_key(|(idx, _)| *idx);
    if cycle_files.is_empty() {
        return Err(Error::Dependency(format!(
            "no cycle files matching {}*.csv under {}",
            config.cycle_file_prefix,
            cycles_dir.display()
        )));
    }

    let setpoint = F::c(temperature_class.setpoint_c());
    let mut cycles = Vec::new();
    let mut dropped = Vec::new();
    let mut throughput = F::zero();
    for (cycle_index, path) in cycle_files {
        let raw = read_cycle_file::<F>(&path, &cell_id, cycle_index)?;
        // Throughput accumulates over every parseable cycle, abnormal or not:
        // the cell saw that charge regardless of record quality.
        let span = raw.capacity_span();
        if span.is_finite() && span > F::zero() {
            throughput += span;
        }
        match clean_cycle(raw, config, setpoint) {
            Ok(mut rec) => {
                rec.efc = throughput / nominal_capacity_ah;
                cycles.push(rec);
            }
            Err(reason) => dropped.push(DroppedCycle {
                cycle_index,
                reason,
            }),
        }
    }

    Ok(CellDataset {
        cell_id,
        protocol,
        temperature_class,
        nominal_capacity_ah,
        cycles,
        anchors,
        labels: Vec::new(),
        dropped,
    })
}

fn read_anchors<F: Real>(path: &Path, cell_id: &str) -> Result<Vec<Anchor<F>>> {
    let table = Table::read(path)?;
    table.expect_header(&ANCHOR_COLUMNS)?;
    let mut anchors: Vec<Anchor<F>> = Vec::new();
    for row in 0..table.rows.len() {
        let efc: F = table.scalar_field(row, 0)?;
        let lli: F = table.scalar_field(row, 1)?;
        let lam_pe: F = table.scalar_field(row, 2)?;
        let lam_ne: F = table.scalar_field(row, 3)?;
        for (name, v) in [("lli", lli), ("lam_pe", lam_pe), ("lam_ne", lam_ne)] {
            if !(F::zero()..=F::one()).contains(&v) || !v.is_finite() {
                return Err(Error::parse(
                    &table.path,
                    table.rows[row].0,
                    format!("{name} must be a fraction in [0, 1], found {v}"),
                ));
            }
        }
        anchors.push(Anchor {
            efc,
            label: DmLabel {
                lli,
                lam_pe,
                lam_ne,
                source: LabelSource::RptAnchor,
            },
        });
    }
    if anchors.len() < 2 {
        return Err(Error::InsufficientAnchors {
            cell: cell_id.to_string(),
            found: anchors.len(),
        });
    }
    anchors.sort_by(|a, b| a.efc.partial_cmp(&b.efc).unwrap_or(std::cmp::Ordering::Equal));
    for pair in anchors.windows(2) {
        for dm in Dm::ALL {
            let (a, b) = (pair[0].label.get(dm), pair[1].label.get(dm));
            if b < a {
                return Err(Error::NonMonotoneAnchors {
                    cell: cell_id.to_string(),
                    component: dm.column().to_string(),
                    efc_a: pair[0].efc.as_f64(),
                    value_a: a.as_f64(),
                    efc_b: pair[1].efc.as_f64(),
                    value_b: b.as_f64(),
                });
            }
        }
    }
    Ok(anchors)
}

fn read_cycle_file<F: Real>(path: &Path, cell_id: &str, cycle_index: u32) -> Result<CycleRecord<F>> {
    let table = Table::read(path)?;
    table.expect_header(&CYCLE_COLUMNS)?;
    let n = table.rows.len();
    let mut rec = CycleRecord {
        cell_id: cell_id.to_string(),
        cycle_index,
        efc: F::zero(),
        time_s: Vec::with_capacity(n),
        voltage_v: Vec::with_capacity(n),
        current_a: Vec::with_capacity(n),
        capacity_ah: Vec::with_capacity(n),
        temperature_c: Vec::with_capacity(n),
        flags: BTreeSet::new(),
    };
    for row in 0..n {
        rec.time_s.push(table.scalar_field(row, 0)?);
        rec.voltage_v.push(table.scalar_field(row, 1)?);
        rec.current_a.push(table.scalar_field(row, 2)?);
        rec.capacity_ah.push(table.scalar_field(row, 3)?);
        rec.temperature_c.push(table.scalar_field(row, 4)?);
    }
    Ok(rec)
}

/// Apply cleaning and the abnormal-cycle predicates. `Err` carries the
/// removal reason.
fn clean_cycle<F: Real>(
    mut rec: CycleRecord<F>,
    config: &IngestConfig,
    setpoint_c: F,
) -> std::result::Result<CycleRecord<F>, String> {
    let finite = |xs: &[F]| xs.iter().all(|v| v.is_finite());
    if !(finite(&rec.time_s)
        && finite(&rec.voltage_v)
        && finite(&rec.current_a)
        && finite(&rec.capacity_ah)
        && finite(&rec.temperature_c))
    {
        return Err("sensor-fault: non-finite sample".to_string());
    }

    // Trim samples outside the configured voltage bounds.
    let lo = F::c(config.v_min_v);
    let hi = F::c(config.v_max_v);
    let keep: Vec<bool> = rec.voltage_v.iter().map(|v| (lo..=hi).contains(v)).collect();
    if keep.iter().any(|k| !k) {
        let filter = |xs: &mut Vec<F>| {
            let mut i = 0;
            xs.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        };
        filter(&mut rec.time_s);
        filter(&mut rec.voltage_v);
        filter(&mut rec.current_a);
        filter(&mut rec.capacity_ah);
        filter(&mut rec.temperature_c);
        rec.flags.insert("voltage-trimmed".to_string());
    }

    if rec.len() < config.min_samples {
        return Err(format!(
            "too-few-samples: {} after cleaning, need {}",
            rec.len(),
            config.min_samples
        ));
    }

    if rec.time_s.windows(2).any(|w| w[1] <= w[0]) {
        return Err("non-monotone-time".to_string());
    }

    // Temperature excursion: too many samples outside the control band.
    let band = F::c(config.temp_band_c);
    let excursions = rec
        .temperature_c
        .iter()
        .filter(|t| (**t - setpoint_c).abs() > band)
        .count();
    if (excursions as f64) > config.temp_excursion_frac * rec.len() as f64 {
        return Err(format!(
            "temperature-excursion: {excursions} of {} samples outside ±{} °C",
            rec.len(),
            config.temp_band_c
        ));
    }

    // Capacity regression: a real drop means a record error; tiny dips are
    // flattened so the stored sequence is non-decreasing.
    let tol = F::c(config.capacity_regression_ah);
    let mut running_max = rec.capacity_ah[0];
    let mut flattened = false;
    for q in rec.capacity_ah.iter_mut() {
        if *q < running_max {
            if running_max - *q > tol {
                return Err(format!(
                    "capacity-regression: drop of {} Ah exceeds {} Ah",
                    (running_max - *q).as_f64(),
                    config.capacity_regression_ah
                ));
            }
            *q = running_max;
            flattened = true;
        } else {
            running_max = *q;
        }
    }
    if flattened {
        rec.flags.insert("capacity-monotonized".to_string());
    }

    Ok(rec)
}

/// Evaluate the piecewise-linear anchor interpolant at `efc`.
///
/// Returns `None` outside the anchor range. At an anchor EFC the anchor's
/// label is returned verbatim.
pub fn label_at<F: Real>(anchors: &[Anchor<F>], efc: F) -> Option<DmLabel<F>> {
    let first = anchors.first()?;
    let last = anchors.last()?;
    if efc < first.efc || efc > last.efc {
        return None;
    }
    if let Some(hit) = anchors.iter().find(|a| a.efc == efc) {
        return Some(hit.label);
    }
    let seg = anchors.windows(2).find(|w| efc > w[0].efc && efc < w[1].efc)?;
    let (a, b) = (&seg[0], &seg[1]);
    let t = (efc - a.efc) / (b.efc - a.efc);
    let lerp = |x: F, y: F| x + t * (y - x);
    Some(DmLabel {
        lli: lerp(a.label.lli, b.label.lli),
        lam_pe: lerp(a.label.lam_pe, b.label.lam_pe),
        lam_ne: lerp(a.label.lam_ne, b.label.lam_ne),
        source: LabelSource::Interpolated,
    })
}

/// Attach an interpolated label to every cycle. Cycles outside the anchor
/// EFC range are dropped and logged; interpolation is idempotent.
pub fn interpolate_labels<F: Real>(cell: CellDataset<F>) -> CellDataset<F> {
    let CellDataset {
        cell_id,
        protocol,
        temperature_class,
        nominal_capacity_ah,
        cycles,
        anchors,
        labels: _,
        mut dropped,
    } = cell;

    let mut kept = Vec::with_capacity(cycles.len());
    let mut labels = Vec::with_capacity(cycles.len());
    for cycle in cycles {
        match label_at(&anchors, cycle.efc) {
            Some(label) => {
                kept.push(cycle);
                labels.push(label);
            }
            None => dropped.push(DroppedCycle {
                cycle_index: cycle.cycle_index,
                reason: format!("efc-outside-anchor-range: efc {}", cycle.efc.as_f64()),
            }),
        }
    }

    CellDataset {
        cell_id,
        protocol,
        temperature_class,
        nominal_capacity_ah,
        cycles: kept,
        anchors,
        labels,
        dropped,
    }
}
