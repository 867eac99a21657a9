//! Synthetic aging corpora with known degradation trajectories.
//!
//! Each cell's incremental-capacity curve is a base level plus Gaussian
//! peaks. Degradation drives the curve in three recognizable ways: loss of
//! lithium inventory shifts peak centers toward higher voltage and scales
//! the whole curve down, positive-electrode material loss attenuates the
//! high-voltage peaks, negative-electrode loss the low-voltage peaks. The
//! curve is integrated to a constant-current charge record with seeded
//! noise, anchors are attached on the RPT cadence (every 78 EFC plus the
//! final cycle), and every cycle carries its exact trajectory label.
//!
//! The mapping is deliberately simple: it makes the modes identifiable from
//! curve statistics without pretending to be electrochemistry.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    Anchor, CellDataset, CycleRecord, Dm, DmLabel, LabelSource, Protocol, TemperatureClass,
    ANCHOR_COLUMNS, CYCLE_COLUMNS, META_COLUMNS,
};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Real;

/// RPT cadence in equivalent full cycles.
pub const ANCHOR_CADENCE_EFC: f64 = 78.0;

/// One Gaussian component of the pristine curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PeakSpec<F> {
    pub center_v: F,
    pub width_v: F,
    pub height_ah_per_v: F,
}

/// Monotone piecewise-linear trajectory of one mode over EFC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DmTrajectory<F> {
    pub knots: Vec<(F, F)>,
}

impl<F: Real> DmTrajectory<F> {
    pub fn linear_with_knee(rate: F, knee_efc: F, knee_factor: F, end_efc: F) -> Self {
        let at_knee = rate * knee_efc;
        let end = at_knee + rate * knee_factor * (end_efc - knee_efc);
        DmTrajectory {
            knots: vec![
                (F::zero(), F::zero()),
                (knee_efc, at_knee),
                (end_efc, end),
            ],
        }
    }

    pub fn at(&self, efc: F) -> F {
        let first = self.knots.first().expect("trajectory has knots");
        let last = self.knots.last().expect("trajectory has knots");
        if efc <= first.0 {
            return first.1;
        }
        if efc >= last.0 {
            return last.1;
        }
        for pair in self.knots.windows(2) {
            if efc >= pair[0].0 && efc <= pair[1].0 {
                let t = (efc - pair[0].0) / (pair[1].0 - pair[0].0);
                return pair[0].1 + t * (pair[1].1 - pair[0].1);
            }
        }
        last.1
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::Parameter(format!("{name} trajectory needs at least 2 knots")));
        }
        for pair in self.knots.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Parameter(format!("{name} trajectory knots must increase in EFC")));
            }
            if pair[1].1 < pair[0].1 {
                return Err(Error::Parameter(format!("{name} trajectory must be non-decreasing")));
            }
        }
        for (_, v) in &self.knots {
            if *v < F::zero() || *v > F::c(0.4) {
                return Err(Error::Parameter(format!(
                    "{name} trajectory values must stay within [0, 0.4]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub voltage_std_v: f64,
    pub temperature_std_c: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            voltage_std_v: 1e-3,
            temperature_std_c: 0.3,
        }
    }
}

/// Kinds of injected abnormal cycles (for exercising ingest cleaning).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbnormalKind {
    SensorFault,
    TemperatureExcursion,
    CapacityRegression,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthCellSpec<F> {
    pub cell_id: String,
    pub protocol: Protocol,
    pub temperature_class: TemperatureClass,
    pub seed: u64,
    /// Trajectories for (LLI, LAMpe, LAMne).
    pub trajectories: [DmTrajectory<F>; 3],
    pub peaks: Vec<PeakSpec<F>>,
    pub base_level_ah_per_v: F,
    pub v_min_v: F,
    pub v_max_v: F,
    pub sample_period_s: F,
    pub noise: NoiseSpec,
    /// Cycles to corrupt, with the kind of corruption.
    pub abnormal_cycles: Vec<(u32, AbnormalKind)>,
}

impl<F: Real> SynthCellSpec<F> {
    pub fn validate(&self) -> Result<()> {
        if self.peaks.len() < 2 {
            return Err(Error::Parameter("peak model needs at least 2 peaks".to_string()));
        }
        for (traj, dm) in self.trajectories.iter().zip(Dm::ALL) {
            traj.validate(dm.label())?;
        }
        if self.v_max_v <= self.v_min_v {
            return Err(Error::Parameter("voltage window must be non-empty".to_string()));
        }
        Ok(())
    }

    /// Nominal capacity: area of the pristine curve.
    pub fn nominal_capacity_ah(&self) -> F {
        curve_area(self, &DmState::pristine())
    }
}

struct DmState<F> {
    lli: F,
    lam_pe: F,
    lam_ne: F,
}

impl<F: Real> DmState<F> {
    fn pristine() -> Self {
        Self {
            lli: F::zero(),
            lam_pe: F::zero(),
            lam_ne: F::zero(),
        }
    }
}

/// Degraded dq/dv model at voltage `v`.
///
/// LLI shifts every peak center up by 0.3 V per unit and scales the curve by
/// (1 - LLI); LAMpe attenuates peaks in the upper half of the window, LAMne
/// those in the lower half.
fn dq_dv_model<F: Real>(spec: &SynthCellSpec<F>, dms: &DmState<F>, v: F) -> F {
    let shift = F::c(0.3) * dms.lli;
    let mid = (spec.v_min_v + spec.v_max_v) / F::c(2.0);
    let lli_scale = F::one() - dms.lli;
    let mut y = spec.base_level_ah_per_v * lli_scale;
    for peak in &spec.peaks {
        let center = peak.center_v + shift;
        let lam_scale = if peak.center_v >= mid {
            F::one() - dms.lam_pe
        } else {
            F::one() - dms.lam_ne
        };
        let z = (v - center) / peak.width_v;
        y += peak.height_ah_per_v * lli_scale * lam_scale * (-z * z).exp();
    }
    y
}

const FINE_GRID: usize = 4800;

/// Charge accumulated over the voltage window on a fine grid.
fn curve_area<F: Real>(spec: &SynthCellSpec<F>, dms: &DmState<F>) -> F {
    integrate_curve(spec, dms).1
}

/// Q(V) table on the fine grid and its endpoint (the cycle capacity).
fn integrate_curve<F: Real>(spec: &SynthCellSpec<F>, dms: &DmState<F>) -> (Vec<F>, F) {
    let dv = (spec.v_max_v - spec.v_min_v) / F::from_count(FINE_GRID);
    let mut q = Vec::with_capacity(FINE_GRID + 1);
    q.push(F::zero());
    let mut prev = dq_dv_model(spec, dms, spec.v_min_v);
    let mut acc = F::zero();
    for i in 1..=FINE_GRID {
        let v = spec.v_min_v + dv * F::from_count(i);
        let here = dq_dv_model(spec, dms, v);
        acc += dv * (prev + here) / F::c(2.0);
        q.push(acc);
        prev = here;
    }
    (q, acc)
}

/// Generate one cell: `n_cycles` charge records, anchors on the RPT
/// cadence, and exact per-cycle labels.
pub fn generate_cell<F: Real>(spec: &SynthCellSpec<F>, n_cycles: usize) -> Result<CellDataset<F>> {
    spec.validate()?;
    if n_cycles < 20 {
        return Err(Error::Parameter(format!("need at least 20 cycles, got {n_cycles}")));
    }

    let nominal = spec.nominal_capacity_ah();
    let current = nominal / F::c(3.0);
    let dt_h = spec.sample_period_s / F::c(3600.0);
    let setpoint = F::c(spec.temperature_class.setpoint_c());

    let mut cycles: Vec<CycleRecord<F>> = Vec::with_capacity(n_cycles);
    let mut labels: Vec<DmLabel<F>> = Vec::with_capacity(n_cycles);
    let mut throughput = F::zero();

    for cycle_index in 0..n_cycles as u32 {
        // The label is defined by the EFC accumulated through this cycle,
        // which depends on this cycle's capacity; the capacity in turn
        // depends on the degradation state. One fixed-point pass resolves
        // it: evaluate the state at the start-of-cycle EFC (the drift per
        // cycle is a fraction of a percent and the trajectories are the
        // ground truth we attach afterwards).
        let efc_start = throughput / nominal;
        let dms = DmState {
            lli: spec.trajectories[0].at(efc_start),
            lam_pe: spec.trajectories[1].at(efc_start),
            lam_ne: spec.trajectories[2].at(efc_start),
        };
        let (q_table, capacity) = integrate_curve(spec, &dms);
        let dv = (spec.v_max_v - spec.v_min_v) / F::from_count(FINE_GRID);

        let n_samples = ((capacity / (current * dt_h)).as_f64().floor() as usize).max(16);
        let mut rng = Rng::new(derive_seed(spec.seed, &format!("cycle.{cycle_index}")));
        let mut rec = CycleRecord {
            cell_id: spec.cell_id.clone(),
            cycle_index,
            efc: F::zero(),
            time_s: Vec::with_capacity(n_samples),
            voltage_v: Vec::with_capacity(n_samples),
            current_a: Vec::with_capacity(n_samples),
            capacity_ah: Vec::with_capacity(n_samples),
            temperature_c: Vec::with_capacity(n_samples),
            flags: BTreeSet::new(),
        };
        for k in 0..n_samples {
            let t_h = dt_h * F::from_count(k);
            let q = (current * t_h).min(capacity);
            // Invert Q(V) by binary search on the fine table.
            let pos = q_table.partition_point(|x| *x < q);
            let v = if pos == 0 {
                spec.v_min_v
            } else if pos > FINE_GRID {
                spec.v_max_v
            } else {
                let (qa, qb) = (q_table[pos - 1], q_table[pos]);
                let t = if qb > qa { (q - qa) / (qb - qa) } else { F::zero() };
                spec.v_min_v + dv * (F::from_count(pos - 1) + t)
            };
            let v_noisy = v + rng.normal(F::zero(), F::c(spec.noise.voltage_std_v));
            let wobble = F::c(0.8)
                * F::c((std::f64::consts::TAU * k as f64 / n_samples as f64).sin());
            let temp = setpoint
                + wobble
                + rng.normal(F::zero(), F::c(spec.noise.temperature_std_c));
            rec.time_s.push(t_h * F::c(3600.0));
            rec.voltage_v
                .push(v_noisy.max(spec.v_min_v).min(spec.v_max_v));
            rec.current_a.push(current);
            rec.capacity_ah.push(q);
            rec.temperature_c.push(temp);
        }

        if let Some((_, kind)) = spec
            .abnormal_cycles
            .iter()
            .find(|(idx, _)| *idx == cycle_index)
        {
            corrupt(&mut rec, *kind);
        }

        throughput += rec.capacity_span();
        rec.efc = throughput / nominal;
        let efc = rec.efc;
        cycles.push(rec);
        labels.push(DmLabel {
            lli: spec.trajectories[0].at(efc),
            lam_pe: spec.trajectories[1].at(efc),
            lam_ne: spec.trajectories[2].at(efc),
            source: LabelSource::Interpolated,
        });
    }

    // Anchors on the RPT cadence plus the terminal EFC, so interpolation
    // brackets every cycle.
    let final_efc = cycles.last().expect("cycles nonempty").efc;
    let mut anchor_efcs: Vec<F> = Vec::new();
    let mut at = F::zero();
    while at < final_efc {
        anchor_efcs.push(at);
        at += F::c(ANCHOR_CADENCE_EFC);
    }
    anchor_efcs.push(final_efc);
    let anchors: Vec<Anchor<F>> = anchor_efcs
        .into_iter()
        .map(|efc| Anchor {
            efc,
            label: DmLabel {
                lli: spec.trajectories[0].at(efc),
                lam_pe: spec.trajectories[1].at(efc),
                lam_ne: spec.trajectories[2].at(efc),
                source: LabelSource::RptAnchor,
            },
        })
        .collect();

    Ok(CellDataset {
        cell_id: spec.cell_id.clone(),
        protocol: spec.protocol,
        temperature_class: spec.temperature_class,
        nominal_capacity_ah: nominal,
        cycles,
        anchors,
        labels,
        dropped: Vec::new(),
    })
}

fn corrupt<F: Real>(rec: &mut CycleRecord<F>, kind: AbnormalKind) {
    match kind {
        AbnormalKind::SensorFault => {
            let mid = rec.len() / 2;
            rec.voltage_v[mid] = F::nan();
        }
        AbnormalKind::TemperatureExcursion => {
            let n = rec.len();
            for t in rec.temperature_c.iter_mut().take(n / 4) {
                *t += F::c(12.0);
            }
        }
        AbnormalKind::CapacityRegression => {
            // Large enough to dip below the previous sample at any sane
            // sampling rate.
            let mid = rec.len() / 2;
            let step = rec.capacity_ah[mid] - rec.capacity_ah[mid - 1];
            rec.capacity_ah[mid] = rec.capacity_ah[mid] - step - F::c(0.005);
        }
    }
}

/// Write a generated cell in the ingest file formats: `meta.csv`,
/// `anchors.csv`, `cycles/cycle_<n>.csv`.
pub fn write_cell_files<F: Real>(cell: &CellDataset<F>, dir: &Path) -> Result<()> {
    let meta_rows = vec![vec![
        cell.protocol.as_str().to_string(),
        cell.temperature_class.as_str().to_string(),
        io::fmt_scalar(cell.nominal_capacity_ah),
    ]];
    io::write_table(dir.join("meta.csv"), &META_COLUMNS, &meta_rows)?;

    let anchor_rows: Vec<Vec<String>> = cell
        .anchors
        .iter()
        .map(|a| {
            vec![
                io::fmt_scalar(a.efc),
                io::fmt_scalar(a.label.lli),
                io::fmt_scalar(a.label.lam_pe),
                io::fmt_scalar(a.label.lam_ne),
            ]
        })
        .collect();
    io::write_table(dir.join("anchors.csv"), &ANCHOR_COLUMNS, &anchor_rows)?;

    for rec in &cell.cycles {
        let rows: Vec<Vec<String>> = (0..rec.len())
            .map(|k| {
                vec![
                    io::fmt_scalar(rec.time_s[k]),
                    io::fmt_scalar(rec.voltage_v[k]),
                    io::fmt_scalar(rec.current_a[k]),
                    io::fmt_scalar(rec.capacity_ah[k]),
                    io::fmt_scalar(rec.temperature_c[k]),
                ]
            })
            .collect();
        io::write_table(
            dir.join("cycles")
                .join(format!("cycle_{:05}.csv", rec.cycle_index)),
            &CYCLE_COLUMNS,
            &rows,
        )?;
    }
    Ok(())
}

/// The sixteen-cell synthetic corpus mirroring the standard cell roster:
/// eight cells per protocol, three at 10 degC, two at 25 degC, three at
/// 40 degC. Degradation rates depend on temperature class and protocol,
/// with seeded per-cell variation.
pub fn default_corpus_specs<F: Real>(seed: u64) -> Vec<SynthCellSpec<F>> {
    let mut specs = Vec::with_capacity(16);
    for protocol in [Protocol::Ccd, Protocol::Dcd] {
        for i in 1..=8u32 {
            let class = match i {
                1..=3 => TemperatureClass::T10,
                4..=5 => TemperatureClass::T25,
                _ => TemperatureClass::T40,
            };
            let cell_id = format!("{}_{i}", protocol.as_str());
            let cell_seed = derive_seed(seed, &format!("synth.{cell_id}"));
            let mut rng = Rng::new(cell_seed);
            let jitter = |rng: &mut Rng| F::c(0.85 + 0.3 * rng.next_f64());

            // Base degradation rates per EFC by temperature class.
            let lli_rate = match class {
                TemperatureClass::T10 => 4.0e-4,
                TemperatureClass::T25 => 3.0e-4,
                TemperatureClass::T40 => 5.0e-4,
            };
            let lam_pe_rate = match class {
                TemperatureClass::T10 => 1.2e-4,
                TemperatureClass::T25 => 1.0e-4,
                TemperatureClass::T40 => 1.8e-4,
            };
            // Drive-cycle discharge stresses the negative electrode harder.
            let lam_ne_protocol = match protocol {
                Protocol::Ccd => 1.0,
                Protocol::Dcd => 1.4,
            };
            let lam_ne_rate = 2.2e-4 * lam_ne_protocol;

            let knee = F::c(156.0);
            let end = F::c(420.0);
            let trajectories = [
                DmTrajectory::linear_with_knee(F::c(lli_rate) * jitter(&mut rng), knee, F::c(2.0), end),
                DmTrajectory::linear_with_knee(F::c(lam_pe_rate) * jitter(&mut rng), knee, F::c(2.5), end),
                DmTrajectory::linear_with_knee(F::c(lam_ne_rate) * jitter(&mut rng), knee, F::c(2.0), end),
            ];

            specs.push(SynthCellSpec {
                cell_id,
                protocol,
                temperature_class: class,
                seed: cell_seed,
                trajectories,
                peaks: vec![
                    PeakSpec {
                        center_v: F::c(3.45),
                        width_v: F::c(0.045),
                        height_ah_per_v: F::c(2.2),
                    },
                    PeakSpec {
                        center_v: F::c(3.55),
                        width_v: F::c(0.05),
                        height_ah_per_v: F::c(1.6),
                    },
                    PeakSpec {
                        center_v: F::c(3.68),
                        width_v: F::c(0.06),
                        height_ah_per_v: F::c(1.2),
                    },
                    PeakSpec {
                        center_v: F::c(3.95),
                        width_v: F::c(0.05),
                        height_ah_per_v: F::c(1.5),
                    },
                ],
                base_level_ah_per_v: F::c(2.5),
                v_min_v: F::c(3.0),
                v_max_v: F::c(4.2),
                sample_period_s: F::c(30.0),
                noise: NoiseSpec::default(),
                abnormal_cycles: Vec::new(),
            });
        }
    }
    specs
}
