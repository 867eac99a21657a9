//! Incremental-capacity curves and their transform bundle.
//!
//! The IC curve is built by accumulating charge per voltage bin (ΔQ/ΔV
//! binning) rather than pointwise differentiation: each inter-sample charge
//! increment is distributed over the voltage bins its interval spans, which
//! is robust to sampling jitter. Densities are then sampled on the bin-edge
//! grid so that the trapezoidal integral of the curve equals the segment's
//! charge exactly. Smoothing exists for diagnostics and plots only; feature
//! extraction always runs on the unsmoothed curve.

use serde::{Deserialize, Serialize};

use crate::dataset::CycleRecord;
use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Real;
use crate::stats;

/// Histogram size for the entropy transform.
pub const ENTROPY_BINS: usize = 32;

/// Minimum voltage span, in bins, for a usable segment.
const MIN_BINS: usize = 20;
/// Maximum tolerated fraction of voltage reversals.
const MAX_NONMONOTONE_FRAC: f64 = 0.05;
/// Charge-segment check: this fraction of samples must carry a current
/// within ±10% of the segment's median current.
const MIN_CURRENT_BAND_FRAC: f64 = 0.90;
const CURRENT_BAND_REL: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothing {
    Original,
    Smoothed,
}

/// dQ/dV sampled on a uniform voltage grid (bin edges).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcCurve<F> {
    /// Strictly increasing, constant step equal to the configured bin width.
    pub voltage_grid: Vec<F>,
    /// Ah per volt, aligned to `voltage_grid`.
    pub dq_dv: Vec<F>,
    /// Charge moved over the segment, from the raw capacity signal.
    pub capacity_total_ah: F,
    pub smoothing: Smoothing,
    /// Bins that contained no raw sample; their mass came from linear
    /// interpolation of charge between neighboring samples.
    pub interpolated_bins: Vec<usize>,
}

impl<F: Real> IcCurve<F> {
    pub fn bin_width(&self) -> F {
        self.voltage_grid[1] - self.voltage_grid[0]
    }

    /// Trapezoidal integral of dq_dv over the grid.
    pub fn integral(&self) -> F {
        let w = self.bin_width();
        let n = self.dq_dv.len();
        let interior: F = self.dq_dv[1..n - 1].iter().copied().sum();
        w * (interior + (self.dq_dv[0] + self.dq_dv[n - 1]) / F::c(2.0))
    }

    /// Debug dump: one `voltage_v,dq_dv_ah_per_v` row per grid point.
    pub fn dump(&self, path: &std::path::Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .voltage_grid
            .iter()
            .zip(&self.dq_dv)
            .map(|(v, d)| vec![io::fmt_scalar(*v), io::fmt_scalar(*d)])
            .collect();
        io::write_table(path, &["voltage_v", "dq_dv_ah_per_v"], &rows)
    }
}

/// Compute the IC curve of a charge segment on the original signal.
pub fn compute_ic<F: Real>(cycle: &CycleRecord<F>, bin_width_v: F) -> Result<IcCurve<F>> {
    if bin_width_v <= F::zero() {
        return Err(Error::Parameter("bin width must be positive".to_string()));
    }
    let v = &cycle.voltage_v;
    let q = &cycle.capacity_ah;
    let n = v.len();
    if n < 16 {
        return Err(Error::InsufficientData(format!(
            "cycle {} of {}: {} samples, need 16",
            cycle.cycle_index, cycle.cell_id, n
        )));
    }

    // Charge-segment check: constant current around the segment median.
    let med = stats::median(&cycle.current_a);
    let band = med.abs() * F::c(CURRENT_BAND_REL);
    let in_band = cycle
        .current_a
        .iter()
        .filter(|i| (**i - med).abs() <= band)
        .count();
    if (in_band as f64) < MIN_CURRENT_BAND_FRAC * n as f64 {
        return Err(Error::SignalQuality(format!(
            "cycle {} of {}: current not constant ({} of {n} samples within ±10% of median)",
            cycle.cycle_index, cycle.cell_id, in_band
        )));
    }

    let reversals = v.windows(2).filter(|w| w[1] <= w[0]).count();
    if (reversals as f64) > MAX_NONMONOTONE_FRAC * (n - 1) as f64 {
        return Err(Error::SignalQuality(format!(
            "cycle {} of {}: voltage non-monotone over {reversals} of {} steps",
            cycle.cycle_index,
            cycle.cell_id,
            n - 1
        )));
    }

    let v_lo = stats::min(v);
    let v_hi = stats::max(v);
    let span = v_hi - v_lo;
    let bins_exact = (span / bin_width_v).as_f64();
    if bins_exact < MIN_BINS as f64 {
        return Err(Error::InsufficientData(format!(
            "cycle {} of {}: voltage span {} V covers {bins_exact:.1} bins, need {MIN_BINS}",
            cycle.cycle_index,
            cycle.cell_id,
            span.as_f64()
        )));
    }
    let n_bins = bins_exact.ceil() as usize;
    let w = bin_width_v;

    let bin_of = |x: F| -> usize {
        let idx = ((x - v_lo) / w).as_f64().floor();
        (idx.max(0.0) as usize).min(n_bins - 1)
    };

    // Distribute each inter-sample charge increment over the voltage bins
    // its interval spans, proportionally to overlap.
    let mut mass = vec![F::zero(); n_bins];
    for k in 0..n - 1 {
        let dq = q[k + 1] - q[k];
        if dq == F::zero() {
            continue;
        }
        let (a, b) = if v[k] <= v[k + 1] {
            (v[k], v[k + 1])
        } else {
            (v[k + 1], v[k])
        };
        if a == b {
            mass[bin_of(a)] += dq;
            continue;
        }
        let ia = bin_of(a);
        let ib = bin_of(b);
        let inv_span = F::one() / (b - a);
        for (i, m) in mass.iter_mut().enumerate().take(ib + 1).skip(ia) {
            let lo = v_lo + w * F::from_count(i);
            let hi = lo + w;
            let overlap = hi.min(b) - lo.max(a);
            if overlap > F::zero() {
                *m += dq * overlap * inv_span;
            }
        }
    }

    let mut sample_count = vec![0usize; n_bins];
    for x in v {
        sample_count[bin_of(*x)] += 1;
    }
    let interpolated_bins: Vec<usize> = sample_count
        .iter()
        .enumerate()
        .filter_map(|(i, c)| (*c == 0).then_some(i))
        .collect();

    // Edge-sampled densities: ends take their bin's density, interior edges
    // average the two adjacent bins. This makes the trapezoidal integral of
    // the curve equal the summed bin mass exactly.
    let mut dq_dv = Vec::with_capacity(n_bins + 1);
    dq_dv.push(mass[0] / w);
    for i in 1..n_bins {
        dq_dv.push((mass[i - 1] + mass[i]) / (F::c(2.0) * w));
    }
    dq_dv.push(mass[n_bins - 1] / w);

    let voltage_grid: Vec<F> = (0..=n_bins).map(|i| v_lo + w * F::from_count(i)).collect();

    Ok(IcCurve {
        voltage_grid,
        dq_dv,
        capacity_total_ah: q[n - 1] - q[0],
        smoothing: Smoothing::Original,
        interpolated_bins,
    })
}

/// Centered moving average; the window shrinks at the ends. Diagnostics and
/// plot emission only; never feeds feature extraction.
pub fn smooth_ic<F: Real>(curve: &IcCurve<F>, window: usize) -> Result<IcCurve<F>> {
    let n = curve.dq_dv.len();
    if window.is_multiple_of(2) || window < 3 || window > n / 4 {
        return Err(Error::Parameter(format!(
            "smoothing window must be odd and within [3, {}], got {window}",
            n / 4
        )));
    }
    let half = window / 2;
    let smoothed: Vec<F> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let slice = &curve.dq_dv[lo..=hi];
            stats::mean(slice)
        })
        .collect();
    Ok(IcCurve {
        voltage_grid: curve.voltage_grid.clone(),
        dq_dv: smoothed,
        capacity_total_ah: curve.capacity_total_ah,
        smoothing: Smoothing::Smoothed,
        interpolated_bins: curve.interpolated_bins.clone(),
    })
}

/// The six transform inputs feeding the feature library.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformBundle<F> {
    pub basic: IcCurve<F>,
    /// Running trapezoidal integral of dq_dv (Ah versus voltage).
    pub cumulative: Vec<F>,
    /// First differences of dq_dv over the grid.
    pub differences: Vec<F>,
    /// Normalized histogram of dq_dv values.
    pub entropy_inputs: Vec<F>,
    /// Samples of dq_dv that are >= 0 (zeros belong to the positive part).
    pub pos_part: Vec<F>,
    /// Samples of dq_dv that are < 0.
    pub neg_part: Vec<F>,
    /// Cumulative charge throughput since start of life; the hybrid
    /// family's aging covariate.
    pub throughput_ah: F,
    /// Charge moved within this cycle alone (diagnostic).
    pub cycle_throughput_ah: F,
}

/// Build all transform inputs from an original (unsmoothed) curve.
pub fn build_transforms<F: Real>(
    curve: &IcCurve<F>,
    cumulative_throughput_ah: F,
) -> Result<TransformBundle<F>> {
    if curve.smoothing != Smoothing::Original {
        return Err(Error::Parameter(
            "transforms are built from the original curve, not the smoothed one".to_string(),
        ));
    }
    let d = &curve.dq_dv;
    let w = curve.bin_width();
    let n = d.len();

    let mut cumulative = Vec::with_capacity(n);
    let mut acc = F::zero();
    cumulative.push(acc);
    for i in 1..n {
        acc += w * (d[i - 1] + d[i]) / F::c(2.0);
        cumulative.push(acc);
    }

    let differences: Vec<F> = d.windows(2).map(|p| p[1] - p[0]).collect();
    let entropy_inputs = stats::equal_width_histogram(d, ENTROPY_BINS);
    let (pos_part, neg_part): (Vec<F>, Vec<F>) = d.iter().partition(|x| **x >= F::zero());

    Ok(TransformBundle {
        basic: curve.clone(),
        cumulative,
        differences,
        entropy_inputs,
        pos_part,
        neg_part,
        throughput_ah: cumulative_throughput_ah,
        cycle_throughput_ah: curve.capacity_total_ah,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Build a charge record from an analytic V(Q) relation sampled at
    /// `n` uniform capacity steps up to `q_max` Ah.
    fn record_from_vq(v_of_q: impl Fn(f64) -> f64, q_max: f64, n: usize) -> CycleRecord<f64> {
        let current = 1.6;
        let mut rec = CycleRecord {
            cell_id: "fixture".to_string(),
            cycle_index: 0,
            efc: 0.0,
            time_s: Vec::new(),
            voltage_v: Vec::new(),
            current_a: Vec::new(),
            capacity_ah: Vec::new(),
            temperature_c: Vec::new(),
            flags: BTreeSet::new(),
        };
        for k in 0..n {
            let q = q_max * k as f64 / (n - 1) as f64;
            rec.time_s.push(q / current * 3600.0);
            rec.voltage_v.push(v_of_q(q));
            rec.current_a.push(current);
            rec.capacity_ah.push(q);
            rec.temperature_c.push(25.0);
        }
        rec
    }

    /// A peaked dq/dv model and the record sampled from it: dq/dv(v) =
    /// base + peak Gaussian; V(Q) obtained by inverting the integral.
    fn peaked_record(n: usize) -> CycleRecord<f64> {
        let dqdv = |v: f64| 2.5 + 3.5 * (-((v - 3.6) / 0.08).powi(2)).exp();
        // Integrate on a fine grid to get Q(V), then invert.
        let (v0, v1) = (3.0, 4.2);
        let fine = 12_000;
        let dv = (v1 - v0) / fine as f64;
        let mut q_of_v = vec![0.0];
        for i in 1..=fine {
            let va = v0 + (i - 1) as f64 * dv;
            let vb = v0 + i as f64 * dv;
            q_of_v.push(q_of_v[i - 1] + 0.5 * (dqdv(va) + dqdv(vb)) * dv);
        }
        let q_max = *q_of_v.last().unwrap();
        let v_of_q = move |q: f64| {
            let pos = q_of_v.partition_point(|x| *x < q);
            if pos == 0 {
                return v0;
            }
            if pos >= q_of_v.len() {
                return v1;
            }
            let (qa, qb) = (q_of_v[pos - 1], q_of_v[pos]);
            let t = if qb > qa { (q - qa) / (qb - qa) } else { 0.0 };
            v0 + ((pos - 1) as f64 + t) * dv
        };
        record_from_vq(v_of_q, q_max, n)
    }

    #[test]
    fn linear_vq_gives_constant_density() {
        // V = 3.0 + Q/10 over 3 Ah: span 0.3 V, 30 bins of 10 mV.
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 400);
        let curve = compute_ic(&rec, 0.01).unwrap();
        for d in &curve.dq_dv {
            assert!((d - 10.0).abs() < 1e-6, "density {d}");
        }
        assert_eq!(curve.smoothing, Smoothing::Original);
    }

    #[test]
    fn integral_matches_raw_charge_span() {
        let rec = peaked_record(700);
        let curve = compute_ic(&rec, 0.01).unwrap();
        // Oracle: Q(V_end) - Q(V_start) straight off the record.
        let direct = rec.capacity_ah.last().unwrap() - rec.capacity_ah.first().unwrap();
        assert!((curve.capacity_total_ah - direct).abs() < 1e-12);
        let rel = ((curve.integral() - direct) / direct).abs();
        assert!(rel < 0.01, "trapezoid off by {rel}");
        // The edge-sampled construction makes it essentially exact.
        assert!(rel < 1e-9, "trapezoid off by {rel}");
    }

    #[test]
    fn fresh_fixture_peak_scale() {
        let rec = peaked_record(700);
        let curve = compute_ic(&rec, 0.01).unwrap();
        assert!(stats::max(&curve.dq_dv) > 4.3);
    }

    #[test]
    fn resampling_invariance() {
        let a = compute_ic(&peaked_record(500), 0.01).unwrap();
        let b = compute_ic(&peaked_record(1500), 0.01).unwrap();
        assert_eq!(a.dq_dv.len(), b.dq_dv.len());
        let scale = stats::max(&a.dq_dv);
        for (x, y) in a.dq_dv.iter().zip(&b.dq_dv) {
            assert!((x - y).abs() / scale < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn differences_telescope_exactly() {
        let rec = peaked_record(600);
        let curve = compute_ic(&rec, 0.01).unwrap();
        let bundle = build_transforms(&curve, 0.0).unwrap();
        let sum: f64 = bundle.differences.iter().sum();
        let expect = curve.dq_dv.last().unwrap() - curve.dq_dv.first().unwrap();
        assert!((sum - expect).abs() < 1e-9);
    }

    #[test]
    fn segment_too_short_is_rejected() {
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 10);
        assert!(matches!(compute_ic(&rec, 0.01), Err(Error::InsufficientData(_))));
        // Span below 20 bins.
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 0.5, 100);
        assert!(matches!(compute_ic(&rec, 0.01), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn nonmonotone_voltage_is_rejected() {
        let mut rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 200);
        for i in (0..rec.voltage_v.len()).step_by(10) {
            if i > 0 {
                rec.voltage_v[i] = rec.voltage_v[i - 1] - 0.001;
            }
        }
        assert!(matches!(compute_ic(&rec, 0.01), Err(Error::SignalQuality(_))));
    }

    #[test]
    fn varying_current_is_rejected() {
        let mut rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 200);
        for (i, c) in rec.current_a.iter_mut().enumerate() {
            *c = 1.6 + (i as f64 / 200.0) * 1.0; // ramp far beyond ±10%
        }
        assert!(matches!(compute_ic(&rec, 0.01), Err(Error::SignalQuality(_))));
    }

    #[test]
    fn smoothing_preserves_constant_curve() {
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 300);
        let curve = compute_ic(&rec, 0.01).unwrap();
        let sm = smooth_ic(&curve, 5).unwrap();
        for (a, b) in curve.dq_dv.iter().zip(&sm.dq_dv) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(sm.smoothing, Smoothing::Smoothed);
    }

    #[test]
    fn smoothing_spreads_a_spike() {
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 300);
        let mut curve = compute_ic(&rec, 0.01).unwrap();
        let n = curve.dq_dv.len();
        for d in curve.dq_dv.iter_mut() {
            *d = 0.0;
        }
        curve.dq_dv[n / 2] = 9.0;
        let sm = smooth_ic(&curve, 3).unwrap();
        assert!((sm.dq_dv[n / 2] - 3.0).abs() < 1e-12);
        assert!((sm.dq_dv[n / 2 - 1] - 3.0).abs() < 1e-12);
        assert!((sm.dq_dv[n / 2 + 1] - 3.0).abs() < 1e-12);
        assert_eq!(sm.dq_dv[n / 2 + 2], 0.0);
    }

    #[test]
    fn smoothing_reduces_variance_of_noise() {
        let rec = peaked_record(800);
        let mut curve = compute_ic(&rec, 0.01).unwrap();
        let mut rng = crate::rng::Rng::new(17);
        for d in curve.dq_dv.iter_mut() {
            *d += rng.normal(0.0, 0.3);
        }
        let before = stats::variance(&curve.dq_dv);
        let sm = smooth_ic(&curve, 7).unwrap();
        let after = stats::variance(&sm.dq_dv);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn invalid_window_is_a_parameter_error() {
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 300);
        let curve = compute_ic(&rec, 0.01).unwrap();
        assert!(matches!(smooth_ic(&curve, 4), Err(Error::Parameter(_))));
        assert!(matches!(smooth_ic(&curve, 1), Err(Error::Parameter(_))));
        assert!(matches!(smooth_ic(&curve, 999), Err(Error::Parameter(_))));
    }

    #[test]
    fn transform_trivials() {
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 300);
        let curve = compute_ic(&rec, 0.01).unwrap();
        let bundle = build_transforms(&curve, 123.0).unwrap();
        // All densities positive: negative part empty.
        assert!(bundle.neg_part.is_empty());
        assert_eq!(bundle.pos_part.len(), curve.dq_dv.len());
        // Constant density c: cumulative endpoint = c * n * w.
        let c = 10.0;
        let n_bins = (curve.dq_dv.len() - 1) as f64;
        let endpoint = bundle.cumulative.last().unwrap();
        assert!((endpoint - c * n_bins * 0.01).abs() < 1e-6, "{endpoint}");
        // Constant curve: single occupied histogram bin, zero entropy.
        assert!((bundle.entropy_inputs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(stats::shannon_entropy(&bundle.entropy_inputs), 0.0);
        assert_eq!(bundle.throughput_ah, 123.0);
    }

    #[test]
    fn transforms_refuse_smoothed_curves() {
        let rec = record_from_vq(|q| 3.0 + q / 10.0, 3.0, 300);
        let curve = compute_ic(&rec, 0.01).unwrap();
        let sm = smooth_ic(&curve, 3).unwrap();
        assert!(build_transforms(&sm, 0.0).is_err());
    }

    #[test]
    fn cumulative_endpoint_equals_capacity() {
        let rec = peaked_record(900);
        let curve = compute_ic(&rec, 0.01).unwrap();
        let bundle = build_transforms(&curve, 0.0).unwrap();
        let rel = ((bundle.cumulative.last().unwrap() - curve.capacity_total_ah)
            / curve.capacity_total_ah)
            .abs();
        assert!(rel < 0.01, "{rel}");
    }
}
