//! Quantification of lithium-ion battery degradation modes from
//! constant-current charging data.
//!
//! The pipeline ingests per-cycle charging records with sparse RPT label
//! anchors, computes incremental-capacity curves and their transforms,
//! extracts a fixed 91-feature statistical library, screens it down to the
//! critical features with a three-stage filter pipeline (dispersion,
//! permutation importance, mutual information), and estimates the three
//! degradation modes (loss of lithium inventory, loss of active material
//! on either electrode) with four baseline regressors and a
//! jointly trained three-output network, evaluated under a six-test
//! held-out-cell protocol.
//!
//! All numeric code is generic over the scalar type via [`Real`]
//! (`f32`/`f64`); the `*64` aliases below pin the common case, and the CLI
//! pipeline runs in `f64`.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod filters;
pub mod ic;
pub mod io;
pub mod linalg;
pub mod models;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use dataset::{CellDataset, CycleRecord, Dm, DmLabel, Protocol, TemperatureClass};
pub use error::{Error, Result};
pub use features::{FeatureId, FeatureMatrix, FeatureVector};
pub use filters::CriticalFeatureSet;
pub use scalar::Real;

/// Concrete `f64` instantiations of the core domain types.
pub type CycleRecord64 = dataset::CycleRecord<f64>;
pub type DmLabel64 = dataset::DmLabel<f64>;
pub type CellDataset64 = dataset::CellDataset<f64>;
pub type IcCurve64 = ic::IcCurve<f64>;
pub type TransformBundle64 = ic::TransformBundle<f64>;
pub type FeatureVector64 = features::FeatureVector<f64>;
pub type FeatureMatrix64 = features::FeatureMatrix<f64>;
pub type FilterScores64 = filters::FilterScores<f64>;
pub type TrainedModel64 = models::TrainedModel<f64>;
pub type EvaluationReport64 = eval::EvaluationReport<f64>;
pub type SynthCellSpec64 = synth::SynthCellSpec<f64>;

#[cfg(test)]
mod generic_scalar_tests {
    //! The numeric core must compile and run in both precisions.

    use crate::scalar::Real;

    fn pipeline_smoke<F: Real>() {
        let xs: Vec<F> = (0..64).map(|i| F::c(i as f64 * 0.37).sin()).collect();
        let p = crate::stats::percentile(&xs, 90.0);
        assert!(p.is_finite());
        let hist = crate::stats::equal_width_histogram(&xs, 16);
        assert!(crate::stats::shannon_entropy(&hist) > F::zero());
        let mut rng = crate::rng::Rng::new(3);
        let noise: Vec<F> = (0..200).map(|_| rng.uniform()).collect();
        let bins = crate::stats::equal_frequency_bins(&noise, 8);
        assert_eq!(bins.len(), 200);
    }

    #[test]
    fn stats_run_in_f32_and_f64() {
        pipeline_smoke::<f32>();
        pipeline_smoke::<f64>();
    }

    #[test]
    fn mutual_information_runs_in_f32() {
        let mut rng = crate::rng::Rng::new(9);
        let x: Vec<f32> = (0..500).map(|_| rng.uniform()).collect();
        let mi = crate::filters::mutual_information(&x, &x, 8).unwrap();
        let target = (8.0_f32).ln();
        assert!((mi - target).abs() / target < 0.05, "{mi}");
    }
}
