//! Property tests for the pipeline's structural invariants.

use proptest::prelude::*;

use dmq_core::dataset::{label_at, Anchor, Dm, DmLabel, LabelSource};
use dmq_core::eval::t_test;
use dmq_core::filters::mutual_information;
use dmq_core::stats;

fn anchors_strategy() -> impl Strategy<Value = Vec<Anchor<f64>>> {
    // 2..6 anchors with strictly increasing EFC and non-decreasing labels.
    (2usize..6).prop_flat_map(|n| {
        (
            proptest::collection::vec(1.0..80.0f64, n),
            proptest::collection::vec(0.0..0.05f64, n),
            proptest::collection::vec(0.0..0.05f64, n),
            proptest::collection::vec(0.0..0.05f64, n),
        )
            .prop_map(|(defc, dlli, dpe, dne)| {
                let mut efc = 0.0;
                let (mut lli, mut pe, mut ne) = (0.0, 0.0, 0.0);
                let mut anchors = Vec::new();
                for i in 0..defc.len() {
                    efc += defc[i];
                    lli += dlli[i];
                    pe += dpe[i];
                    ne += dne[i];
                    anchors.push(Anchor {
                        efc,
                        label: DmLabel {
                            lli,
                            lam_pe: pe,
                            lam_ne: ne,
                            source: LabelSource::RptAnchor,
                        },
                    });
                }
                anchors
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Interpolated label sequences are non-decreasing per component, and
    /// repeating the interpolation reproduces the same values.
    #[test]
    fn interpolation_is_monotone_and_stable(
        anchors in anchors_strategy(),
        fracs in proptest::collection::vec(0.0..1.0f64, 1..40),
    ) {
        let lo = anchors.first().unwrap().efc;
        let hi = anchors.last().unwrap().efc;
        let mut queries: Vec<f64> = fracs.iter().map(|f| lo + f * (hi - lo)).collect();
        queries.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let labels: Vec<DmLabel<f64>> =
            queries.iter().map(|q| label_at(&anchors, *q).unwrap()).collect();
        for dm in Dm::ALL {
            let series: Vec<f64> = labels.iter().map(|l| l.get(dm)).collect();
            prop_assert!(series.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        }
        for (q, l) in queries.iter().zip(&labels) {
            let again = label_at(&anchors, *q).unwrap();
            prop_assert_eq!(again.lli, l.lli);
        }
    }

    /// The interpolant hits every anchor exactly.
    #[test]
    fn interpolation_is_exact_at_anchors(anchors in anchors_strategy()) {
        for anchor in &anchors {
            let label = label_at(&anchors, anchor.efc).unwrap();
            prop_assert_eq!(label.lli, anchor.label.lli);
            prop_assert_eq!(label.lam_pe, anchor.label.lam_pe);
            prop_assert_eq!(label.lam_ne, anchor.label.lam_ne);
        }
    }

    /// Mutual information is symmetric and non-negative.
    #[test]
    fn mi_symmetry_and_nonnegativity(
        seed in 0u64..1000,
        n in 100usize..400,
    ) {
        let mut rng = dmq_core::rng::Rng::new(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin() + 0.5 * rng.next_f64()).collect();
        let a = mutual_information(&x, &y, 8).unwrap();
        let b = mutual_information(&y, &x, 8).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0);
    }

    /// Swapping the t-test arguments negates the statistic exactly.
    #[test]
    fn t_test_antisymmetry(
        mean_a in 0.0..50.0f64,
        mean_b in 0.0..50.0f64,
        std_a in 0.01..10.0f64,
        std_b in 0.01..10.0f64,
    ) {
        let ab = t_test(mean_a, std_a, mean_b, std_b, 6);
        let ba = t_test(mean_b, std_b, mean_a, std_a, 6);
        prop_assert_eq!(ab.t, -ba.t);
    }

    /// Percentiles are monotone in p and bounded by min/max.
    #[test]
    fn percentiles_are_monotone(
        xs in proptest::collection::vec(-100.0..100.0f64, 2..50),
        p1 in 0.0..100.0f64,
        p2 in 0.0..100.0f64,
    ) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let a = stats::percentile(&xs, lo);
        let b = stats::percentile(&xs, hi);
        prop_assert!(a <= b + 1e-12);
        prop_assert!(a >= stats::min(&xs) - 1e-12);
        prop_assert!(b <= stats::max(&xs) + 1e-12);
    }

    /// Every value of a normalized training matrix lies in [0, 1].
    #[test]
    fn normalization_maps_training_values_into_unit_interval(
        seed in 0u64..500,
        rows in 2usize..30,
        cols in 1usize..8,
    ) {
        use dmq_core::dataset::{DmLabel, LabelSource};
        use dmq_core::features::{feature_library, FeatureMatrix, FeatureVector};
        let mut rng = dmq_core::rng::Rng::new(seed);
        let matrix = FeatureMatrix::<f64> {
            feature_ids: feature_library()[..cols].to_vec(),
            rows: (0..rows)
                .map(|i| FeatureVector {
                    cell_id: "c".into(),
                    cycle_index: i as u32,
                    efc: i as f64,
                    values: (0..cols).map(|_| rng.next_f64() * 50.0 - 25.0).collect(),
                    flagged: Vec::new(),
                })
                .collect(),
            labels: vec![
                DmLabel { lli: 0.0, lam_pe: 0.0, lam_ne: 0.0, source: LabelSource::Interpolated };
                rows
            ],
            normalization: None,
        };
        let normalized = matrix.normalize().unwrap();
        for row in &normalized.rows {
            for v in &row.values {
                prop_assert!((0.0..=1.0).contains(v), "value {v} outside [0, 1]");
            }
        }
    }
}
