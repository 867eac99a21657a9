//! End-to-end pipeline integration: generate a small corpus, write it in
//! the ingest file formats, ingest it back, label, featurize, and run the
//! filter pipeline.

use std::path::PathBuf;

use dmq_core::dataset::{ingest_cell, interpolate_labels, Dm, IngestConfig};
use dmq_core::eval::featurize_corpus;
use dmq_core::features::FeatureMatrix;
use dmq_core::filters::{
    amd_filter, assemble_critical_set, mutual_information, permutation_importance, train_gbt,
    FilterScores, GbtParams, ThresholdRule, DEFAULT_KEEP_RATIO,
};
use dmq_core::linalg::Mat;
use dmq_core::synth::{default_corpus_specs, generate_cell, write_cell_files, AbnormalKind};

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dmq_pipeline_{tag}"));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn files_round_trip_through_ingest_and_labeling() {
    let dir = temp_dir("roundtrip");
    let spec = &default_corpus_specs::<f64>(2024)[0];
    let generated = generate_cell(spec, 40).unwrap();
    let cell_dir = dir.join(&spec.cell_id);
    write_cell_files(&generated, &cell_dir).unwrap();

    let ingested = ingest_cell::<f64>(&cell_dir, &IngestConfig::default()).unwrap();
    assert_eq!(ingested.cell_id, generated.cell_id);
    assert_eq!(ingested.protocol, generated.protocol);
    assert_eq!(ingested.temperature_class, generated.temperature_class);
    assert_eq!(ingested.cycles.len(), generated.cycles.len());
    assert_eq!(ingested.anchors.len(), generated.anchors.len());
    // EFC accumulates identically from the persisted capacity signal.
    for (a, b) in ingested.cycles.iter().zip(&generated.cycles) {
        assert_eq!(a.efc, b.efc, "cycle {}", b.cycle_index);
    }

    let labeled = interpolate_labels(ingested);
    assert!(labeled.is_labeled());
    // Interpolated labels reproduce the generator's exact trajectory values
    // (the trajectories are linear between anchors).
    for ((rec, label), truth) in labeled
        .cycles
        .iter()
        .zip(&labeled.labels)
        .zip(&generated.labels)
    {
        for dm in Dm::ALL {
            let diff = (label.get(dm) - truth.get(dm)).abs();
            assert!(diff < 1e-12, "cycle {} {dm}: {diff}", rec.cycle_index);
        }
    }

    // Idempotence: labeling an already-labeled dataset changes nothing.
    let again = interpolate_labels(labeled.clone());
    assert_eq!(
        serde_json::to_string(&again).unwrap(),
        serde_json::to_string(&labeled).unwrap()
    );

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn abnormal_cycles_are_dropped_with_reasons() {
    let dir = temp_dir("abnormal");
    let mut spec = default_corpus_specs::<f64>(7).remove(1);
    // Five corrupted cycles of three kinds.
    spec.abnormal_cycles = vec![
        (3, AbnormalKind::SensorFault),
        (8, AbnormalKind::TemperatureExcursion),
        (13, AbnormalKind::CapacityRegression),
        (21, AbnormalKind::SensorFault),
        (29, AbnormalKind::TemperatureExcursion),
    ];
    let generated = generate_cell(&spec, 40).unwrap();
    let cell_dir = dir.join(&spec.cell_id);
    write_cell_files(&generated, &cell_dir).unwrap();

    let ingested = ingest_cell::<f64>(&cell_dir, &IngestConfig::default()).unwrap();
    // Independent oracle: re-apply the flag rules to the corruption list.
    let expected_dropped: Vec<u32> = spec.abnormal_cycles.iter().map(|(i, _)| *i).collect();
    assert_eq!(ingested.cycles.len(), 40 - expected_dropped.len());
    assert_eq!(ingested.dropped.len(), expected_dropped.len());
    for idx in &expected_dropped {
        let drop = ingested
            .dropped
            .iter()
            .find(|d| d.cycle_index == *idx)
            .unwrap_or_else(|| panic!("cycle {idx} was not dropped"));
        assert!(!drop.reason.is_empty());
    }
    // Accounting: retained + dropped == ingested.
    assert_eq!(ingested.cycles.len() + ingested.dropped.len(), 40);

    // Per-cell label sequences are non-decreasing in every component.
    let labeled = interpolate_labels(ingested);
    for dm in Dm::ALL {
        let series: Vec<f64> = labeled.labels.iter().map(|l| l.get(dm)).collect();
        assert!(series.windows(2).all(|w| w[1] >= w[0]), "{dm} not monotone");
    }

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn anchor_validation_errors_name_the_problem() {
    let dir = temp_dir("anchors");
    let spec = &default_corpus_specs::<f64>(31)[2];
    let generated = generate_cell(spec, 25).unwrap();
    let cell_dir = dir.join(&spec.cell_id);
    write_cell_files(&generated, &cell_dir).unwrap();

    // One anchor only: insufficient.
    let anchors_path = cell_dir.join("anchors.csv");
    std::fs::write(&anchors_path, "efc,lli,lam_pe,lam_ne\n0,0,0,0\n").unwrap();
    match ingest_cell::<f64>(&cell_dir, &IngestConfig::default()) {
        Err(dmq_core::Error::InsufficientAnchors { found, .. }) => assert_eq!(found, 1),
        other => panic!("expected insufficient-anchors, got {other:?}"),
    }

    // Decreasing component: monotonicity error naming the offending pair.
    std::fs::write(
        &anchors_path,
        "efc,lli,lam_pe,lam_ne\n0,0.02,0,0\n78,0.01,0.01,0.01\n",
    )
    .unwrap();
    match ingest_cell::<f64>(&cell_dir, &IngestConfig::default()) {
        Err(e @ dmq_core::Error::NonMonotoneAnchors { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("lli") && msg.contains("78"), "{msg}");
        }
        other => panic!("expected monotonicity error, got {other:?}"),
    }

    // Labels outside [0, 1] are data errors with a file locus.
    std::fs::write(&anchors_path, "efc,lli,lam_pe,lam_ne\n0,0,0,0\n78,1.2,0,0\n").unwrap();
    match ingest_cell::<f64>(&cell_dir, &IngestConfig::default()) {
        Err(dmq_core::Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn corpus_featurization_and_filter_pipeline() {
    // Four cells, enough rows for the filters' preconditions.
    let specs: Vec<_> = default_corpus_specs::<f64>(11).into_iter().take(4).collect();
    let cells: Vec<_> = specs
        .iter()
        .map(|s| generate_cell(s, 45).unwrap())
        .collect();
    let (matrix, infos, skipped) = featurize_corpus(&cells, 0.01).unwrap();
    assert!(skipped.is_empty(), "{skipped:?}");
    assert_eq!(infos.len(), 4);
    assert_eq!(matrix.n_features(), 91);
    assert_eq!(matrix.n_rows(), 4 * 45);

    // CSV round trip preserves the matrix.
    let dir = temp_dir("matrix_csv");
    let path = dir.join("features.csv");
    matrix.write_csv(&path).unwrap();
    let back = FeatureMatrix::<f64>::read_csv(&path).unwrap();
    assert_eq!(back.n_rows(), matrix.n_rows());
    for (a, b) in back.rows.iter().zip(&matrix.rows) {
        assert_eq!(a.values, b.values);
        assert_eq!(a.cell_id, b.cell_id);
    }
    std::fs::remove_dir_all(&dir).ok();

    // Dispersion stage keeps 63 of 91 and never a constant feature.
    let normalized = matrix.normalize().unwrap();
    let (survivors, amd_scores) = amd_filter(&normalized, DEFAULT_KEEP_RATIO).unwrap();
    assert_eq!(survivors.len(), 63);
    for id in &survivors {
        assert!(amd_scores[id] > 0.0);
    }

    // Second stage on the survivors; the assembled set is non-empty and
    // every member passed the dispersion stage.
    let restricted = normalized.restrict(&survivors).unwrap();
    let x = Mat::from_rows(restricted.rows.iter().map(|r| r.values.clone()).collect());
    let mut scores = FilterScores {
        amd: amd_scores,
        pi: Default::default(),
        mi: Default::default(),
    };
    let params = GbtParams {
        n_trees: 60,
        ..GbtParams::default()
    };
    for dm in Dm::ALL {
        let y = restricted.label_column(dm);
        let model = train_gbt(&x, &y, &params).unwrap();
        let pi = permutation_importance(&model, &x, &y, 5, 99, 1).unwrap();
        let mut mi_map = std::collections::BTreeMap::new();
        let mut pi_map = std::collections::BTreeMap::new();
        for (j, id) in survivors.iter().enumerate() {
            let col: Vec<f64> = (0..x.n_rows()).map(|i| x[(i, j)]).collect();
            mi_map.insert(*id, mutual_information(&col, &y, 16).unwrap());
            pi_map.insert(*id, pi[j]);
        }
        scores.pi.insert(dm, pi_map);
        scores.mi.insert(dm, mi_map);
    }
    let critical = assemble_critical_set(&scores, &survivors, ThresholdRule::AboveMean).unwrap();
    assert!(!critical.unified.is_empty());
    for id in &critical.unified {
        assert!(survivors.contains(id), "{id} skipped the dispersion stage");
    }
    // Provenance exists for every selected feature.
    for id in &critical.unified {
        assert!(critical.provenance.contains_key(id));
    }
}
