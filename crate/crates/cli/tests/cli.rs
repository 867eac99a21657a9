//! Integration tests driving the `dmq` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dmq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmq"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    dmq()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dmq_cli_{tag}"));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small but filter-compatible corpus: 6 cells x 30 cycles = 180 rows.
fn write_small_config(dir: &Path, extra: &str) {
    let config = format!(
        "seed = 11\njobs = 2\n\n[paths]\ndata_dir = \"data\"\nout_dir = \"out\"\n\n\
         [synth]\ncells = 6\ncycles_per_cell = 30\n\n[filter]\npi_repeats = 5\n{extra}"
    );
    std::fs::write(dir.join("config.toml"), config).unwrap();
}

#[test]
fn help_documents_config_keys_and_subcommands() {
    let out = dmq().arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for term in [
        "ingest", "synth", "features", "filter", "evaluate", "report", "--config", "--seed",
        "--jobs", "--features", "bin_width_v", "keep_ratio", "pi_repeats", "mi_bins",
        "mape_floor", "v_min_v", "EXIT CODES",
    ] {
        assert!(text.contains(term), "--help missing '{term}'");
    }
}

#[test]
fn pipeline_chain_produces_expected_artifacts() {
    let dir = temp_dir("chain");
    write_small_config(&dir, "\n[ic]\ndump_curves = true\nsmoothing_window = 5\n");

    let synth = run_in(&dir, &["--config", "config.toml", "synth"]);
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));

    let ingest = run_in(&dir, &["--config", "config.toml", "ingest"]);
    assert!(ingest.status.success(), "{}", String::from_utf8_lossy(&ingest.stderr));
    let datasets: Vec<_> = std::fs::read_dir(dir.join("out/datasets"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
        .collect();
    assert_eq!(datasets.len(), 6);

    let features = run_in(&dir, &["--config", "config.toml", "features"]);
    assert!(features.status.success());
    let header = std::fs::read_to_string(dir.join("out/features.csv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    // cell_id, cycle_index, efc + 91 features + 3 labels.
    assert_eq!(header.split(',').count(), 97);
    // Diagnostic curve dumps (original + smoothed) were requested.
    assert!(dir.join("out/curves/CCD_1/cycle_00000.csv").is_file());
    assert!(dir.join("out/curves/CCD_1/cycle_00000_smooth.csv").is_file());

    // Re-running features is byte-identical.
    let before = std::fs::read(dir.join("out/features.csv")).unwrap();
    let rerun = run_in(&dir, &["--config", "config.toml", "features"]);
    assert!(rerun.status.success());
    let after = std::fs::read(dir.join("out/features.csv")).unwrap();
    assert_eq!(before, after, "features.csv changed between identical runs");

    let filter = run_in(&dir, &["--config", "config.toml", "filter"]);
    assert!(filter.status.success(), "{}", String::from_utf8_lossy(&filter.stderr));
    let scores = std::fs::read_to_string(dir.join("out/filter/scores.csv")).unwrap();
    // 91 feature rows plus header; 63 dispersion survivors.
    assert_eq!(scores.lines().count(), 92);
    let survivors = scores
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(2) == Some("1"))
        .count();
    assert_eq!(survivors, 63);
    assert!(dir.join("out/filter/critical_set.json").is_file());

    // A seeded rerun reproduces the critical set byte for byte.
    let scores_before = std::fs::read(dir.join("out/filter/scores.csv")).unwrap();
    let set_before = std::fs::read(dir.join("out/filter/critical_set.json")).unwrap();
    let rerun = run_in(&dir, &["--config", "config.toml", "filter"]);
    assert!(rerun.status.success());
    assert_eq!(std::fs::read(dir.join("out/filter/scores.csv")).unwrap(), scores_before);
    assert_eq!(
        std::fs::read(dir.join("out/filter/critical_set.json")).unwrap(),
        set_before
    );

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn keep_ratio_one_retains_every_dispersed_feature() {
    let dir = temp_dir("keepall");
    write_small_config(&dir, "keep_ratio = 1.0\n");
    for cmd in ["synth", "ingest", "features", "filter"] {
        let out = run_in(&dir, &["--config", "config.toml", cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let scores = std::fs::read_to_string(dir.join("out/filter/scores.csv")).unwrap();
    let mut survivors = 0usize;
    let mut degenerate = 0usize;
    for line in scores.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[2] == "1" {
            survivors += 1;
        }
        if fields[1].parse::<f64>().unwrap() == 0.0 {
            degenerate += 1;
            // Zero-dispersion features are never retained.
            assert_eq!(fields[2], "0", "degenerate feature retained: {line}");
        }
    }
    // At ratio 1.0 everything with any dispersion survives. On clean
    // synthetic curves the negative-part family is structurally degenerate
    // (binned dQ/dV is non-negative), so a handful of columns drop out.
    assert_eq!(survivors + degenerate, 91);
    assert!(degenerate >= 5, "expected the negative-part family to be flat");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn empty_data_dir_is_a_data_error() {
    let dir = temp_dir("empty");
    write_small_config(&dir, "");
    std::fs::create_dir_all(dir.join("data")).unwrap();
    let out = run_in(&dir, &["--config", "config.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no cell directories"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn corrupt_cycle_file_names_the_file_and_line() {
    let dir = temp_dir("corrupt");
    write_small_config(&dir, "");
    let synth = run_in(&dir, &["--config", "config.toml", "synth"]);
    assert!(synth.status.success());
    // Damage one record of one cycle file.
    let victim = dir.join("data/CCD_1/cycles/cycle_00004.csv");
    let mut text = std::fs::read_to_string(&victim).unwrap();
    text = text.replace('.', "!");
    std::fs::write(&victim, &text).unwrap();

    let out = run_in(&dir, &["--config", "config.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cycle_00004.csv"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_dependencies_are_reported() {
    let dir = temp_dir("deps");
    write_small_config(&dir, "");
    // features before ingest.
    let out = run_in(&dir, &["--config", "config.toml", "features"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));
    // filter before features.
    let out = run_in(&dir, &["--config", "config.toml", "filter"]);
    assert_eq!(out.status.code(), Some(2));
    // report before evaluate.
    let out = run_in(&dir, &["--config", "config.toml", "report"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = temp_dir("badconfig");
    std::fs::write(dir.join("config.toml"), "not_a_real_key = true\n").unwrap();
    let out = run_in(&dir, &["--config", "config.toml", "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_real_key"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn overlapping_plan_is_a_validation_error() {
    let dir = temp_dir("badplan");
    write_small_config(
        &dir,
        "\n[plan]\ntests = [\n  [\"CCD_1\", \"CCD_1\", \"CCD_2\"],\n  [\"CCD_2\", \"CCD_3\", \"DCD_1\"],\n  [\"CCD_3\", \"DCD_1\", \"DCD_2\"],\n  [\"DCD_1\", \"DCD_2\", \"CCD_1\"],\n  [\"DCD_2\", \"CCD_1\", \"CCD_2\"],\n  [\"CCD_2\", \"CCD_3\", \"DCD_2\"],\n]\n",
    );
    for cmd in ["synth", "ingest", "features"] {
        let out = run_in(&dir, &["--config", "config.toml", cmd]);
        assert!(out.status.success(), "{cmd}");
    }
    let out = run_in(
        &dir,
        &["--config", "config.toml", "--features", "all", "evaluate"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicated"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn evaluate_without_critical_set_requires_all_features_mode() {
    let dir = temp_dir("nocrit");
    // A valid plan for the six-cell all-CCD corpus, covering its three
    // temperature classes.
    write_small_config(
        &dir,
        "\n[plan]\ntests = [\n  [\"CCD_1\", \"CCD_2\", \"CCD_3\"],\n  [\"CCD_4\", \"CCD_5\", \"CCD_6\"],\n  [\"CCD_1\", \"CCD_4\", \"CCD_6\"],\n  [\"CCD_2\", \"CCD_5\", \"CCD_6\"],\n  [\"CCD_3\", \"CCD_4\", \"CCD_5\"],\n  [\"CCD_1\", \"CCD_2\", \"CCD_6\"],\n]\n",
    );
    for cmd in ["synth", "ingest", "features"] {
        let out = run_in(&dir, &["--config", "config.toml", cmd]);
        assert!(out.status.success(), "{cmd}");
    }
    // Default variants include the critical-feature network: dependency
    // error without a critical set.
    let out = run_in(&dir, &["--config", "config.toml", "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("critical"));
    std::fs::remove_dir_all(&dir).ok();
}
