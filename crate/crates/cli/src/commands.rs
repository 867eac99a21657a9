//! The pipeline stages behind the CLI subcommands.
//!
//! Every stage reads persisted intermediates from the previous one and
//! writes its own, so stages can be re-run independently; given the same
//! config and seed, outputs are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dmq_core::dataset::{ingest_cell, interpolate_labels, CellDataset, Dm};
use dmq_core::error::{Error, Result};
use dmq_core::eval::{run_protocol, CellInfo, EvaluationReport, TestPlan};
use dmq_core::eval::report::emit_report;
use dmq_core::features::FeatureMatrix;
use dmq_core::filters::{
    amd_filter, assemble_critical_set, mutual_information, permutation_importance, train_gbt,
    write_scores_csv, CriticalFeatureSet, FilterScores, GbtParams, ThresholdRule,
};
use dmq_core::io;
use dmq_core::linalg::Mat;
use dmq_core::parallel::par_map;
use dmq_core::rng::{derive_seed, Rng};
use dmq_core::synth::{default_corpus_specs, generate_cell, write_cell_files, AbnormalKind};

use crate::config::RunConfig;

fn datasets_dir(config: &RunConfig) -> PathBuf {
    config.paths.out_dir.join("datasets")
}

fn features_path(config: &RunConfig) -> PathBuf {
    config.paths.out_dir.join("features.csv")
}

fn critical_set_path(config: &RunConfig) -> PathBuf {
    config.paths.out_dir.join("filter").join("critical_set.json")
}

fn report_dir(config: &RunConfig) -> PathBuf {
    config.paths.out_dir.join("report")
}

/// Generate the synthetic corpus into the data directory.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let n_cells = config.synth.cells.clamp(1, 16);
    let mut specs = default_corpus_specs::<f64>(derive_seed(config.seed, "synth"));
    specs.truncate(n_cells);

    for spec in specs.iter_mut() {
        if config.synth.abnormal_per_cell > 0 {
            let mut rng = Rng::new(derive_seed(spec.seed, "abnormal"));
            let kinds = [
                AbnormalKind::SensorFault,
                AbnormalKind::TemperatureExcursion,
                AbnormalKind::CapacityRegression,
            ];
            let mut chosen = std::collections::BTreeSet::new();
            while chosen.len() < config.synth.abnormal_per_cell.min(config.synth.cycles_per_cell / 2)
            {
                chosen.insert(rng.below(config.synth.cycles_per_cell) as u32);
            }
            spec.abnormal_cycles = chosen
                .into_iter()
                .map(|idx| (idx, kinds[rng.below(kinds.len())]))
                .collect();
        }
    }

    let cells = par_map(specs.len(), config.jobs, |i| {
        let cell = generate_cell(&specs[i], config.synth.cycles_per_cell)?;
        let dir = config.paths.data_dir.join(&specs[i].cell_id);
        write_cell_files(&cell, &dir)?;
        Ok::<_, Error>(cell.cycles.len())
    });
    let mut total = 0usize;
    for result in cells {
        total += result?;
    }
    println!(
        "synth: wrote {n_cells} cells ({total} cycles) under {}",
        config.paths.data_dir.display()
    );
    Ok(())
}

/// Ingest every cell directory, label it, persist the datasets.
pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let data_dir = &config.paths.data_dir;
    let mut cell_dirs: Vec<PathBuf> = std::fs::read_dir(data_dir)
        .map_err(|e| Error::io(data_dir.display().to_string(), e))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.is_dir() && path.join("meta.csv").is_file()).then_some(path)
        })
        .collect();
    cell_dirs.sort();
    if cell_dirs.is_empty() {
        return Err(Error::Dependency(format!(
            "no cell directories (containing meta.csv) under {}",
            data_dir.display()
        )));
    }

    let results = par_map(cell_dirs.len(), config.jobs, |i| {
        let cell = ingest_cell::<f64>(&cell_dirs[i], &config.ingest)?;
        Ok::<_, Error>(interpolate_labels(cell))
    });

    let out = datasets_dir(config);
    let mut log_rows: Vec<Vec<String>> = Vec::new();
    let mut drop_rows: Vec<Vec<String>> = Vec::new();
    let mut cells_rows: Vec<Vec<String>> = Vec::new();
    let mut total_retained = 0usize;
    let mut total_dropped = 0usize;
    for result in results {
        let cell = result?;
        cell.save_json(&out.join(format!("{}.json", cell.cell_id)))?;
        total_retained += cell.cycles.len();
        total_dropped += cell.dropped.len();
        log_rows.push(vec![
            cell.cell_id.clone(),
            (cell.cycles.len() + cell.dropped.len()).to_string(),
            cell.cycles.len().to_string(),
            cell.dropped.len().to_string(),
            cell.anchors.len().to_string(),
        ]);
        for drop in &cell.dropped {
            drop_rows.push(vec![
                cell.cell_id.clone(),
                drop.cycle_index.to_string(),
                drop.reason.replace(',', ";"),
            ]);
        }
        cells_rows.push(vec![
            cell.cell_id.clone(),
            cell.protocol.as_str().to_string(),
            cell.temperature_class.as_str().to_string(),
            io::fmt_scalar(cell.nominal_capacity_ah),
        ]);
    }
    io::write_table(
        out.join("cells.csv"),
        &["cell_id", "protocol", "temperature_class", "nominal_capacity_ah"],
        &cells_rows,
    )?;
    io::write_table(
        config.paths.out_dir.join("ingest_log.csv"),
        &["cell_id", "ingested", "retained", "dropped", "anchors"],
        &log_rows,
    )?;
    io::write_table(
        config.paths.out_dir.join("dropped_cycles.csv"),
        &["cell_id", "cycle_index", "reason"],
        &drop_rows,
    )?;
    println!(
        "ingest: {} cells, {total_retained} cycles retained, {total_dropped} dropped",
        cell_dirs.len()
    );
    Ok(())
}

fn load_datasets(config: &RunConfig) -> Result<Vec<CellDataset<f64>>> {
    let dir = datasets_dir(config);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|_| {
            Error::Dependency(format!(
                "no ingested datasets under {} (run `dmq ingest` first)",
                dir.display()
            ))
        })?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension().is_some_and(|e| e == "json")).then_some(path)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dependency(format!(
            "no ingested datasets under {} (run `dmq ingest` first)",
            dir.display()
        )));
    }
    files.iter().map(|p| CellDataset::load_json(p)).collect()
}

/// Featurize every labeled dataset into the persisted feature matrix.
pub fn cmd_features(config: &RunConfig) -> Result<()> {
    let cells = load_datasets(config)?;
    let bin_width = config.ic.bin_width_v;

    if config.ic.dump_curves {
        dump_curves(config, &cells)?;
    }

    // Cells are independent; featurize in parallel, then merge in order.
    let per_cell = par_map(cells.len(), config.jobs, |i| {
        dmq_core::features::featurize_cell(&cells[i], bin_width)
    });
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut skip_rows: Vec<Vec<String>> = Vec::new();
    for (cell, result) in cells.iter().zip(per_cell) {
        let (matrix, skipped) = result?;
        rows.extend(matrix.rows);
        labels.extend(matrix.labels);
        for (cycle, err) in skipped {
            skip_rows.push(vec![
                cell.cell_id.clone(),
                cycle.to_string(),
                err.to_string().replace(',', ";"),
            ]);
        }
    }
    let matrix = FeatureMatrix::new(rows, labels);
    matrix.write_csv(&features_path(config))?;
    if !skip_rows.is_empty() {
        io::write_table(
            config.paths.out_dir.join("features_skipped.csv"),
            &["cell_id", "cycle_index", "reason"],
            &skip_rows,
        )?;
    }
    println!(
        "features: {} rows x {} features -> {}",
        matrix.n_rows(),
        matrix.n_features(),
        features_path(config).display()
    );
    Ok(())
}

fn dump_curves(config: &RunConfig, cells: &[CellDataset<f64>]) -> Result<()> {
    for cell in cells {
        for rec in &cell.cycles {
            let curve = match dmq_core::ic::compute_ic(rec, config.ic.bin_width_v) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let base = config
                .paths
                .out_dir
                .join("curves")
                .join(&cell.cell_id);
            curve.dump(&base.join(format!("cycle_{:05}.csv", rec.cycle_index)))?;
            if config.ic.smoothing_window >= 3 {
                if let Ok(smooth) = dmq_core::ic::smooth_ic(&curve, config.ic.smoothing_window) {
                    smooth.dump(&base.join(format!("cycle_{:05}_smooth.csv", rec.cycle_index)))?;
                }
            }
        }
    }
    Ok(())
}

fn load_features(config: &RunConfig) -> Result<FeatureMatrix<f64>> {
    let path = features_path(config);
    if !path.is_file() {
        return Err(Error::Dependency(format!(
            "{} not found (run `dmq features` first)",
            path.display()
        )));
    }
    FeatureMatrix::read_csv(&path)
}

/// Run the three-stage filter pipeline and persist scores + critical set.
pub fn cmd_filter(config: &RunConfig) -> Result<()> {
    let matrix = load_features(config)?;
    let normalized = matrix.normalize()?;
    let (survivors, amd_scores) = amd_filter(&normalized, config.filter.keep_ratio)?;

    let restricted = normalized.restrict(&survivors)?;
    let x = Mat::from_rows(restricted.rows.iter().map(|r| r.values.clone()).collect());
    let gbt_params = GbtParams {
        n_trees: config.filter.gbt.n_trees,
        max_depth: config.filter.gbt.max_depth,
        learning_rate: config.filter.gbt.learning_rate,
        subsample: config.filter.gbt.subsample,
        min_samples_leaf: config.filter.gbt.min_samples_leaf,
        seed: derive_seed(config.seed, "filter.gbt"),
    };

    let mut scores = FilterScores::<f64> {
        amd: amd_scores,
        pi: BTreeMap::new(),
        mi: BTreeMap::new(),
    };
    for dm in Dm::ALL {
        let y = restricted.label_column(dm);
        let model = train_gbt(&x, &y, &gbt_params)?;
        let pi = permutation_importance(
            &model,
            &x,
            &y,
            config.filter.pi_repeats,
            derive_seed(config.seed, &format!("filter.pi.{}", dm.column())),
            config.jobs,
        )?;
        let mi_values = par_map(survivors.len(), config.jobs, |j| {
            let col: Vec<f64> = (0..x.n_rows()).map(|i| x[(i, j)]).collect();
            mutual_information(&col, &y, config.filter.mi_bins)
        });
        let mut pi_map = BTreeMap::new();
        let mut mi_map = BTreeMap::new();
        for ((j, id), mi) in survivors.iter().enumerate().zip(mi_values) {
            pi_map.insert(*id, pi[j]);
            mi_map.insert(*id, mi?);
        }
        scores.pi.insert(dm, pi_map);
        scores.mi.insert(dm, mi_map);
    }

    let critical = assemble_critical_set(&scores, &survivors, ThresholdRule::AboveMean)?;
    let filter_dir = config.paths.out_dir.join("filter");
    write_scores_csv(&scores, &critical, &survivors, &filter_dir.join("scores.csv"))?;
    critical.save_json(&critical_set_path(config))?;
    println!(
        "filter: {} dispersion survivors, {} critical features -> {}",
        survivors.len(),
        critical.unified.len(),
        filter_dir.display()
    );
    Ok(())
}

fn load_cell_infos(config: &RunConfig) -> Result<Vec<CellInfo>> {
    let path = datasets_dir(config).join("cells.csv");
    if !path.is_file() {
        return Err(Error::Dependency(format!(
            "{} not found (run `dmq ingest` first)",
            path.display()
        )));
    }
    let table = io::Table::read(&path)?;
    let mut infos = Vec::with_capacity(table.rows.len());
    for i in 0..table.rows.len() {
        let cell_id: String = table.field(i, 0)?;
        let protocol_raw: String = table.field(i, 1)?;
        let class_raw: String = table.field(i, 2)?;
        let protocol = dmq_core::dataset::Protocol::parse(&protocol_raw)
            .ok_or_else(|| Error::parse(&table.path, table.rows[i].0, "bad protocol"))?;
        let temperature_class = dmq_core::dataset::TemperatureClass::parse(&class_raw)
            .ok_or_else(|| Error::parse(&table.path, table.rows[i].0, "bad temperature class"))?;
        infos.push(CellInfo {
            cell_id,
            protocol,
            temperature_class,
        });
    }
    Ok(infos)
}

/// Run the six-test protocol and emit the report directory. Returns whether
/// any fold failed (nonzero exit).
pub fn cmd_evaluate(config: &RunConfig) -> Result<bool> {
    let matrix = load_features(config)?;
    let cells = load_cell_infos(config)?;
    let critical = if critical_set_path(config).is_file() {
        Some(CriticalFeatureSet::load_json(&critical_set_path(config))?)
    } else {
        None
    };
    let plan = match &config.plan {
        Some(section) => TestPlan {
            tests: section.tests.clone(),
        },
        None => TestPlan::default_plan(),
    };

    let report = run_protocol(&matrix, &cells, critical.as_ref(), &plan, &config.eval)?;
    let dir = report_dir(config);
    emit_report(&report, critical.as_ref(), &dir)?;
    write_run_json(config, &dir)?;

    print_summary(&report);
    if report.has_failures() {
        eprintln!(
            "evaluate: {} fold(s) failed; see {}",
            report.failures.len(),
            dir.join("failures.csv").display()
        );
    }
    Ok(report.has_failures())
}

/// Re-emit the report tables and plots from the persisted report.json.
pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let dir = report_dir(config);
    let path = dir.join("report.json");
    if !path.is_file() {
        return Err(Error::Dependency(format!(
            "{} not found (run `dmq evaluate` first)",
            path.display()
        )));
    }
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let report: EvaluationReport<f64> = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))?;
    let critical = if critical_set_path(config).is_file() {
        Some(CriticalFeatureSet::load_json(&critical_set_path(config))?)
    } else {
        None
    };
    emit_report(&report, critical.as_ref(), &dir)?;
    write_run_json(config, &dir)?;
    print_summary(&report);
    Ok(())
}

fn write_run_json(config: &RunConfig, dir: &Path) -> Result<()> {
    let run = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "jobs": config.jobs,
        "config": config.echo(),
    });
    let text = serde_json::to_string_pretty(&run)
        .map_err(|e| Error::Parameter(format!("serializing run.json: {e}")))?;
    io::write_text(&dir.join("run.json"), &text)
}

fn print_summary(report: &EvaluationReport<f64>) {
    println!("model      dm      amape%   std    armse%   std");
    for a in &report.aggregates {
        println!(
            "{:<10} {:<7} {:>7.2} {:>6.2} {:>7.2} {:>6.2}",
            a.model,
            a.dm.label(),
            a.amape,
            a.std_mape,
            a.armse,
            a.std_rmse
        );
    }
    for row in &report.ttest {
        let ts: Vec<String> = row.per_dm.iter().map(|r| format!("{:.3}", r.t)).collect();
        println!("t({}) = [{}], total {:.3}", row.model, ts.join(", "), row.total);
    }
}
