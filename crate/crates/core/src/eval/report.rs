//! Report directory emission: tables, plot data, and simple vector plots.
//!
//! Layout under the report directory:
//! `metrics.csv` (per-test and aggregate errors), `ttest.csv`,
//! `critical_features.csv`, `plots/*.csv` + `plots/*.svg`, and `run.json`
//! (written by the CLI with the config echo). Output is deterministic byte
//! for byte given a fixed report.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::Dm;
use crate::error::Result;
use crate::filters::CriticalFeatureSet;
use crate::io;
use crate::scalar::Real;
use crate::stats;

use super::{EvaluationReport, MetricCell};

/// Quantile boxes per error distribution in the box-plot emission.
pub const QUANTILE_BOXES: usize = 15;

pub fn emit_report<F: Real + serde::Serialize>(
    report: &EvaluationReport<F>,
    critical: Option<&CriticalFeatureSet>,
    dir: &Path,
) -> Result<()> {
    write_metrics_csv(report, &dir.join("metrics.csv"))?;
    write_ttest_csv(report, &dir.join("ttest.csv"))?;
    if let Some(set) = critical {
        write_critical_csv(set, &dir.join("critical_features.csv"))?;
    }
    write_failures_csv(report, &dir.join("failures.csv"))?;

    let plots = dir.join("plots");
    write_mape_bars(report, &plots)?;
    write_error_boxes(report, &plots)?;
    write_radar(report, &plots)?;

    // The full report for downstream tooling and re-emission.
    let json = serde_json::to_string(report)
        .map_err(|e| crate::error::Error::Parameter(format!("serializing report: {e}")))?;
    io::write_text(&dir.join("report.json"), &json)?;
    Ok(())
}

fn write_metrics_csv<F: Real>(report: &EvaluationReport<F>, path: &Path) -> Result<()> {
    let header = [
        "model",
        "dm",
        "kind",
        "test_index",
        "mape_pct",
        "rmse_pct",
        "mape_excluded",
        "std_mape",
        "std_rmse",
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for m in &report.metrics {
        rows.push(vec![
            m.model.clone(),
            m.dm.label().to_string(),
            "test".to_string(),
            (m.test_index + 1).to_string(),
            io::fmt_scalar(m.mape_pct),
            io::fmt_scalar(m.rmse_pct),
            m.mape_excluded.to_string(),
            String::new(),
            String::new(),
        ]);
    }
    for a in &report.aggregates {
        rows.push(vec![
            a.model.clone(),
            a.dm.label().to_string(),
            "aggregate".to_string(),
            String::new(),
            io::fmt_scalar(a.amape),
            io::fmt_scalar(a.armse),
            String::new(),
            io::fmt_scalar(a.std_mape),
            io::fmt_scalar(a.std_rmse),
        ]);
    }
    io::write_table(path, &header, &rows)
}

fn write_ttest_csv<F: Real>(report: &EvaluationReport<F>, path: &Path) -> Result<()> {
    let header = [
        "model",
        "t_lli",
        "t_lam_pe",
        "t_lam_ne",
        "total",
        "df",
        "threshold",
        "significant_any",
    ];
    let rows: Vec<Vec<String>> = report
        .ttest
        .iter()
        .map(|row| {
            let mut out = vec![row.model.clone()];
            for r in &row.per_dm {
                out.push(if r.infinite {
                    "inf".to_string()
                } else {
                    io::fmt_scalar(r.t)
                });
            }
            out.push(io::fmt_scalar(row.total));
            out.push(report.t_df.to_string());
            out.push(io::fmt_scalar(report.t_threshold));
            out.push((row.per_dm.iter().any(|r| r.significant) as u8).to_string());
            out
        })
        .collect();
    io::write_table(path, &header, &rows)
}

fn write_critical_csv(set: &CriticalFeatureSet, path: &Path) -> Result<()> {
    let header = ["feature", "critical_lli", "critical_lam_pe", "critical_lam_ne", "provenance"];
    let rows: Vec<Vec<String>> = set
        .ordered_unified()
        .iter()
        .map(|id| {
            let mut row = vec![id.to_string()];
            for dm in Dm::ALL {
                row.push((set.per_dm[&dm].contains(id) as u8).to_string());
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
    io::write_table(path, &header, &rows)
}

fn write_failures_csv<F: Real>(report: &EvaluationReport<F>, path: &Path) -> Result<()> {
    let header = ["model", "test_index", "message"];
    let rows: Vec<Vec<String>> = report
        .failures
        .iter()
        .map(|f| {
            vec![
                f.model.clone(),
                (f.test_index + 1).to_string(),
                f.message.replace(',', ";"),
            ]
        })
        .collect();
    io::write_table(path, &header, &rows)
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Per-test MAPE bars, one panel per (model, mode).
fn write_mape_bars<F: Real>(report: &EvaluationReport<F>, plots: &Path) -> Result<()> {
    let header = ["model", "dm", "test_index", "mape_pct"];
    let rows: Vec<Vec<String>> = report
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.model.clone(),
                m.dm.label().to_string(),
                (m.test_index + 1).to_string(),
                io::fmt_scalar(m.mape_pct),
            ]
        })
        .collect();
    io::write_table(plots.join("mape_bars.csv"), &header, &rows)?;

    let models = model_order(report);
    let max_mape = report
        .metrics
        .iter()
        .map(|m| m.mape_pct.as_f64())
        .fold(1.0_f64, f64::max);

    let panel_w = 150.0;
    let panel_h = 90.0;
    let margin = 40.0;
    let width = margin * 2.0 + panel_w * models.len() as f64;
    let height = margin * 2.0 + panel_h * 3.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"##,
        fmt3(width),
        fmt3(height),
        fmt3(width),
        fmt3(height)
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for (mi, model) in models.iter().enumerate() {
        let _ = writeln!(
            svg,
            r##"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"##,
            fmt3(margin + panel_w * (mi as f64 + 0.5)),
            fmt3(margin - 8.0),
            model
        );
        for (di, dm) in Dm::ALL.iter().enumerate() {
            let x0 = margin + panel_w * mi as f64;
            let y0 = margin + panel_h * di as f64;
            if mi == 0 {
                let _ = writeln!(
                    svg,
                    r##"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"##,
                    fmt3(margin - 6.0),
                    fmt3(y0 + panel_h / 2.0),
                    dm.label()
                );
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#999" stroke-width="0.5"/>"##,
                fmt3(x0),
                fmt3(y0),
                fmt3(panel_w),
                fmt3(panel_h)
            );
            let mut tests: Vec<&MetricCell<F>> = report
                .metrics
                .iter()
                .filter(|m| &m.model == model && m.dm == *dm)
                .collect();
            tests.sort_by_key(|m| m.test_index);
            let bar_w = panel_w / (tests.len().max(1) as f64) * 0.7;
            for m in tests {
                let frac = (m.mape_pct.as_f64() / max_mape).min(1.0);
                let h = frac * (panel_h - 10.0);
                let x = x0 + panel_w * (m.test_index as f64 + 0.15) / 6.0;
                let _ = writeln!(
                    svg,
                    r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#4878a8"/>"##,
                    fmt3(x),
                    fmt3(y0 + panel_h - h),
                    fmt3(bar_w / 6.0 * 6.0 / 6.0 * 4.0),
                    fmt3(h)
                );
            }
        }
    }
    let _ = writeln!(svg, "</svg>");
    io::write_text(&plots.join("mape_bars.svg"), &svg)
}

/// Fifteen-quantile boxes of the absolute error distribution of test 1,
/// per (model, mode).
fn write_error_boxes<F: Real>(report: &EvaluationReport<F>, plots: &Path) -> Result<()> {
    let models = model_order(report);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut geoms: Vec<(String, Dm, Vec<f64>)> = Vec::new();
    for model in &models {
        for dm in Dm::ALL {
            let mut errors: Vec<f64> = report
                .predictions
                .iter()
                .filter(|p| &p.model == model && p.dm == dm && p.test_index == 0)
                .map(|p| ((p.pred - p.truth) * F::c(100.0)).abs().as_f64())
                .collect();
            if errors.is_empty() {
                continue;
            }
            errors.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let edges: Vec<f64> = (0..=QUANTILE_BOXES)
                .map(|k| {
                    stats::percentile_of_sorted(&errors, 100.0 * k as f64 / QUANTILE_BOXES as f64)
                })
                .collect();
            for (k, pair) in edges.windows(2).enumerate() {
                rows.push(vec![
                    model.clone(),
                    dm.label().to_string(),
                    (k + 1).to_string(),
                    io::fmt_scalar(pair[0]),
                    io::fmt_scalar(pair[1]),
                ]);
            }
            geoms.push((model.clone(), dm, edges));
        }
    }
    io::write_table(
        plots.join("error_boxes.csv"),
        &["model", "dm", "box_index", "lower_pct", "upper_pct"],
        &rows,
    )?;

    let col_w = 60.0;
    let margin = 45.0;
    let plot_h = 200.0;
    let max_edge = geoms
        .iter()
        .flat_map(|(_, _, e)| e.iter().copied())
        .fold(1e-9_f64, f64::max);
    let width = margin * 2.0 + col_w * geoms.len() as f64;
    let height = margin * 2.0 + plot_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"##,
        fmt3(width),
        fmt3(height),
        fmt3(width),
        fmt3(height)
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for (i, (model, dm, edges)) in geoms.iter().enumerate() {
        let x = margin + col_w * i as f64 + col_w * 0.2;
        for pair in edges.windows(2) {
            let y_lo = margin + plot_h * (1.0 - pair[0] / max_edge);
            let y_hi = margin + plot_h * (1.0 - pair[1] / max_edge);
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#7aa8d2" stroke="#223" stroke-width="0.3"/>"##,
                fmt3(x),
                fmt3(y_hi),
                fmt3(col_w * 0.6),
                fmt3((y_lo - y_hi).max(0.2))
            );
        }
        let _ = writeln!(
            svg,
            r##"<text x="{}" y="{}" font-size="9" text-anchor="middle">{} {}</text>"##,
            fmt3(x + col_w * 0.3),
            fmt3(margin + plot_h + 14.0),
            model,
            dm.label()
        );
    }
    let _ = writeln!(svg, "</svg>");
    io::write_text(&plots.join("error_boxes.svg"), &svg)
}

/// Radar charts of AMAPE over the three modes: network variants and the
/// benchmark baseline.
fn write_radar<F: Real>(report: &EvaluationReport<F>, plots: &Path) -> Result<()> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for a in &report.aggregates {
        rows.push(vec![
            a.model.clone(),
            a.dm.label().to_string(),
            io::fmt_scalar(a.amape),
        ]);
    }
    io::write_table(plots.join("radar_amape.csv"), &["model", "dm", "amape_pct"], &rows)?;

    let models = model_order(report);
    let max_amape = report
        .aggregates
        .iter()
        .map(|a| a.amape.as_f64())
        .fold(1.0_f64, f64::max);
    let cx = 160.0;
    let cy = 150.0;
    let radius = 100.0;
    let angle = |k: usize| -> (f64, f64) {
        let a = std::f64::consts::TAU * (k as f64) / 3.0 - std::f64::consts::FRAC_PI_2;
        (a.cos(), a.sin())
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="420" height="300" viewBox="0 0 420 300">"##
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for k in 0..3 {
        let (dx, dy) = angle(k);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#aaa" stroke-width="0.5"/>"##,
            fmt3(cx),
            fmt3(cy),
            fmt3(cx + radius * dx),
            fmt3(cy + radius * dy)
        );
        let _ = writeln!(
            svg,
            r##"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"##,
            fmt3(cx + (radius + 14.0) * dx),
            fmt3(cy + (radius + 14.0) * dy),
            Dm::ALL[k].label()
        );
    }
    let palette = ["#4878a8", "#c05040", "#50a060", "#8060a0", "#a08030", "#508090"];
    for (mi, model) in models.iter().enumerate() {
        let mut points = Vec::new();
        for (k, dm) in Dm::ALL.iter().enumerate() {
            let amape = report
                .aggregate(model, *dm)
                .map(|a| a.amape.as_f64())
                .unwrap_or(0.0);
            let r = radius * (amape / max_amape).min(1.0);
            let (dx, dy) = angle(k);
            points.push(format!("{},{}", fmt3(cx + r * dx), fmt3(cy + r * dy)));
        }
        let color = palette[mi % palette.len()];
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"##,
            points.join(" "),
            color
        );
        let _ = writeln!(
            svg,
            r##"<text x="310" y="{}" font-size="10" fill="{}">{}</text>"##,
            fmt3(40.0 + 14.0 * mi as f64),
            color,
            model
        );
    }
    let _ = writeln!(svg, "</svg>");
    io::write_text(&plots.join("radar_amape.svg"), &svg)
}

fn model_order<F: Real>(report: &EvaluationReport<F>) -> Vec<String> {
    let mut models = Vec::new();
    for m in &report.metrics {
        if !models.contains(&m.model) {
            models.push(m.model.clone());
        }
    }
    models
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Aggregate, TestPlan};

    fn tiny_report() -> EvaluationReport<f64> {
        let mut metrics = Vec::new();
        let mut predictions = Vec::new();
        for test_index in 0..6 {
            for dm in Dm::ALL {
                metrics.push(MetricCell {
                    model: "SVR".to_string(),
                    test_index,
                    dm,
                    mape_pct: 10.0 + test_index as f64,
                    rmse_pct: 1.0 + 0.1 * test_index as f64,
                    mape_excluded: 0,
                });
                for k in 0..30 {
                    predictions.push(crate::eval::PredRecord {
                        model: "SVR".to_string(),
                        test_index,
                        cell_id: format!("CELL_{}", k % 3),
                        efc: k as f64,
                        dm,
                        truth: 0.001 * k as f64,
                        pred: 0.001 * k as f64 + 0.0005,
                    });
                }
            }
        }
        let aggregates = Dm::ALL
            .iter()
            .map(|dm| Aggregate {
                model: "SVR".to_string(),
                dm: *dm,
                amape: 12.5,
                std_mape: 1.8,
                armse: 1.25,
                std_rmse: 0.2,
                n_tests: 6,
            })
            .collect();
        EvaluationReport {
            plan: TestPlan::default_plan(),
            metrics,
            aggregates,
            ttest: vec![],
            t_threshold: 2.145,
            t_df: 10,
            failures: vec![crate::eval::FoldFailure {
                model: "ENR/LLI".to_string(),
                test_index: 2,
                message: "did not converge".to_string(),
            }],
            predictions,
            seed: 7,
        }
    }

    #[test]
    fn emission_is_deterministic_and_complete() {
        let report = tiny_report();
        let dir1 = std::env::temp_dir().join("dmq_report_emit_1");
        let dir2 = std::env::temp_dir().join("dmq_report_emit_2");
        for d in [&dir1, &dir2] {
            std::fs::remove_dir_all(d).ok();
            emit_report(&report, None, d).unwrap();
        }
        for file in [
            "metrics.csv",
            "ttest.csv",
            "failures.csv",
            "report.json",
            "plots/mape_bars.csv",
            "plots/mape_bars.svg",
            "plots/error_boxes.csv",
            "plots/error_boxes.svg",
            "plots/radar_amape.csv",
            "plots/radar_amape.svg",
        ] {
            let a = std::fs::read(dir1.join(file)).unwrap_or_else(|_| panic!("missing {file}"));
            let b = std::fs::read(dir2.join(file)).unwrap();
            assert_eq!(a, b, "nondeterministic {file}");
        }
        // The failure table names the failed fold.
        let failures = std::fs::read_to_string(dir1.join("failures.csv")).unwrap();
        assert!(failures.contains("ENR/LLI"), "{failures}");
        std::fs::remove_dir_all(&dir1).ok();
        std::fs::remove_dir_all(&dir2).ok();
    }

    #[test]
    fn error_boxes_use_fifteen_quantile_intervals() {
        let report = tiny_report();
        let dir = std::env::temp_dir().join("dmq_report_boxes");
        std::fs::remove_dir_all(&dir).ok();
        emit_report(&report, None, &dir).unwrap();
        let text = std::fs::read_to_string(dir.join("plots/error_boxes.csv")).unwrap();
        // One (model, dm) group of test-1 errors -> 15 boxes per dm.
        let count = text.lines().filter(|l| l.starts_with("SVR,LLI,")).count();
        assert_eq!(count, QUANTILE_BOXES);
        std::fs::remove_dir_all(&dir).ok();
    }
}
