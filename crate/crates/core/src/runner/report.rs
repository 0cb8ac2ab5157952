//! Tables and plots regenerated from stored runs only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::ablation::{AXIS_TAG, CELL_TAG};
use super::experiment::RunRecord;
use super::store::ResultsStore;
use super::sweep::{SWEEP_ID_TAG, SWEEP_TAG};
use crate::error::{Error, Result};
use crate::protocol::{MetricSet, Protocol};

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_MD: &str = "summary.md";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub results_csv: PathBuf,
    pub summary_md: PathBuf,
    pub sweep_csv: Option<PathBuf>,
    /// One per metric when any sweep run is included.
    pub plots: Vec<PathBuf>,
}

fn tag_string(r: &RunRecord) -> String {
    r.tags.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn cell(r: &RunRecord, i: usize) -> String {
    let mean = r.report.scores.values()[i];
    match &r.report.std {
        Some(std) => format!("{mean:.3} ± {:.3}", std.values()[i]),
        None => format!("{mean:.3}"),
    }
}

fn table(out: &mut String, first_col: &str, rows: &[(String, &RunRecord)]) {
    let _ = writeln!(out, "| {first_col} | Accuracy | AUC | Precision | Recall | F1 Score |");
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    for (label, r) in rows {
        let cells: Vec<String> = (0..MetricSet::NAMES.len()).map(|i| cell(r, i)).collect();
        let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
    }
    out.push('\n');
}

fn model_label(r: &RunRecord) -> String {
    if r.config.name.is_empty() || r.config.name == r.backend {
        r.backend.clone()
    } else {
        format!("{} ({})", r.backend, r.config.name)
    }
}

fn write_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["run_id", "name", "backend", "backend_kind", "protocol", "aggregation", "tags", "n_folds"]
        .map(String::from)
        .to_vec();
    for m in MetricSet::NAMES {
        header.push(m.to_string());
        header.push(format!("{m}_std"));
    }
    header.extend(
        [
            "auc_folds",
            "flags",
            "backend_versions",
            "checkpoint_digests",
            "config_hash",
            "split_fingerprint",
            "subject_overlap_folds",
            "mean_fit_seconds",
            "mean_predict_seconds",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in runs {
        let mut row = vec![
            r.run_id.clone(),
            r.config.name.clone(),
            r.backend.clone(),
            serde_json::to_value(r.backend_kind)?.as_str().unwrap_or_default().to_string(),
            r.protocol.name().to_string(),
            serde_json::to_value(r.report.aggregation)?.as_str().unwrap_or_default().to_string(),
            tag_string(r),
            r.folds.len().to_string(),
        ];
        let std = r.report.std.as_ref().map(MetricSet::values);
        for (i, v) in r.report.scores.values().iter().enumerate() {
            row.push(v.to_string());
            row.push(std.map(|s| s[i].to_string()).unwrap_or_default());
        }
        row.extend([
            r.report.auc_folds.to_string(),
            r.report.flags.join(";"),
            r.backend_versions.iter().cloned().collect::<Vec<_>>().join(";"),
            r.checkpoint_digests.iter().cloned().collect::<Vec<_>>().join(";"),
            r.config_hash.clone(),
            r.split_fingerprint.clone(),
            r.subject_overlap_folds.to_string(),
            r.mean_fit_seconds.to_string(),
            r.mean_predict_seconds.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn summary(runs: &[RunRecord]) -> String {
    let mut out = String::from("# Results\n\n");
    let plain: Vec<&RunRecord> = runs
        .iter()
        .filter(|r| !r.tags.contains_key(AXIS_TAG) && !r.tags.contains_key(SWEEP_TAG))
        .collect();
    for (protocol, title) in [
        (Protocol::StratifiedKfoldRepeated, "Stratified repeated k-fold (mean ± std over folds)"),
        (Protocol::Loso, "Leave-one-subject-out (pooled predictions)"),
    ] {
        let rows: Vec<(String, &RunRecord)> = plain
            .iter()
            .filter(|r| r.protocol == protocol)
            .map(|r| (model_label(r), *r))
            .collect();
        if !rows.is_empty() {
            let _ = writeln!(out, "## {title}\n");
            table(&mut out, "Model", &rows);
        }
    }

    let ablation: Vec<&RunRecord> = runs.iter().filter(|r| r.tags.contains_key(AXIS_TAG)).collect();
    if !ablation.is_empty() {
        out.push_str("## Fine-tuning ablation\n\n");
        let mut axes: Vec<&str> = Vec::new();
        for r in &ablation {
            let a = r.tags[AXIS_TAG].as_str();
            if !axes.contains(&a) {
                axes.push(a);
            }
        }
        for axis in axes {
            let rows: Vec<(String, &RunRecord)> = ablation
                .iter()
                .filter(|r| r.tags[AXIS_TAG] == axis)
                .map(|r| (r.tags.get(CELL_TAG).cloned().unwrap_or_default(), *r))
                .collect();
            let _ = writeln!(out, "### {axis}\n");
            table(&mut out, "Setting", &rows);
        }
    }

    let sweep: Vec<&RunRecord> = runs.iter().filter(|r| r.tags.contains_key(SWEEP_TAG)).collect();
    if !sweep.is_empty() {
        out.push_str("## Context proportion sweep\n\n");
        let rows: Vec<(String, &RunRecord)> = sweep
            .iter()
            .map(|r| (format!("{} @ {}", r.backend, r.tags[SWEEP_TAG]), *r))
            .collect();
        table(&mut out, "Backend @ proportion", &rows);
    }

    out.push_str("## Provenance\n\n| Run | Backend versions | Checkpoint digests | Config hash | Split fingerprint | Subject-overlap folds |\n|---|---|---|---|---|---|\n");
    for r in runs {
        let short = |s: &str| s.chars().take(12).collect::<String>();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.run_id,
            r.backend_versions.iter().cloned().collect::<Vec<_>>().join(", "),
            r.checkpoint_digests.iter().map(|d| short(d)).collect::<Vec<_>>().join(", "),
            short(&r.config_hash),
            short(&r.split_fingerprint),
            r.subject_overlap_folds
        );
    }
    out
}

type Series = BTreeMap<String, Vec<(f64, [f64; 5])>>;

/// Sweep points keyed by `backend [sweep id]`, sorted by proportion.
fn sweep_series(runs: &[RunRecord]) -> Series {
    let mut series = Series::new();
    for r in runs {
        let Some(p) = r.tags.get(SWEEP_TAG).and_then(|p| p.parse::<f64>().ok()) else {
            continue;
        };
        let key = match r.tags.get(SWEEP_ID_TAG) {
            Some(id) => format!("{} [{id}]", r.backend),
            None => r.backend.clone(),
        };
        series.entry(key).or_default().push((p, r.report.scores.values()));
    }
    for points in series.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    series
}

fn plot_metric(path: &Path, metric: usize, series: &Series) -> Result<()> {
    let err = |e: String| Error::Backend(format!("plotting {}: {e}", path.display()));
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let name = MetricSet::NAMES[metric];
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{name} vs in-context proportion"), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0f64..1.0f64, 0.0f64..1.0f64)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("proportion of training split used as context")
        .y_desc(name)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    for (i, (label, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let data: Vec<(f64, f64)> = points.iter().map(|(p, v)| (*p, v[metric])).collect();
        chart
            .draw_series(LineSeries::new(data.clone(), color.stroke_width(2)))
            .map_err(|e| err(e.to_string()))?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(data.into_iter().map(|xy| Circle::new(xy, 3, color.filled())))
            .map_err(|e| err(e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

fn write_sweep(out_dir: &Path, series: &Series) -> Result<(PathBuf, Vec<PathBuf>)> {
    let csv_path = out_dir.join(SWEEP_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["series".to_string(), "proportion".to_string()];
    header.extend(MetricSet::NAMES.map(String::from));
    w.write_record(&header)?;
    for (label, points) in series {
        for (p, v) in points {
            let mut row = vec![label.clone(), p.to_string()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let mut plots = Vec::new();
    for (i, name) in MetricSet::NAMES.iter().enumerate() {
        let path = out_dir.join(format!("sweep_{name}.svg"));
        plot_metric(&path, i, series)?;
        plots.push(path);
    }
    Ok((csv_path, plots))
}

/// Writes a CSV of every requested run, a Markdown summary and, for sweep
/// runs, one plot per metric. An empty id list reports the whole store.
/// Rows follow store order.
pub fn emit_report(store: &ResultsStore, run_ids: &[String], out_dir: &Path) -> Result<ReportFiles> {
    let all = store.load_all()?;
    let runs: Vec<RunRecord> = if run_ids.is_empty() {
        all
    } else {
        if let Some(missing) = run_ids.iter().find(|id| !all.iter().any(|r| &r.run_id == *id)) {
            return Err(Error::UnknownRun(missing.clone()));
        }
        all.into_iter().filter(|r| run_ids.contains(&r.run_id)).collect()
    };
    if runs.is_empty() {
        return Err(Error::Config("no runs to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results_csv = out_dir.join(RESULTS_CSV);
    write_csv(&results_csv, &runs)?;
    let summary_md = out_dir.join(SUMMARY_MD);
    fs::write(&summary_md, summary(&runs)).map_err(|e| Error::io(&summary_md, e))?;
    let series = sweep_series(&runs);
    let (sweep_csv, plots) = if series.is_empty() {
        (None, Vec::new())
    } else {
        let (c, p) = write_sweep(out_dir, &series)?;
        (Some(c), p)
    };
    Ok(ReportFiles {
        results_csv,
        summary_md,
        sweep_csv,
        plots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BackendRegistry;
    use crate::runner::experiment::Experiment;
    use crate::runner::sweep::context_sweep;
    use crate::runner::test_support::synth_config;
    use crate::runner::run_experiment;

    #[test]
    fn two_runs_one_table_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(dir.path().join("store")).unwrap();
        let r = BackendRegistry::with_defaults();
        let a = run_experiment(synth_config("random_forest", Protocol::StratifiedKfoldRepeated), &r, &store).unwrap();
        let b = run_experiment(synth_config("svm", Protocol::StratifiedKfoldRepeated), &r, &store).unwrap();
        let ids = vec![b.run_id.clone(), a.run_id.clone()];
        let f1 = emit_report(&store, &ids, &dir.path().join("r1")).unwrap();
        let f2 = emit_report(&store, &ids, &dir.path().join("r2")).unwrap();
        let md1 = fs::read_to_string(&f1.summary_md).unwrap();
        assert_eq!(md1, fs::read_to_string(&f2.summary_md).unwrap());
        assert_eq!(fs::read(&f1.results_csv).unwrap(), fs::read(&f2.results_csv).unwrap());
        assert_eq!(md1.matches("## Stratified").count(), 1);
        assert!(md1.find("random_forest").unwrap() < md1.find("| svm").unwrap());
        let csv = fs::read_to_string(&f1.results_csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(f1.plots.is_empty());
        assert!(matches!(
            emit_report(&store, &["missing".into()], dir.path()),
            Err(Error::UnknownRun(_))
        ));
    }

    #[test]
    fn sweep_runs_get_one_plot_per_metric() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(dir.path().join("store")).unwrap();
        let exp = Experiment::prepare(
            synth_config("mock_icl", Protocol::StratifiedKfoldRepeated),
            &BackendRegistry::with_defaults(),
        )
        .unwrap();
        context_sweep(&exp, &[0.5, 1.0], &store).unwrap();
        let files = emit_report(&store, &[], &dir.path().join("out")).unwrap();
        assert_eq!(files.plots.len(), 5);
        for p in &files.plots {
            assert!(fs::read_to_string(p).unwrap().starts_with("<svg"));
        }
        let sweep = fs::read_to_string(files.sweep_csv.unwrap()).unwrap();
        assert_eq!(sweep.lines().count(), 3);
    }
}
