//! Training-curve rendering: per-metric CSV plus a small hand-rolled SVG
//! line chart with a rolling-average window of 10 and cross-run variance
//! bands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{experiment::read_metrics, MetricsRecord};

pub const ROLLING_WINDOW: usize = 10;

const STEP_METRICS: [&str; 5] = [
    "rollout_accuracy",
    "loss",
    "match_rate",
    "mean_normalized_error_position",
    "mean_response_length",
];

/// Metric names that `plot` accepts: per-step fields plus
/// `mean_at_k:<family>` for evaluation curves.
pub fn available_metrics() -> Vec<String> {
    let mut v: Vec<String> = STEP_METRICS.iter().map(|s| s.to_string()).collect();
    v.push("mean_at_k:<family>".to_string());
    v
}

fn series_for(records: &[MetricsRecord], metric: &str) -> Result<Vec<(usize, f64)>> {
    if let Some(family) = metric.strip_prefix("mean_at_k:") {
        let mut out = Vec::new();
        for rec in records {
            if let MetricsRecord::Eval {
                step,
                family: f,
                mean_at_k,
                ..
            } = rec
            {
                if f.slug() == family {
                    out.push((*step, *mean_at_k));
                }
            }
        }
        return Ok(out);
    }
    if !STEP_METRICS.contains(&metric) {
        return Err(Error::Config(format!(
            "unknown metric `{metric}`; available: {}",
            available_metrics().join(", ")
        )));
    }
    let mut out = Vec::new();
    for rec in records {
        if let MetricsRecord::Step(m) = rec {
            let value = match metric {
                "rollout_accuracy" => Some(m.rollout_accuracy),
                "loss" => Some(m.loss),
                "match_rate" => m.match_rate,
                "mean_normalized_error_position" => m.mean_normalized_error_position,
                "mean_response_length" => Some(m.mean_response_length),
                _ => None,
            };
            if let Some(v) = value {
                out.push((m.step, v));
            }
        }
    }
    Ok(out)
}

fn rolling_mean(series: &[(usize, f64)], window: usize) -> Vec<(usize, f64)> {
    series
        .iter()
        .enumerate()
        .map(|(i, &(step, _))| {
            let lo = i.saturating_sub(window - 1);
            let slice = &series[lo..=i];
            let mean = slice.iter().map(|(_, v)| v).sum::<f64>() / slice.len() as f64;
            (step, mean)
        })
        .collect()
}

struct MetricTable {
    /// step -> per-run rolled values
    rows: BTreeMap<usize, Vec<Option<f64>>>,
    run_names: Vec<String>,
}

fn build_table(run_dirs: &[PathBuf], metric: &str) -> Result<MetricTable> {
    let mut rows: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    let mut run_names = Vec::new();
    let n_runs = run_dirs.len();
    for (r_idx, dir) in run_dirs.iter().enumerate() {
        run_names.push(
            dir.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("run{r_idx}")),
        );
        let records = read_metrics(&dir.join("metrics.jsonl"))?;
        let series = series_for(&records, metric)?;
        for (step, value) in rolling_mean(&series, ROLLING_WINDOW) {
            rows.entry(step).or_insert_with(|| vec![None; n_runs])[r_idx] = Some(value);
        }
    }
    Ok(MetricTable { rows, run_names })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn write_csv(path: &Path, table: &MetricTable) -> Result<()> {
    let mut out = String::from("step");
    for name in &table.run_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",mean,std\n");
    for (step, row) in &table.rows {
        out.push_str(&step.to_string());
        for v in row {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format!("{v}"));
            }
        }
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        if present.is_empty() {
            out.push_str(",,\n");
        } else {
            let (mean, std) = mean_std(&present);
            out.push_str(&format!(",{mean},{std}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_svg(path: &Path, table: &MetricTable, metric: &str) -> Result<()> {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const ML: f64 = 60.0;
    const MB: f64 = 40.0;
    const MT: f64 = 30.0;
    const MR: f64 = 20.0;

    let mut points: Vec<(usize, f64, f64)> = Vec::new(); // step, mean, std
    for (step, row) in &table.rows {
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        if !present.is_empty() {
            let (mean, std) = mean_std(&present);
            points.push((*step, mean, std));
        }
    }
    if points.is_empty() {
        return Err(Error::Input(format!("no data for metric {metric}")));
    }
    let x_max = points.last().map(|(s, _, _)| *s).unwrap_or(1).max(1) as f64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &(_, m, s) in &points {
        y_min = y_min.min(m - s);
        y_max = y_max.max(m + s);
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    y_min -= pad;
    y_max += pad;
    let sx = |step: f64| ML + (W - ML - MR) * step / x_max;
    let sy = |v: f64| H - MB - (H - MB - MT) * (v - y_min) / (y_max - y_min);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"monospace\" font-size=\"14\">{metric} (rolling mean over {ROLLING_WINDOW}, band = ±1 std over {} runs)</text>\n",
        ML, table.run_names.len()
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = y_min + (y_max - y_min) * frac;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\">{v:.3}</text>\n",
            sy(v) + 3.0
        ));
        let s = x_max * frac;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\">{s:.0}</text>\n",
            sx(s) - 8.0,
            H - MB + 14.0
        ));
    }
    // Variance band.
    let mut band = String::from("<path d=\"M");
    for (i, &(step, mean, std)) in points.iter().enumerate() {
        if i > 0 {
            band.push_str(" L");
        }
        band.push_str(&format!("{:.1},{:.1}", sx(step as f64), sy(mean + std)));
    }
    for &(step, mean, std) in points.iter().rev() {
        band.push_str(&format!(" L{:.1},{:.1}", sx(step as f64), sy(mean - std)));
    }
    band.push_str(" Z\" fill=\"#4a90d9\" fill-opacity=\"0.2\" stroke=\"none\"/>\n");
    svg.push_str(&band);
    // Mean line.
    let mut line = String::from("<polyline fill=\"none\" stroke=\"#1f4f82\" stroke-width=\"1.5\" points=\"");
    for &(step, mean, _) in &points {
        line.push_str(&format!("{:.1},{:.1} ", sx(step as f64), sy(mean)));
    }
    line.push_str("\"/>\n");
    svg.push_str(&line);
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

/// Renders one CSV and one SVG per requested metric across the run
/// directories. Returns the written paths.
pub fn plot(run_dirs: &[PathBuf], metrics: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if run_dirs.is_empty() {
        return Err(Error::Input("plot needs at least one run directory".into()));
    }
    if metrics.is_empty() {
        return Err(Error::Config(format!(
            "no metrics selected; available: {}",
            available_metrics().join(", ")
        )));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for metric in metrics {
        let table = build_table(run_dirs, metric)?;
        let slug = metric.replace(':', "_");
        let csv = out_dir.join(format!("{slug}.csv"));
        write_csv(&csv, &table)?;
        let svg = out_dir.join(format!("{slug}.svg"));
        write_svg(&svg, &table, metric)?;
        written.push(csv);
        written.push(svg);
    }
    Ok(written)
}
