use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bench::setup_assumption;
use super::{BenchmarkSummary, PipelineError};
use crate::fsutil::write_atomic;
use crate::sweep::Setup;

pub const RUNTIME_CSV: &str = "runtime.csv";
pub const MAE_TREND_CSV: &str = "mae_trend.csv";
pub const SETUPS_CSV: &str = "setups.csv";
pub const BOXPLOT_SVG: &str = "runtime_boxplot.svg";
pub const TREND_SVG: &str = "mae_trend.svg";
pub const SUMMARY_JSON: &str = "benchmark.json";

/// One benchmark run; `run` counts from 1 within its setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub setup: Setup,
    pub run: usize,
    pub config_id: String,
    pub wall_time_s: f64,
    pub cross_validation_loss: f64,
    pub accepted: bool,
    pub unfrozen_layers: usize,
    pub layer_groups: usize,
    pub unchanged_groups: usize,
}

/// Held-out MAE of one run after one epoch (1-based), with the outer scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeTrendRow {
    pub setup: Setup,
    pub run: usize,
    pub epoch: usize,
    pub validation_mae: f64,
    pub theoretical_max_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupRow {
    pub setup: Setup,
    pub runs: usize,
    pub total_wall_time_s: f64,
    pub mean_wall_time_s: f64,
    pub first_run_loss: f64,
    pub best_loss: f64,
    pub parent_checkpoint: String,
    pub assumption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub runtime_csv: PathBuf,
    pub mae_trend_csv: PathBuf,
    pub setups_csv: Option<PathBuf>,
    pub boxplot_svg: PathBuf,
    pub trend_svg: PathBuf,
    pub summary_json: Option<PathBuf>,
}

fn report_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Report(e.to_string())
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(report_err)?;
    }
    w.into_inner().map_err(report_err)
}

fn from_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| report_err(format!("{}: {e}", path.display())))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| report_err(format!("{}: {e}", path.display())))
}

pub fn read_runtime(path: &Path) -> Result<Vec<RuntimeRow>, PipelineError> {
    from_csv(path)
}

pub fn read_mae_trend(path: &Path) -> Result<Vec<MaeTrendRow>, PipelineError> {
    from_csv(path)
}

/// Writes the CSVs, the summary JSON and both figures for a benchmark.
pub fn write_report(dir: &Path, summary: &BenchmarkSummary) -> Result<ReportFiles, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut runtime = Vec::new();
    let mut trend = Vec::new();
    let mut setups = Vec::new();
    for res in &summary.results {
        for (i, run) in res.runs.iter().enumerate() {
            runtime.push(RuntimeRow {
                setup: res.setup,
                run: i + 1,
                config_id: run.config_id.clone(),
                wall_time_s: run.wall_time_s,
                cross_validation_loss: run.cross_validation_loss,
                accepted: run.accepted,
                unfrozen_layers: run.params.unfrozen_layers,
                layer_groups: run.layer_groups,
                unchanged_groups: run.unchanged_groups,
            });
            for (e, mae) in run.validation_mae.iter().enumerate() {
                trend.push(MaeTrendRow {
                    setup: res.setup,
                    run: i + 1,
                    epoch: e + 1,
                    validation_mae: *mae,
                    theoretical_max_mae: summary.theoretical_max_mae,
                });
            }
        }
        setups.push(SetupRow {
            setup: res.setup,
            runs: res.runs.len(),
            total_wall_time_s: res.total_wall_time_s,
            mean_wall_time_s: res.mean_wall_time_s(),
            first_run_loss: res.first_run_loss(),
            best_loss: res.best_cross_validation_loss,
            parent_checkpoint: res.parent_checkpoint.clone().unwrap_or_default(),
            assumption: setup_assumption(res.setup).to_string(),
        });
    }
    let files = ReportFiles {
        runtime_csv: dir.join(RUNTIME_CSV),
        mae_trend_csv: dir.join(MAE_TREND_CSV),
        setups_csv: Some(dir.join(SETUPS_CSV)),
        boxplot_svg: dir.join(BOXPLOT_SVG),
        trend_svg: dir.join(TREND_SVG),
        summary_json: Some(dir.join(SUMMARY_JSON)),
    };
    write_atomic(&files.runtime_csv, &to_csv(&runtime)?)?;
    write_atomic(&files.mae_trend_csv, &to_csv(&trend)?)?;
    write_atomic(dir.join(SETUPS_CSV).as_path(), &to_csv(&setups)?)?;
    write_atomic(&files.boxplot_svg, render_boxplot_svg(&runtime)?.as_bytes())?;
    write_atomic(&files.trend_svg, render_trend_svg(&trend)?.as_bytes())?;
    let json = serde_json::to_vec_pretty(summary).map_err(report_err)?;
    write_atomic(dir.join(SUMMARY_JSON).as_path(), &json)?;
    Ok(files)
}

/// Re-renders both figures from the CSVs in `dir`.
pub fn render_report(dir: &Path) -> Result<ReportFiles, PipelineError> {
    let runtime_csv = dir.join(RUNTIME_CSV);
    let mae_trend_csv = dir.join(MAE_TREND_CSV);
    if !runtime_csv.exists() || !mae_trend_csv.exists() {
        return Err(PipelineError::EmptyArtifacts(dir.display().to_string()));
    }
    let runtime = read_runtime(&runtime_csv)?;
    let trend = read_mae_trend(&mae_trend_csv)?;
    let files = ReportFiles {
        runtime_csv,
        mae_trend_csv,
        setups_csv: Some(dir.join(SETUPS_CSV)).filter(|p| p.exists()),
        boxplot_svg: dir.join(BOXPLOT_SVG),
        trend_svg: dir.join(TREND_SVG),
        summary_json: Some(dir.join(SUMMARY_JSON)).filter(|p| p.exists()),
    };
    write_atomic(&files.boxplot_svg, render_boxplot_svg(&runtime)?.as_bytes())?;
    write_atomic(&files.trend_svg, render_trend_svg(&trend)?.as_bytes())?;
    Ok(files)
}

const COLORS: [&str; 4] = ["#1b6ca8", "#d95f02", "#1b9e77", "#7570b3"];

fn color(setup: Setup) -> &'static str {
    COLORS[Setup::ALL.iter().position(|s| *s == setup).unwrap_or(0)]
}

/// Label for the decade `10^k`.
fn decade_label(k: i32) -> String {
    if k >= 0 {
        format!("{}", 10u64.pow(k as u32))
    } else {
        format!("{:.*}", (-k) as usize, 10f64.powi(k))
    }
}

/// Quantile by linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn svg_open(out: &mut String, w: u32, h: u32, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<title>{title}</title>"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

/// Runtime distribution per setup on a log-scaled time axis.
pub fn render_boxplot_svg(rows: &[RuntimeRow]) -> Result<String, PipelineError> {
    let mut by_setup: BTreeMap<usize, (Setup, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if !(r.wall_time_s > 0.0 && r.wall_time_s.is_finite()) {
            return Err(report_err(format!("{} run {} has wall time {}", r.setup, r.run, r.wall_time_s)));
        }
        let order = Setup::ALL.iter().position(|s| *s == r.setup).unwrap_or(0);
        by_setup.entry(order).or_insert_with(|| (r.setup, Vec::new())).1.push(r.wall_time_s);
    }
    if by_setup.is_empty() {
        return Err(PipelineError::EmptyArtifacts("runtime rows".into()));
    }
    let all = rows.iter().map(|r| r.wall_time_s);
    let lo = all.clone().fold(f64::INFINITY, f64::min).log10().floor() as i32;
    let mut hi = all.fold(0.0, f64::max).log10().ceil() as i32;
    if hi <= lo {
        hi = lo + 1;
    }
    let (w, h) = (640u32, 400u32);
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 70.0);
    let plot_h = h as f64 - top - bottom;
    let y = |t: f64| top + plot_h * (1.0 - (t.log10() - lo as f64) / (hi - lo) as f64);

    let mut out = String::new();
    svg_open(&mut out, w, h, "Runtime per training run");
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">Runtime per training run (log scale)</text>"#, w / 2);
    for k in lo..=hi {
        let yy = y(10f64.powi(k));
        let _ = writeln!(out, r##"<line class="grid" x1="{left}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/>"##, w as f64 - right);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, yy + 4.0, decade_label(k));
    }
    let _ = writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#, top + plot_h);
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">wall time [s]</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let slot = (w as f64 - left - right) / by_setup.len() as f64;
    for (i, (setup, times)) in by_setup.values_mut().enumerate() {
        times.sort_by(f64::total_cmp);
        let cx = left + slot * (i as f64 + 0.5);
        let half = slot * 0.2;
        let (q1, med, q3) = (quantile(times, 0.25), quantile(times, 0.5), quantile(times, 0.75));
        let (min, max) = (times[0], times[times.len() - 1]);
        let c = color(*setup);
        let _ = writeln!(out, r#"<g class="box" data-setup="{setup}" data-runs="{}">"#, times.len());
        let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#, y(max), y(q3));
        let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#, y(q1), y(min));
        for v in [min, max] {
            let _ = writeln!(out, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}"/>"#, cx - half / 2.0, y(v), cx + half / 2.0, y(v));
        }
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.3" stroke="{c}"/>"#,
            cx - half,
            y(q3),
            2.0 * half,
            (y(q1) - y(q3)).max(0.5)
        );
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#, cx - half, y(med), cx + half, y(med));
        let _ = writeln!(out, "</g>");
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{setup}</text>"#, top + plot_h + 20.0);
        let _ = writeln!(out, r##"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" fill="#555555">n = {}</text>"##, top + plot_h + 36.0, times.len());
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn polyline(out: &mut String, points: &[(f64, f64)], c: &str, extra: &str) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.2"{extra}/>"#, pts.join(" "));
}

/// Validation MAE per epoch for every run: the main panel spans zero to the
/// theoretical maximum MAE, the inset zooms onto the observed range.
pub fn render_trend_svg(rows: &[MaeTrendRow]) -> Result<String, PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::EmptyArtifacts("MAE trend rows".into()));
    }
    let mut runs: BTreeMap<(usize, usize), (Setup, Vec<(usize, f64)>)> = BTreeMap::new();
    for r in rows {
        if !r.validation_mae.is_finite() || r.validation_mae < 0.0 {
            return Err(report_err(format!("{} run {} epoch {} has MAE {}", r.setup, r.run, r.epoch, r.validation_mae)));
        }
        let order = Setup::ALL.iter().position(|s| *s == r.setup).unwrap_or(0);
        runs.entry((order, r.run)).or_insert_with(|| (r.setup, Vec::new())).1.push((r.epoch, r.validation_mae));
    }
    let max_epoch = rows.iter().map(|r| r.epoch).max().unwrap_or(1).max(2);
    let outer = rows.iter().map(|r| r.theoretical_max_mae).fold(0.0, f64::max);
    let observed_max = rows.iter().map(|r| r.validation_mae).fold(0.0, f64::max);
    let y_max = if outer > 0.0 { outer.max(observed_max) } else { observed_max.max(1e-9) };
    let detail_lo = rows.iter().map(|r| r.validation_mae).fold(f64::INFINITY, f64::min);
    let pad = ((observed_max - detail_lo) * 0.05).max(1e-9);
    let (d_lo, d_hi) = ((detail_lo - pad).max(0.0), observed_max + pad);

    let (w, h) = (720u32, 440u32);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 80.0);
    let (pw, ph) = (w as f64 - left - right, h as f64 - top - bottom);
    let x = |e: usize| left + pw * (e - 1) as f64 / (max_epoch - 1) as f64;
    let y = |v: f64| top + ph * (1.0 - v / y_max);
    // Inset in the upper right of the main panel.
    let (ix, iy, iw, ih) = (left + pw * 0.45, top + 12.0, pw * 0.52, ph * 0.48);
    let ixf = |e: usize| ix + iw * (e - 1) as f64 / (max_epoch - 1) as f64;
    let iyf = |v: f64| iy + ih * (1.0 - (v - d_lo) / (d_hi - d_lo));

    let mut out = String::new();
    svg_open(&mut out, w, h, "Validation MAE per epoch");
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">Validation MAE per epoch</text>"#, w / 2);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(out, r##"<line class="grid" x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#dddddd"/>"##, y(v), left + pw, y(v));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, left - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#, top + ph);
    let _ = writeln!(out, r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, top + ph + 34.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">1</text><text x="{:.2}" y="{:.2}" text-anchor="middle">{max_epoch}</text>"#, x(1), top + ph + 16.0, x(max_epoch), top + ph + 16.0);
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">validation MAE [N m]</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    if outer > 0.0 {
        let _ = writeln!(
            out,
            r##"<text class="outer-scale" x="{:.2}" y="{:.2}" fill="#555555">theoretical max MAE {outer:.3}</text>"##,
            left + 6.0,
            y(outer) + 14.0
        );
    }
    for ((_, run), (setup, pts)) in &runs {
        let c = color(*setup);
        let main: Vec<_> = pts.iter().map(|&(e, v)| (x(e), y(v))).collect();
        polyline(&mut out, &main, c, &format!(r#" class="run" data-setup="{setup}" data-run="{run}""#));
    }
    let _ = writeln!(out, r##"<g class="inset"><rect x="{ix:.2}" y="{iy:.2}" width="{iw:.2}" height="{ih:.2}" fill="white" stroke="#888888"/>"##);
    for ((_, _), (setup, pts)) in &runs {
        let inset: Vec<_> = pts.iter().map(|&(e, v)| (ixf(e), iyf(v))).collect();
        polyline(&mut out, &inset, color(*setup), "");
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{d_hi:.4}</text>"#, ix - 3.0, iy + 8.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{d_lo:.4}</text>"#, ix - 3.0, iy + ih);
    let _ = writeln!(out, "</g>");
    let mut lx = left;
    for s in Setup::ALL.iter().filter(|s| runs.values().any(|(rs, _)| rs == *s)) {
        let ly = h as f64 - 18.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="3"/>"#, ly - 4.0, lx + 18.0, ly - 4.0, color(*s));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{s}</text>"#, lx + 22.0);
        lx += 160.0;
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn decade_labels() {
        assert_eq!(decade_label(2), "100");
        assert_eq!(decade_label(-2), "0.01");
        assert_eq!(decade_label(0), "1");
    }
}
