//! CSV, SVG and JSON reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{ExperimentConfig, RESOLVED_KEY};
use super::run::{Calibration, ExperimentOutput, SweepTable, TrialTrace};
use crate::error::{CentaurError, Result};

pub const TRACE_HEADER: [&str; 7] = [
    "trial",
    "round",
    "dist",
    "grad_norm",
    "clip_count",
    "active_clients",
    "eps_dp_cum",
];
pub const TRADEOFF_HEADER: [&str; 6] = ["swept_value", "median_final_dist", "q25", "q75", "eps_dp", "sigma_g"];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
/// Smallest value drawn on a log axis.
const LOG_FLOOR: f64 = 1e-16;

fn format_eps(v: Option<f64>) -> String {
    match v {
        Some(e) if e.is_finite() => e.to_string(),
        _ => "inf".to_string(),
    }
}

/// `trace.csv` contents: one row per trial and round.
pub fn trace_csv(trials: &[TrialTrace]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for t in trials {
        for r in &t.rounds {
            w.write_record([
                t.trial.to_string(),
                (r.round + 1).to_string(),
                r.dist_to_truth.to_string(),
                r.grad_norm.to_string(),
                r.clip_count.to_string(),
                r.active_clients.to_string(),
                format_eps(r.eps_dp_cum),
            ])?;
        }
    }
    w.into_inner().map_err(|e| CentaurError::io("trace.csv", e.into_error()))
}

/// `tradeoff.csv` contents: one row per swept value. Failed cells print `NaN`.
pub fn tradeoff_csv(table: &SweepTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRADEOFF_HEADER)?;
    for r in &table.rows {
        let swept = match &r.swept_value {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        w.write_record([
            swept,
            r.median_final_dist.to_string(),
            r.q25.to_string(),
            r.q75.to_string(),
            format_eps(Some(r.eps_dp)),
            r.sigma_g.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CentaurError::io("tradeoff.csv", e.into_error()))
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.max(LOG_FLOOR).log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.max(LOG_FLOOR).log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, u: f64) -> String {
        let v = self.lo + u * (self.hi - self.lo);
        if self.log {
            format!("1e{}", v.round() as i64)
        } else {
            format!("{}", (v * 100.0).round() / 100.0)
        }
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let n = (self.hi - self.lo).round() as usize;
            let step = n.div_ceil(8).max(1);
            (0..=n).step_by(step).map(|i| i as f64 / n as f64).collect()
        } else {
            (0..=4).map(|i| i as f64 / 4.0).collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Standalone SVG line chart; each series becomes one `<polyline>`.
fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Vec<(f64, f64)>], x_log: bool, y_log: bool) -> String {
    let x = Axis::fit(series.iter().flatten().map(|p| p.0), x_log);
    let y = Axis::fit(series.iter().flatten().map(|p| p.1), y_log);
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let px = |v: f64| MARGIN + x.unit(v) * pw;
    let py = |v: f64| HEIGHT - MARGIN - y.unit(v) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for u in x.ticks() {
        let xx = MARGIN + u * pw;
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 16.0,
            x.label(u)
        );
    }
    for u in y.ticks() {
        let yy = HEIGHT - MARGIN - u * ph;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/>"##,
            WIDTH - MARGIN
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            yy + 4.0,
            y.label(u)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, points) in series.iter().enumerate() {
        let coords: Vec<String> = points
            .iter()
            .map(|&(a, b)| format!("{:.2},{:.2}", px(a), py(b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            coords.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `dist` against round on a log scale, one polyline per trial.
pub fn dist_svg(trials: &[TrialTrace]) -> String {
    let series: Vec<Vec<(f64, f64)>> = trials
        .iter()
        .map(|t| {
            std::iter::once((0.0, t.initial_dist))
                .chain(t.rounds.iter().map(|r| ((r.round + 1) as f64, r.dist_to_truth)))
                .collect()
        })
        .collect();
    line_chart("distance to B* by round", "round", "dist (log)", &series, false, true)
}

/// Median final `dist` against `ε_dp`, both on log scales. Failed and
/// non-private cells are left out.
pub fn tradeoff_svg(table: &SweepTable) -> String {
    let mut points: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.eps_dp.is_finite() && r.eps_dp > 0.0 && r.median_final_dist.is_finite())
        .map(|r| (r.eps_dp, r.median_final_dist))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    line_chart(
        &format!("privacy-utility tradeoff over {}", table.field),
        "eps_dp (log)",
        "median final dist (log)",
        &[points],
        true,
        true,
    )
}

/// `cfg` with a `resolved` section appended; parses back to `cfg`.
pub fn run_json(cfg: &ExperimentConfig, resolved: Value) -> Result<String> {
    let mut v = cfg.to_value();
    v.as_object_mut()
        .expect("config serializes to an object")
        .insert(RESOLVED_KEY.to_string(), resolved);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CentaurError::io(&path, e))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CentaurError::io(dir, e))
}

/// Write `trace.csv`, `dist.svg` and `run.json` into `dir`.
pub fn emit_run_reports(dir: &Path, out: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let resolved = json!({ "trials": serde_json::to_value(&out.trials)? });
    Ok(vec![
        write(dir, "trace.csv", &trace_csv(&out.trials)?)?,
        write(dir, "dist.svg", dist_svg(&out.trials).as_bytes())?,
        write(dir, "run.json", run_json(&out.config, resolved)?.as_bytes())?,
    ])
}

/// Write `tradeoff.csv`, `tradeoff.svg` and `run.json` into `dir`.
pub fn emit_sweep_reports(dir: &Path, cfg: &ExperimentConfig, table: &SweepTable) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let resolved = json!({ "sweep": serde_json::to_value(table)? });
    Ok(vec![
        write(dir, "tradeoff.csv", &tradeoff_csv(table)?)?,
        write(dir, "tradeoff.svg", tradeoff_svg(table).as_bytes())?,
        write(dir, "run.json", run_json(cfg, resolved)?.as_bytes())?,
    ])
}

/// Write `run.json` with the calibrated constants in place, ready for reuse.
pub fn emit_calibration(dir: &Path, cfg: &ExperimentConfig, cal: &Calibration) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let mut calibrated = cfg.clone();
    calibrated.constants.c_zeta = cal.c_zeta;
    calibrated.constants.c_t = cal.c_t;
    let resolved = json!({ "calibration": serde_json::to_value(cal)? });
    write(dir, "run.json", run_json(&calibrated, resolved)?.as_bytes())
}
