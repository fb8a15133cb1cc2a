//! Self-contained SVG line plots of per-epoch metrics: clean test loss, test
//! accuracy and mixed-batch fraction, one labelled curve per run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::metrics::{read_metrics, MetricsRecord};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub records: Vec<MetricsRecord>,
}

impl Series {
    /// Mixed fraction inside each schedule stage over the whole run, or
    /// `None` for a stage the run never entered.
    pub fn stage_fractions(&self) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for (s, slot) in out.iter_mut().enumerate() {
            let (b, m) = self.records.iter().fold((0, 0), |(b, m), r| {
                let (rb, rm) = r.stage_counts()[s];
                (b + rb, m + rm)
            });
            if b > 0 {
                *slot = Some(m as f64 / b as f64);
            }
        }
        out
    }

    /// First epoch that contains a batch of each stage.
    fn stage_starts(&self) -> [Option<usize>; 3] {
        let mut out = [None; 3];
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = self
                .records
                .iter()
                .find(|r| r.stage_counts()[s].0 > 0)
                .map(|r| r.epoch);
        }
        out
    }
}

/// Curve label for a metrics file: the run directory name for
/// `<dir>/metrics.csv`, else the file stem.
pub fn label_for(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "metrics" {
        if let Some(dir) = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
        {
            return dir.to_string();
        }
    }
    stem.to_string()
}

pub fn load_series(paths: &[impl AsRef<Path>]) -> Result<Vec<Series>> {
    paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            Ok(Series {
                label: label_for(p),
                records: read_metrics(p)?,
            })
        })
        .collect()
}

struct Panel<'a> {
    title: &'a str,
    value: fn(&MetricsRecord) -> f64,
    fixed_unit: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice(v: f64) -> String {
    if v.abs() >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn draw_panel(svg: &mut String, x0: f64, series: &[Series], panel: &Panel) {
    let (pw, ph) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let max_epoch = series
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.epoch))
        .max()
        .unwrap_or(1)
        .max(2);
    let values = series
        .iter()
        .flat_map(|s| s.records.iter().map(panel.value));
    let (mut lo, mut hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if panel.fixed_unit || !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    } else if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let sx = |e: usize| x0 + MARGIN + (e - 1) as f64 / (max_epoch - 1) as f64 * pw;
    let sy = |v: f64| MARGIN + (hi - v) / (hi - lo) * ph;

    let _ = writeln!(
        svg,
        r##"<g><rect x="{:.1}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##,
        x0 + MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN - 14.0,
        esc(panel.title)
    );
    for (v, y) in [(hi, MARGIN), (lo, MARGIN + ph)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            x0 + MARGIN - 4.0,
            y + 4.0,
            nice(v)
        );
    }
    for e in [1, max_epoch] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{e}</text>"#,
            sx(e),
            MARGIN + ph + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">epoch</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN + ph + 30.0
    );
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .records
            .iter()
            .filter(|r| (panel.value)(r).is_finite())
            .map(|r| format!("{:.2},{:.2}", sx(r.epoch), sy((panel.value)(r))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            pts.join(" ")
        );
    }
    svg.push_str("</g>\n");
}

/// Renders all series into one SVG document.
pub fn render_svg(series: &[Series]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::config("plot needs at least one metrics file"));
    }
    if let Some(s) = series.iter().find(|s| s.records.is_empty()) {
        return Err(Error::config(format!(
            "metrics for {:?} are empty",
            s.label
        )));
    }
    let panels = [
        Panel {
            title: "test loss",
            value: |r| r.test_loss,
            fixed_unit: false,
        },
        Panel {
            title: "test accuracy",
            value: |r| r.test_accuracy,
            fixed_unit: true,
        },
        Panel {
            title: "mixed-batch fraction",
            value: |r| r.mixed_fraction,
            fixed_unit: true,
        },
    ];
    let legend_h = 18.0 * series.len() as f64 + 12.0;
    let width = PANEL_W * panels.len() as f64;
    let height = PANEL_H + legend_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        draw_panel(&mut svg, k as f64 * PANEL_W, series, panel);
    }

    // Stage boundaries of staged runs go on the mixed-fraction panel.
    let mix_x0 = 2.0 * PANEL_W;
    let max_epoch = series
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.epoch))
        .max()
        .unwrap_or(1)
        .max(2);
    let pw = PANEL_W - 2.0 * MARGIN;
    for (k, s) in series.iter().enumerate() {
        for start in s.stage_starts().iter().skip(1).flatten() {
            let x = mix_x0 + MARGIN + (*start - 1) as f64 / (max_epoch - 1) as f64 * pw;
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{:.1}" stroke="{}" stroke-dasharray="4 3"/>"#,
                PANEL_H - MARGIN,
                PALETTE[k % PALETTE.len()]
            );
        }
    }

    for (k, s) in series.iter().enumerate() {
        let y = PANEL_H + 12.0 + 18.0 * k as f64;
        let color = PALETTE[k % PALETTE.len()];
        let last = s.records.last().expect("checked non-empty");
        let mut text = format!(
            "{}: final loss {:.4}, accuracy {:.4}",
            s.label, last.test_loss, last.test_accuracy
        );
        let stages = s.stage_fractions();
        if stages.iter().any(Option::is_some) {
            let parts: Vec<String> = stages
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.map(|f| format!("stage {} {:.0}%", i + 1, 100.0 * f)))
                .collect();
            let _ = write!(text, "; mixed {}", parts.join(", "));
        }
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="3"/>"#,
            y - 4.0,
            MARGIN + 24.0,
            y - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-size="11">{}</text>"#,
            MARGIN + 30.0,
            esc(&text)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads each metrics file and writes one SVG with a curve per file.
pub fn plot_metrics(inputs: &[impl AsRef<Path>], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::config("plot needs at least one metrics file"));
    }
    let svg = render_svg(&load_series(inputs)?)?;
    fs::write(out, svg).map_err(|e| Error::io(out, e))
}
