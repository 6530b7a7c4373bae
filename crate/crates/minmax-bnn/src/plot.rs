//! Standalone SVG line chart of the two accuracy series over outer steps.
//! No rendering dependency: the chart is assembled as text and viewable in
//! any browser.

use crate::error::{Error, Result};
use crate::metrics::{parse_metrics, MetricsRow, Phase};
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;
const NETD_COLOR: &str = "#1f77b4";
const NETG_COLOR: &str = "#d62728";

struct Series {
    name: &'static str,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

fn linmap(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

/// Render the chart from parsed metrics rows. Errors when no E row exists.
pub fn render_accuracy_svg(rows: &[MetricsRow]) -> Result<String> {
    let evals: Vec<&MetricsRow> = rows.iter().filter(|r| r.phase == Phase::E).collect();
    if evals.is_empty() {
        return Err(Error::NoEvalRows);
    }
    let take = |f: fn(&MetricsRow) -> Option<f64>| -> Vec<(f64, f64)> {
        evals
            .iter()
            .filter_map(|r| f(r).map(|y| (r.step as f64, y)))
            .collect()
    };
    let series = [
        Series {
            name: "NetD",
            color: NETD_COLOR,
            points: take(|r| r.acc_netd),
        },
        Series {
            name: "NetG",
            color: NETG_COLOR,
            points: take(|r| r.acc_netg),
        },
    ];

    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .collect();
    if ys.is_empty() {
        return Err(Error::NoEvalRows);
    }
    let (mut x_lo, mut x_hi) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    if x_lo == x_hi {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    let (mut y_lo, mut y_hi) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let pad = ((y_hi - y_lo) * 0.1).max(0.01);
    y_lo = (y_lo - pad).max(0.0);
    y_hi = (y_hi + pad).min(1.0);
    if y_lo == y_hi {
        y_lo = (y_lo - 0.05).max(0.0);
        y_hi = (y_hi + 0.05).min(1.0);
    }

    let px = |x: f64| linmap(x, x_lo, x_hi, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let py = |y: f64| linmap(y, y_lo, y_hi, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    // axes
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );

    // ticks and grid
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let xp = px(xv);
        let yp = py(yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{xp:.2}" y1="{y0}" x2="{xp:.2}" y2="{}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{xp:.2}" y="{}" font-size="12" text-anchor="middle">{xv:.0}</text>"#,
            y0 + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{yp:.2}" x2="{x0}" y2="{yp:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-size="12" text-anchor="end">{yv:.3}</text>"#,
            x0 - 8.0,
            yp + 4.0
        );
    }

    // axis labels
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">outer step</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 16 {:.2})">kNN accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    // series
    for s in &series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                px(x),
                py(y),
                s.color
            );
        }
    }

    // legend, top-right
    for (i, s) in series.iter().enumerate() {
        let ly = MARGIN_TOP + 8.0 + 20.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT - 120.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#,
            lx + 28.0,
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="13">{}</text>"#,
            lx + 34.0,
            ly + 4.0,
            s.name
        );
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Read a metrics CSV and write the chart beside it.
pub fn plot_file(metrics_path: &Path, out_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(metrics_path).map_err(|e| Error::io(metrics_path, e))?;
    let rows = parse_metrics(&text)?;
    let svg = render_accuracy_svg(&rows)?;
    std::fs::write(out_path, svg).map_err(|e| Error::io(out_path, e))
}
