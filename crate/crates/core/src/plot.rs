//! Dependency-free SVG line charts.
//!
//! Every marker carries its exact value in `data-x`/`data-y` attributes so
//! a chart can be checked against the table it was drawn from.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("row {row}: {value:?} is not a number")]
    NotANumber { row: usize, value: String },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One polyline through `points` in the given order, with axis labels and
/// min/max ticks.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> Result<String, PlotError> {
    if points.is_empty() {
        return Err(PlotError::Empty);
    }
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text class="y-label" x="18" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (v, x) in [(x0, left), (x1, right)] {
        let _ =
            writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle" font-size="11">{v:.2}</text>"#, bottom + 16.0);
    }
    for (v, y) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end" font-size="11">{v:.4}</text>"#, left - 6.0);
    }
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(
            svg,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" fill="steelblue" data-x="{x:.6}" data-y="{y:.6}"/>"#,
            sx(x),
            sy(y)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Values stored on the chart's markers, in drawing order.
pub fn parse_svg_points(svg: &str) -> Vec<(f64, f64)> {
    let attr = |line: &str, name: &str| -> Option<f64> {
        let start = line.find(&format!("{name}=\""))? + name.len() + 2;
        let end = start + line[start..].find('"')?;
        line[start..end].parse().ok()
    };
    svg.lines()
        .filter(|l| l.contains(r#"class="point""#))
        .filter_map(|l| Some((attr(l, "data-x")?, attr(l, "data-y")?)))
        .collect()
}

/// Two numeric columns of a headed CSV table, rows with empty cells skipped.
pub fn csv_columns(csv: &str, x: &str, y: &str) -> Result<Vec<(f64, f64)>, PlotError> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or(PlotError::Empty)?.split(',').collect();
    let col =
        |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| PlotError::MissingColumn(name.to_string()));
    let (xi, yi) = (col(x)?, col(y)?);
    let mut points = Vec::new();
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let (Some(xs), Some(ys)) = (cells.get(xi), cells.get(yi)) else { continue };
        if xs.is_empty() || ys.is_empty() {
            continue;
        }
        let num = |v: &str| v.parse::<f64>().map_err(|_| PlotError::NotANumber { row: row + 1, value: v.to_string() });
        points.push((num(xs)?, num(ys)?));
    }
    Ok(points)
}

pub fn emit_plot(svg: &str, path: &Path) -> Result<(), PlotError> {
    fs::write(path, svg).map_err(|source| PlotError::Io { path: path.display().to_string(), source })
}
