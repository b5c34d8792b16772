//! Byte-stable artifact emission: headered CSV tables and self-contained
//! SVG line/scatter charts.
//!
//! Every writer here is a pure function of its inputs — no timestamps,
//! locale-dependent formatting, or map iteration order — so re-running an
//! experiment with the same config and seed reproduces every output file
//! byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors raised while writing artifact files.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A row's width disagrees with the header.
    #[error("{0}")]
    Shape(String),
}

/// Formats a float with the shortest representation that parses back to the
/// same bits, so emitted tables are lossless and stable.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Quotes a CSV field when it contains a delimiter, quote, or line break.
fn csv_field(field: &str) -> String {
    if field.contains(['"', ',', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| ReportError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a headered CSV table with `\n` line endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let mut text = String::new();
    text.push_str(
        &header
            .iter()
            .map(|h| csv_field(h))
            .collect::<Vec<_>>()
            .join(","),
    );
    text.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(ReportError::Shape(format!(
                "row {i} has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        text.push_str(
            &row.iter()
                .map(|f| csv_field(f))
                .collect::<Vec<_>>()
                .join(","),
        );
        text.push('\n');
    }
    write_file(path, &text)
}

/// How a series is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Scatter,
}

/// One named series of (x, y) points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub kind: SeriesKind,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            kind: SeriesKind::Line,
            points,
        }
    }

    pub fn scatter(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            kind: SeriesKind::Scatter,
            points,
        }
    }
}

/// Lowercases a series name into a file-name fragment.
fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut last_dash = true;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_dash = false;
        } else if !last_dash {
            out.push('-');
            last_dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("series");
    }
    out
}

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

/// Pixel coordinate: two decimals are far below visual resolution and keep
/// the file text short and stable.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick label: shortest round-trip representation, with negative zero
/// normalized away.
fn tick_label(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v}")
}

/// Chooses a round tick step (1, 2, or 5 times a power of ten) yielding
/// roughly `target` intervals over `range`.
fn nice_step(range: f64, target: usize) -> f64 {
    let raw = range / target as f64;
    let mag = 10f64.powf(raw.abs().log10().floor());
    let norm = raw / mag;
    let factor = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    factor * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let step = nice_step(hi - lo, 5);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

/// Data-space bounds padded so flat series remain visible.
fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            xs = (xs.0.min(x), xs.1.max(x));
            ys = (ys.0.min(y), ys.1.max(y));
        }
    }
    if xs.0 > xs.1 {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            (lo, hi)
        } else {
            let d = lo.abs().max(1.0) * 0.05;
            (lo - d, hi + d)
        }
    };
    let (x0, x1) = pad(xs.0, xs.1);
    let (y0, y1) = pad(ys.0, ys.1);
    (x0, x1, y0, y1)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Escapes the five XML-reserved characters in labels.
fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Renders one or more series as a self-contained SVG chart.
pub fn render_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let plot_w = CHART_W - MARGIN_L - MARGIN_R;
    let plot_h = CHART_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" \
         viewBox=\"0 0 {CHART_W} {CHART_H}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        px(MARGIN_L + plot_w / 2.0),
        xml_escape(title)
    );

    // Axes with ticks and grid lines.
    for t in ticks(x0, x1) {
        let x = px(sx(t));
        let _ = writeln!(
            svg,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#dddddd\"/>",
            px(MARGIN_T),
            px(MARGIN_T + plot_h)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            px(MARGIN_T + plot_h + 16.0),
            tick_label(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = px(sy(t));
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#dddddd\"/>",
            px(MARGIN_L),
            px(MARGIN_L + plot_w)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            px(MARGIN_L - 6.0),
            px(sy(t) + 4.0),
            tick_label(t)
        );
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        px(MARGIN_L),
        px(MARGIN_T),
        px(plot_w),
        px(plot_h)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        px(MARGIN_L + plot_w / 2.0),
        px(CHART_H - 10.0),
        xml_escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
        px(MARGIN_T + plot_h / 2.0),
        px(MARGIN_T + plot_h / 2.0),
        xml_escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match s.kind {
            SeriesKind::Line => {
                let pts = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{},{}", px(sx(x)), px(sy(y))))
                    .collect::<Vec<_>>()
                    .join(" ");
                let _ = writeln!(
                    svg,
                    "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>"
                );
            }
            SeriesKind::Scatter => {
                for &(x, y) in &s.points {
                    let _ = writeln!(
                        svg,
                        "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>",
                        px(sx(x)),
                        px(sy(y))
                    );
                }
            }
        }
        // Legend entry.
        let ly = MARGIN_T + 14.0 * i as f64 + 12.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            px(MARGIN_L + 8.0),
            px(ly - 9.0)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\">{}</text>",
            px(MARGIN_L + 22.0),
            px(ly),
            xml_escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes a long-format CSV (`series,x,y`) of every series plus one SVG
/// chart per series. Returns the created file paths in creation order.
pub fn emit_plot_data(
    dir: &Path,
    stem: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<Vec<PathBuf>, ReportError> {
    let mut created = Vec::new();
    let csv_path = dir.join(format!("{stem}.csv"));
    let rows: Vec<Vec<String>> = series
        .iter()
        .flat_map(|s| {
            s.points
                .iter()
                .map(|&(x, y)| vec![s.name.clone(), fmt_f64(x), fmt_f64(y)])
        })
        .collect();
    write_csv(&csv_path, &["series", "x", "y"], &rows)?;
    created.push(csv_path);
    for s in series {
        let svg_path = dir.join(format!("{stem}-{}.svg", slug(&s.name)));
        let svg = render_chart(&s.name, x_label, y_label, std::slice::from_ref(s));
        write_file(&svg_path, &svg)?;
        created.push(svg_path);
    }
    Ok(created)
}

/// Writes a single chart containing all series overlaid.
pub fn emit_combined_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<(), ReportError> {
    write_file(path, &render_chart(title, x_label, y_label, series))
}
