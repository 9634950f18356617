//! Self-contained SVG charts of backtest CSVs.
//!
//! Output is a pure function of the CSV text: coordinates are printed
//! with two decimals and colours come from a fixed palette.

use std::fmt::Write;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 6] = ["#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub const FORECAST_COLUMNS: [&str; 7] = ["window", "step", "timestamp", "actual", "median", "q0.1", "q0.9"];
pub const HISTOGRAM_COLUMNS: [&str; 2] = ["bin_left", "bin_right"];

#[derive(Debug, PartialEq)]
pub enum PlotError {
    /// Required columns absent from the header.
    MissingColumns(Vec<String>),
    Malformed { line: usize, reason: String },
}

impl std::fmt::Display for PlotError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlotError::MissingColumns(c) => write!(f, "missing columns: {}", c.join(", ")),
            PlotError::Malformed { line, reason } => write!(f, "line {line}: {reason}"),
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str, required: &[&str]) -> Result<Self, PlotError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let malformed = |e: csv::Error| PlotError::Malformed {
            line: e.position().map_or(1, |p| p.line() as usize),
            reason: e.to_string(),
        };
        let header: Vec<String> = reader.headers().map_err(malformed)?.iter().map(String::from).collect();
        let missing: Vec<String> = required
            .iter()
            .filter(|c| !header.iter().any(|h| h == *c))
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(PlotError::MissingColumns(missing));
        }
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()).map_err(malformed))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        if rows.is_empty() {
            return Err(PlotError::Malformed {
                line: 2,
                reason: "no data rows".into(),
            });
        }
        Ok(Self { header, rows })
    }

    fn index(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("column checked")
    }

    /// Column as numbers; empty cells become `None`.
    fn column(&self, name: &str) -> Result<Vec<Option<f64>>, PlotError> {
        let i = self.index(name);
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let cell = &row[i];
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse().map(Some).map_err(|_| PlotError::Malformed {
                    line: r + 2,
                    reason: format!("`{cell}` in column {name} is not a number"),
                })
            })
            .collect()
    }

    fn required(&self, name: &str) -> Result<Vec<f64>, PlotError> {
        self.column(name)?
            .into_iter()
            .enumerate()
            .map(|(r, v)| {
                v.ok_or_else(|| PlotError::Malformed {
                    line: r + 2,
                    reason: format!("empty cell in column {name}"),
                })
            })
            .collect()
    }

    fn prefixed(&self, prefix: &str) -> Vec<String> {
        self.header.iter().filter(|h| h.starts_with(prefix)).cloned().collect()
    }
}

struct Frame {
    x_max: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn new(x_max: f64, values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(0.5);
        Self {
            x_max: x_max.max(1.0),
            y_lo: lo - pad,
            y_hi: hi + pad,
        }
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (WIDTH - LEFT - RIGHT) * v / self.x_max
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (HEIGHT - TOP - BOTTOM) * (self.y_hi - v) / (self.y_hi - self.y_lo)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{LEFT}" y="20" font-size="14">{}</text>"#, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r##"<g class="axes" stroke="#333"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"##
    );
    for k in 0..=4 {
        let v = f.y_lo + (f.y_hi - f.y_lo) * k as f64 / 4.0;
        let y = f.y(v);
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"##,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (name, colour)) in entries.iter().enumerate() {
        let y = TOP + 16.0 * i as f64 + 8.0;
        let x = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.2}" width="12" height="8" fill="{colour}"/><text x="{}" y="{:.2}">{}</text>"#,
            y - 8.0,
            x + 18.0,
            y,
            escape(name)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn points(f: &Frame, ys: impl Iterator<Item = (usize, f64)>) -> String {
    let mut s = String::new();
    for (i, y) in ys {
        if !s.is_empty() {
            s.push(' ');
        }
        let _ = write!(s, "{:.2},{:.2}", f.x(i as f64), f.y(y));
    }
    s
}

/// Fan chart of a forecast CSV: truth, median, one polyline per baseline
/// and, for distributions, the 0.1 to 0.9 band.
pub fn forecast_svg(csv: &str, title: &str) -> Result<String, PlotError> {
    let t = Table::parse(csv, &FORECAST_COLUMNS)?;
    let actual = t.required("actual")?;
    let median = t.required("median")?;
    let lo = t.column("q0.1")?;
    let hi = t.column("q0.9")?;
    let band: Option<(Vec<f64>, Vec<f64>)> = match (
        lo.iter().copied().collect::<Option<Vec<_>>>(),
        hi.iter().copied().collect::<Option<Vec<_>>>(),
    ) {
        (Some(l), Some(h)) => Some((l, h)),
        _ => None,
    };
    let baselines: Vec<(String, Vec<f64>)> = t
        .prefixed("baseline_")
        .into_iter()
        .map(|c| Ok((c["baseline_".len()..].to_string(), t.required(&c)?)))
        .collect::<Result<_, PlotError>>()?;
    let windows = t.required("window")?;

    let n = actual.len();
    let mut all: Vec<f64> = actual.iter().chain(&median).copied().collect();
    if let Some((l, h)) = &band {
        all.extend(l.iter().chain(h));
    }
    for (_, b) in &baselines {
        all.extend(b);
    }
    let f = Frame::new((n - 1) as f64, all.into_iter());

    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, "forecast step (pooled windows)", "PRB utilization");
    for i in 1..n {
        if windows[i] != windows[i - 1] {
            let x = f.x(i as f64 - 0.5);
            let _ = writeln!(
                out,
                r##"<line class="window" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
                HEIGHT - BOTTOM
            );
        }
    }
    let mut entries = Vec::new();
    if let Some((l, h)) = &band {
        let upper = points(&f, h.iter().copied().enumerate());
        let lower = points(&f, l.iter().copied().enumerate().rev());
        let _ = writeln!(
            out,
            r##"<polygon class="band" points="{upper} {lower}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##
        );
        entries.push(("q0.1 to q0.9".to_string(), "#aac8e0"));
    }
    let _ = writeln!(
        out,
        r##"<polyline class="actual" points="{}" fill="none" stroke="#000" stroke-width="1.5"/>"##,
        points(&f, actual.iter().copied().enumerate())
    );
    entries.push(("true value".to_string(), "#000"));
    let _ = writeln!(
        out,
        r##"<polyline class="median" points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        points(&f, median.iter().copied().enumerate())
    );
    entries.push((if band.is_some() { "median" } else { "forecast" }.to_string(), "#1f77b4"));
    for (k, (name, values)) in baselines.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<polyline class="baseline" data-model="{}" points="{}" fill="none" stroke="{colour}" stroke-width="1" stroke-dasharray="6 3"/>"#,
            escape(name),
            points(&f, values.iter().copied().enumerate())
        );
        entries.push((name.clone(), colour));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grouped bar chart of a histogram CSV: one `<g class="bar">` per bin
/// holding a rectangle per model, plus a vertical line per marker.
pub fn histogram_svg(csv: &str, title: &str) -> Result<String, PlotError> {
    let t = Table::parse(csv, &HISTOGRAM_COLUMNS)?;
    let counts = t.prefixed("count_");
    if counts.is_empty() && t.prefixed("marker_").is_empty() {
        return Err(PlotError::MissingColumns(vec!["count_<model> or marker_<name>".into()]));
    }
    let left = t.required("bin_left")?;
    let right = t.required("bin_right")?;
    let series: Vec<(String, Vec<f64>)> = counts
        .iter()
        .map(|c| Ok((c["count_".len()..].to_string(), t.required(c)?)))
        .collect::<Result<_, PlotError>>()?;
    let markers: Vec<(String, f64)> = t
        .prefixed("marker_")
        .iter()
        .map(|c| Ok((c["marker_".len()..].to_string(), t.required(c)?[0])))
        .collect::<Result<_, PlotError>>()?;

    let lo = left[0];
    let hi = *right.last().expect("rows checked");
    let bins = left.len();
    let max_count = series
        .iter()
        .flat_map(|(_, c)| c.iter().copied())
        .fold(1.0f64, f64::max);
    let f = Frame {
        x_max: hi - lo,
        y_lo: 0.0,
        y_hi: max_count * 1.05,
    };

    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, "value at the selected step", "sample count");
    let groups = series.len().max(1) as f64;
    let mut entries = Vec::new();
    for b in 0..bins {
        let x0 = f.x(left[b] - lo);
        let width = (f.x(right[b] - lo) - x0) / groups;
        let _ = write!(out, r#"<g class="bar" data-bin="{b}">"#);
        for (k, (_, c)) in series.iter().enumerate() {
            let y = f.y(c[b]);
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + width * k as f64,
                (width - 0.5).max(0.1),
                (HEIGHT - BOTTOM - y).max(0.0),
                PALETTE[k % PALETTE.len()]
            );
        }
        out.push_str("</g>\n");
    }
    for (k, (name, _)) in series.iter().enumerate() {
        entries.push((name.clone(), PALETTE[k % PALETTE.len()]));
    }
    for (name, v) in &markers {
        let x = f.x(v - lo);
        let colour = if name == "true" { "#000" } else { "#ff7f0e" };
        let _ = writeln!(
            out,
            r#"<line class="marker" data-name="{}" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="{colour}" stroke-width="2"/>"#,
            escape(name),
            HEIGHT - BOTTOM
        );
        entries.push((format!("{name} = {v:.2}"), colour));
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            f.x(v - lo),
            HEIGHT - BOTTOM + 16.0
        );
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}
