//! Deterministic SVG rendering of angle histograms, trade-off curves and 2-D trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use flowslider::bench::{angle_bin, DEFAULT_ANGLE_BINS, DETAIL_CSV_HEADER, TRAJECTORY_CSV_HEADER};
use flowslider::geometry::ANGLE_CSV_HEADER;
use flowslider::{Error, Result};
use serde::{Deserialize, Serialize};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    AngleHist,
    Tradeoff,
    Trajectory2d,
}

impl PlotKind {
    pub fn header(self) -> &'static str {
        match self {
            PlotKind::AngleHist => ANGLE_CSV_HEADER,
            PlotKind::Tradeoff => DETAIL_CSV_HEADER,
            PlotKind::Trajectory2d => TRAJECTORY_CSV_HEADER,
        }
    }
}

/// Data-to-pixel mapping `px = a_x + b_x x`, `py = a_y + b_y y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl AxisMap {
    /// Covers `xs` and `ys`; a zero-width range is widened by 0.5 on each side.
    pub fn covering(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let (x_min, x_max) = span(xs);
        let (y_min, y_max) = span(ys);
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - LEFT - RIGHT)
    }

    pub fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - TOP - BOTTOM)
    }

    /// Parses the mapping declared on an SVG's plot-area element.
    pub fn from_svg(svg: &str) -> Option<Self> {
        let attr = |name: &str| -> Option<f64> {
            let key = format!("{name}=\"");
            let start = svg.find(&key)? + key.len();
            let end = start + svg[start..].find('"')?;
            svg[start..end].parse().ok()
        };
        Some(Self {
            x_min: attr("data-x-min")?,
            x_max: attr("data-x-max")?,
            y_min: attr("data-y-min")?,
            y_max: attr("data-y-max")?,
        })
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Parsed CSV: checked header and one map per row.
struct Table {
    rows: Vec<(usize, BTreeMap<String, String>)>,
}

fn read_table(text: &str, header: &str) -> Result<Table> {
    let expected: Vec<&str> = header.split(',').collect();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found = reader.headers().map_err(csv_error)?.clone();
    for (k, want) in expected.iter().enumerate() {
        match found.get(k) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(Error::Parse {
                    line: 1,
                    column: k + 1,
                    message: format!("column `{got}` where `{want}` was expected"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    column: k + 1,
                    message: format!("missing column `{want}`"),
                })
            }
        }
    }
    if found.len() > expected.len() {
        return Err(Error::Parse {
            line: 1,
            column: expected.len() + 1,
            message: format!("unexpected column `{}`", &found[expected.len()]),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = k + 2;
        let map = expected
            .iter()
            .zip(rec.iter())
            .map(|(c, v)| (c.to_string(), v.to_string()))
            .collect();
        rows.push((line, map));
    }
    Ok(Table { rows })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

fn field<T: FromStr>(row: &(usize, BTreeMap<String, String>), column: &str) -> Result<T> {
    let raw = row.1.get(column).map(String::as_str).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line: row.0,
        column: 0,
        message: format!("column `{column}`: cannot parse `{raw}`"),
    })
}

fn open(title: &str, map: &AxisMap, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" style="fill:#ffffff"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="28" style="font-family:sans-serif;font-size:18px;text-anchor:middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<g id="plot-area" data-x-min="{:?}" data-x-max="{:?}" data-y-min="{:?}" data-y-max="{:?}">"#,
        map.x_min, map.x_max, map.y_min, map.y_max
    );
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" style="fill:none;stroke:#333333;stroke-width:1"/>"#,
        x1 - x0,
        y1 - y0
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = map.x_min + f * (map.x_max - map.x_min);
        let yv = map.y_min + f * (map.y_max - map.y_min);
        let (px, py) = (map.px(xv), map.py(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.6}" y1="{y1}" x2="{px:.6}" y2="{}" style="stroke:#333333"/><text x="{px:.6}" y="{}" style="font-family:sans-serif;font-size:12px;text-anchor:middle">{}</text>"#,
            y1 + 5.0,
            y1 + 20.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{py:.6}" x2="{x0}" y2="{py:.6}" style="stroke:#333333"/><text x="{}" y="{:.6}" style="font-family:sans-serif;font-size:12px;text-anchor:end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" style="font-family:sans-serif;font-size:14px;text-anchor:middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" transform="rotate(-90 20 {})" style="font-family:sans-serif;font-size:14px;text-anchor:middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    s
}

fn close(mut s: String, empty: bool) -> String {
    if empty {
        let _ = writeln!(
            s,
            r#"<text class="no-data" x="{}" y="{}" style="font-family:sans-serif;font-size:20px;fill:#888888;text-anchor:middle">no data</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            (TOP + HEIGHT - BOTTOM) / 2.0
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let r = format!("{v:.3}");
    if r == "-0.000" {
        "0.000".into()
    } else {
        r
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `csv` (which must match `kind`'s schema) to an SVG document.
pub fn render_plot(kind: PlotKind, csv: &str) -> Result<String> {
    let table = read_table(csv, kind.header())?;
    match kind {
        PlotKind::AngleHist => angle_hist(&table),
        PlotKind::Tradeoff => tradeoff(&table),
        PlotKind::Trajectory2d => trajectory(&table),
    }
}

fn angle_hist(table: &Table) -> Result<String> {
    let mut counts = vec![0usize; DEFAULT_ANGLE_BINS];
    for row in &table.rows {
        let theta: f64 = field(row, "theta_deg")?;
        if !(0.0..=180.0).contains(&theta) {
            return Err(Error::Parse {
                line: row.0,
                column: 3,
                message: format!("column `theta_deg`: {theta} outside [0, 180]"),
            });
        }
        counts[angle_bin(theta, DEFAULT_ANGLE_BINS)] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let map = AxisMap {
        x_min: 0.0,
        x_max: 180.0,
        y_min: 0.0,
        y_max: peak,
    };
    let mut s = open("Angle between fidelity and steering terms", &map, "theta (degrees)", "count");
    let width = 180.0 / DEFAULT_ANGLE_BINS as f64;
    for (k, &c) in counts.iter().enumerate() {
        let (xa, xb) = (map.px(k as f64 * width), map.px((k + 1) as f64 * width));
        let (ya, yb) = (map.py(c as f64), map.py(0.0));
        let _ = writeln!(
            s,
            r#"<rect class="bar" data-bin="{k}" data-count="{c}" x="{xa:.6}" y="{ya:.6}" width="{:.6}" height="{:.6}" style="fill:#1f77b4;stroke:#ffffff;stroke-width:0.5"/>"#,
            xb - xa,
            yb - ya
        );
    }
    Ok(close(s, table.rows.is_empty()))
}

fn tradeoff(table: &Table) -> Result<String> {
    let mut points: Vec<(String, f64, f64, f64)> = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        points.push((
            field(row, "variant")?,
            field(row, "s")?,
            field(row, "edit_effect")?,
            field(row, "dist_euclid")?,
        ));
    }
    let map = AxisMap::covering(points.iter().map(|p| p.2), points.iter().map(|p| p.3));
    let mut s = open("Edit effect versus source distance", &map, "edit effect", "Euclidean distance to source");
    let variants: Vec<&str> = {
        let mut v: Vec<&str> = points.iter().map(|p| p.0.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    for (k, name) in variants.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" style="font-family:sans-serif;font-size:12px;fill:{colour}">{}</text>"#,
            LEFT + 10.0,
            TOP + 16.0 + 14.0 * k as f64,
            escape(name)
        );
    }
    for (variant, strength, x, y) in &points {
        let colour = PALETTE[variants.iter().position(|v| v == variant).unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<circle class="point" data-variant="{}" data-s="{:?}" cx="{:.6}" cy="{:.6}" r="3" style="fill:{colour};fill-opacity:0.6"/>"#,
            escape(variant),
            strength,
            map.px(*x),
            map.py(*y)
        );
    }
    Ok(close(s, points.is_empty()))
}

fn trajectory(table: &Table) -> Result<String> {
    let mut series: BTreeMap<String, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for row in &table.rows {
        series
            .entry(field(row, "series")?)
            .or_default()
            .push((field(row, "step")?, field(row, "x")?, field(row, "y")?));
    }
    for pts in series.values_mut() {
        pts.sort_by_key(|p| p.0);
    }
    let all = || series.values().flatten();
    let map = AxisMap::covering(all().map(|p| p.1), all().map(|p| p.2));
    let mut s = open("Trajectories in state space", &map, "x", "y");
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.6},{:.6}", map.px(p.1), map.py(p.2)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-series="{}" points="{}" style="fill:none;stroke:{colour};stroke-width:1.5"/>"#,
            escape(name),
            path.join(" ")
        );
        for p in pts {
            let _ = writeln!(
                s,
                r#"<circle class="point" data-series="{}" data-step="{}" cx="{:.6}" cy="{:.6}" r="2.5" style="fill:{colour}"/>"#,
                escape(name),
                p.0,
                map.px(p.1),
                map.py(p.2)
            );
        }
    }
    Ok(close(s, series.is_empty()))
}
