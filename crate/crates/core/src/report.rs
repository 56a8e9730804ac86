//! Comparison tables (markdown, CSV) and SVG plots built from metric
//! documents. Every renderer is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CorrelationReport, Direction, MetricResult};
use crate::stats::format_fixed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub sample_std: f64,
    pub n_restarts: usize,
    pub text: String,
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub direction: Direction,
    pub decimals: usize,
    pub cells: Vec<Option<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

fn arrow(d: Direction) -> &'static str {
    match d {
        Direction::Lower => "↓",
        Direction::Higher => "↑",
    }
}

impl ComparisonTable {
    /// Rows in first-seen metric order, columns in first-seen model order.
    /// Lower-is-better correlation rows bold their smallest rounded mean (all
    /// ties) when more than one column is present. DisCo rows are counts and
    /// are never bolded.
    pub fn from_results(results: &[MetricResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::invalid("report needs at least one metric document"));
        }
        let version = &results[0].manifest.tool_version;
        if let Some(other) = results.iter().find(|r| &r.manifest.tool_version != version) {
            return Err(Error::invalid(format!(
                "metric documents come from different tool versions ({version} and {})",
                other.manifest.tool_version
            )));
        }
        let mut columns: Vec<String> = Vec::new();
        let mut row_order: Vec<(String, Direction, usize, bool)> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), &MetricResult> = BTreeMap::new();
        for r in results {
            let col = match columns.iter().position(|c| c == &r.model) {
                Some(i) => i,
                None => {
                    columns.push(r.model.clone());
                    columns.len() - 1
                }
            };
            let row = match row_order.iter().position(|(n, ..)| n == &r.display_name) {
                Some(i) => {
                    if row_order[i].1 != r.direction || row_order[i].2 != r.decimals {
                        return Err(Error::invalid(format!(
                            "metric `{}` appears with inconsistent direction or precision",
                            r.display_name
                        )));
                    }
                    i
                }
                None => {
                    let boldable = r.direction == Direction::Lower && !r.metric.starts_with("disco");
                    row_order.push((r.display_name.clone(), r.direction, r.decimals, boldable));
                    row_order.len() - 1
                }
            };
            if cells.insert((row, col), r).is_some() {
                return Err(Error::invalid(format!(
                    "two documents for metric `{}` and model `{}`",
                    r.display_name, r.model
                )));
            }
        }
        let rows = row_order
            .into_iter()
            .enumerate()
            .map(|(ri, (name, direction, decimals, boldable))| {
                let mut row_cells: Vec<Option<Cell>> = (0..columns.len())
                    .map(|ci| {
                        cells.get(&(ri, ci)).map(|r| Cell {
                            mean: r.summary.mean,
                            sample_std: r.summary.sample_std,
                            n_restarts: r.summary.n_restarts,
                            text: if r.summary.n_restarts == 1 {
                                format_fixed(r.summary.mean, decimals)
                            } else {
                                r.summary.format(decimals)
                            },
                            bold: false,
                        })
                    })
                    .collect();
                if boldable {
                    mark_minimum(&mut row_cells, decimals);
                }
                Row {
                    name,
                    direction,
                    decimals,
                    cells: row_cells,
                }
            })
            .collect();
        Ok(ComparisonTable { columns, rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Metric | Want |");
        for c in &self.columns {
            let _ = write!(s, " {} |", c.replace('|', "\\|"));
        }
        s.push_str("\n|---|:-:|");
        for _ in &self.columns {
            s.push_str("---:|");
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "| {} | {} |", row.name.replace('|', "\\|"), arrow(row.direction));
            for cell in &row.cells {
                match cell {
                    Some(c) if c.bold => {
                        let _ = write!(s, " **{}** |", c.text);
                    }
                    Some(c) => {
                        let _ = write!(s, " {} |", c.text);
                    }
                    None => s.push_str(" – |"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["metric".to_string(), "want".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("write to memory");
        for row in &self.rows {
            let mut rec = vec![
                row.name.clone(),
                match row.direction {
                    Direction::Lower => "lower".to_string(),
                    Direction::Higher => "higher".to_string(),
                },
            ];
            rec.extend(row.cells.iter().map(|c| match c {
                Some(c) if c.bold => format!("*{}*", c.text),
                Some(c) => c.text.clone(),
                None => String::new(),
            }));
            w.write_record(&rec).expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

fn mark_minimum(cells: &mut [Option<Cell>], decimals: usize) {
    if cells.iter().filter(|c| c.is_some()).count() < 2 {
        return;
    }
    let rounded = |c: &Cell| format_fixed(c.mean, decimals).parse::<f64>().unwrap_or(c.mean);
    let min = cells
        .iter()
        .flatten()
        .map(rounded)
        .fold(f64::INFINITY, f64::min);
    for c in cells.iter_mut().flatten() {
        c.bold = rounded(c) == min;
    }
}

// ------------------------------------------------------------------- SVG

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn num(v: f64) -> String {
    format_fixed(v, 2)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn around(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = (hi - lo) * 0.05;
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, s: &mut String, x_label: &str, y_label: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r##"<path class="axes" d="M{l} {t}V{b}H{r}" fill="none" stroke="#000"/>"##,
            l = num(l),
            t = num(t),
            b = num(b),
            r = num(r)
        );
        for (v, anchor_x) in [(self.x0, l), (self.x1, r)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
                num(anchor_x),
                num(b + 14.0),
                format_fixed(v, 2)
            );
        }
        for (v, anchor_y) in [(self.y0, b), (self.y1, t)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
                num(l - 4.0),
                num(anchor_y + 3.0),
                format_fixed(v, 2)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            num(WIDTH / 2.0),
            num(HEIGHT - 10.0),
            xml_escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            num(HEIGHT / 2.0),
            num(HEIGHT / 2.0),
            xml_escape(y_label)
        );
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(s, "<title>{}</title>", xml_escape(title));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        num(WIDTH / 2.0),
        xml_escape(title)
    );
    s
}

fn y_label_for(metric: &str) -> &'static str {
    match metric {
        "sts_gender" => "mean score difference (man - woman)",
        "coref_gender" => "mean coreference probability (she)",
        "bios_gap" => "TPR gap (female - male)",
        _ => "metric",
    }
}

/// Scatter of per-profession points with the fitted line. The line carries
/// `data-slope` and `data-intercept` attributes holding the exact fit.
pub fn scatter_svg(report: &CorrelationReport, title: &str) -> String {
    let x_label = if report.metric == "bios_gap" {
        "fraction female"
    } else {
        "percent female"
    };
    let frame = Frame::around(report.points.iter().map(|p| p.x), report.points.iter().map(|p| p.y));
    let mut s = svg_open(title);
    frame.axes(&mut s, x_label, y_label_for(&report.metric));
    for p in &report.points {
        let _ = writeln!(
            s,
            r##"<circle class="point" cx="{}" cy="{}" r="3" fill="#1f77b4" data-label="{}" data-x="{}" data-y="{}"/>"##,
            num(frame.px(p.x)),
            num(frame.py(p.y)),
            xml_escape(&p.label),
            p.x,
            p.y
        );
    }
    if let Some(fit) = &report.fit {
        let (a, b) = (frame.x0, frame.x1);
        let _ = writeln!(
            s,
            r##"<line class="fit" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#d62728" data-slope="{}" data-intercept="{}" data-r="{}"/>"##,
            num(frame.px(a)),
            num(frame.py(fit.predict(a))),
            num(frame.px(b)),
            num(frame.py(fit.predict(b))),
            fit.slope,
            fit.intercept,
            report.pearson_r
        );
    }
    s.push_str("</svg>\n");
    s
}

/// A named sequence of (step, value) observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Read a training-curve CSV: a `step` column followed by one column per
/// series. Empty cells are gaps.
pub fn load_series_csv<R: Read>(source: R) -> Result<Vec<Series>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(source);
    let headers = rdr.headers().map_err(|e| Error::invalid(format!("series header: {e}")))?.clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("step") {
        return Err(Error::invalid("series CSV must start with a `step` column and at least one series"));
    }
    let mut series: Vec<Series> = headers
        .iter()
        .skip(1)
        .map(|h| Series {
            name: h.to_string(),
            points: Vec::new(),
        })
        .collect();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(i + 2, e.to_string()))?;
        let step: f64 = rec[0].parse().map_err(|_| Error::parse(i + 2, format!("bad step `{}`", &rec[0])))?;
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::parse(i + 2, format!("bad value `{cell}`")))?;
            series[j].points.push((step, v));
        }
    }
    Ok(series)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Step series as polylines, one per series.
pub fn series_svg(series: &[Series], title: &str, y_label: &str) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let frame = Frame::around(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut s = svg_open(title);
    frame.axes(&mut s, "step", y_label);
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", num(frame.px(x)), num(frame.py(y))))
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" data-name="{}"/>"#,
            pts.join(" "),
            xml_escape(&ser.name)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
            num(WIDTH - MARGIN + 4.0),
            num(MARGIN + 12.0 * i as f64),
            xml_escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// File-name-safe slug.
pub fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}
