//! Line charts as standalone SVG. Output depends only on the spec and the
//! CSV bytes, so repeated runs are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mspbe_core::harness::KvDocument;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub input: PathBuf,
    pub x: String,
    pub y: Vec<String>,
    pub log_x: bool,
    pub log_y: bool,
    pub title: Option<String>,
}

fn flag(doc: &KvDocument, key: &str) -> Result<bool> {
    match doc.get(key).map(|e| e.value.as_str()) {
        None | Some("false") => Ok(false),
        Some("true") => Ok(true),
        Some(other) => bail!("{key}: expected true or false, got `{other}`"),
    }
}

impl PlotSpec {
    /// `input` is resolved against `base` when relative.
    pub fn from_text(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut doc = KvDocument::parse(text)?;
        for o in overrides {
            doc.apply_override(o)?;
        }
        const KNOWN: [&str; 6] = ["input", "x", "y", "log_x", "log_y", "title"];
        if let Some(e) = doc
            .entries()
            .iter()
            .find(|e| !KNOWN.contains(&e.key.as_str()))
        {
            bail!("{}: unknown key `{}`", e.origin, e.key);
        }
        let required = |key: &str| {
            doc.get(key)
                .map(|e| e.value.clone())
                .ok_or_else(|| anyhow!("missing required key `{key}`"))
        };
        let input = PathBuf::from(required("input")?);
        let y: Vec<String> = required("y")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if y.is_empty() {
            bail!("y: at least one column is required");
        }
        Ok(Self {
            input: if input.is_absolute() {
                input
            } else {
                base.join(input)
            },
            x: doc
                .get("x")
                .map_or_else(|| "step".to_string(), |e| e.value.clone()),
            y,
            log_x: flag(&doc, "log_x")?,
            log_y: flag(&doc, "log_y")?,
            title: doc.get("title").map(|e| e.value.clone()),
        })
    }

    pub fn render(&self) -> Result<String> {
        let text = std::fs::read_to_string(&self.input)
            .with_context(|| format!("cannot read {}", self.input.display()))?;
        let series = self.load(&text)?;
        Ok(draw(self, &series))
    }

    /// Run artifacts carry a config header; the table starts after `---`.
    /// Empty cells (compare output with unequal probe grids) are skipped.
    fn load(&self, text: &str) -> Result<Vec<Vec<(f64, f64)>>> {
        let table = match text.split_once("\n---\n") {
            Some((_, body)) => body,
            None => text.strip_prefix("---\n").unwrap_or(text),
        };
        let mut reader = csv::Reader::from_reader(table.as_bytes());
        let headers = reader.headers()?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| anyhow!("column `{name}` not found in {}", self.input.display()))
        };
        let xi = column(&self.x)?;
        let yi = self
            .y
            .iter()
            .map(|c| column(c))
            .collect::<Result<Vec<_>>>()?;
        let mut series = vec![Vec::new(); yi.len()];
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<Option<f64>> {
                let cell = record.get(i).unwrap_or("").trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse::<f64>().map(Some).map_err(|_| {
                    anyhow!(
                        "row {}: column `{}`: not a number: `{cell}`",
                        row + 1,
                        &headers[i]
                    )
                })
            };
            let x = parse(xi)?;
            for (s, &i) in series.iter_mut().zip(&yi) {
                let point = x.zip(parse(i)?).filter(|&(x, y)| {
                    x.is_finite()
                        && y.is_finite()
                        && (!self.log_x || x > 0.0)
                        && (!self.log_y || y > 0.0)
                });
                s.extend(point);
            }
        }
        Ok(series)
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = values
            .map(|v| if log { v.log10() } else { v })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
            let pad = if log { 0.5 } else { lo.abs().max(1.0) * 0.05 };
            (lo, hi) = (lo - pad, hi + pad);
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let stride = ((self.hi - self.lo) / 8.0).ceil().max(1.0);
            let mut out = Vec::new();
            let mut e = self.lo;
            while e <= self.hi + 1e-9 {
                out.push((10f64.powf(e), format!("1e{}", e as i64)));
                e += stride;
            }
            return out;
        }
        let raw = (self.hi - self.lo) / 6.0;
        let magnitude = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * magnitude)
            .find(|&s| s >= raw)
            .unwrap_or(10.0 * magnitude);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last)
            .map(|i| {
                let v = i as f64 * step;
                (v, tick_label(v, step))
            })
            .collect()
    }
}

fn tick_label(v: f64, step: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e5 || v.abs() < 1e-3 {
        return format!("{v:.1e}");
    }
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn draw(spec: &PlotSpec, series: &[Vec<(f64, f64)>]) -> String {
    let points = || series.iter().flatten();
    let xa = Axis::fit(points().map(|p| p.0), spec.log_x);
    let ya = Axis::fit(points().map(|p| p.1), spec.log_y);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.unit(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.unit(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    if let Some(title) = &spec.title {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(title)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
    );
    for (v, label) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0,
            escape(&label)
        );
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            escape(&label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0,
        escape(&spec.x)
    );

    for (k, (name, points)) in spec.y.iter().zip(series).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<g stroke="{color}" fill="{color}">"#);
        if let [(x, y)] = points.as_slice() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#,
                px(*x),
                py(*y)
            );
        } else if !points.is_empty() {
            let coords: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let _ = writeln!(s, "</g>");
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
