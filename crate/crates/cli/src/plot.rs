//! SVG line charts with confidence bands, plus the companion CSV holding
//! the plotted numbers.
//!
//! Every point is emitted as a `<circle>` whose `data-*` attributes carry
//! the same 17-digit strings written to the CSV, so the two files can be
//! compared textually.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use margins_core::fmt_sig17;
use margins_core::MarginRow;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub estimate: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y range; fitted to the bands when `None`.
    pub y_range: Option<(f64, f64)>,
    pub band_opacity: f64,
}

impl PlotSpec {
    /// Groups grid rows into one series per label, in order of appearance.
    pub fn from_rows(rows: &[MarginRow], title: &str, x_label: &str, y_label: &str) -> Result<Self> {
        let mut series: Vec<Series> = Vec::new();
        for r in rows {
            let Some(x) = r.at_value else {
                bail!("plots need margins evaluated over a grid (--at)");
            };
            let s = match series.iter_mut().find(|s| s.name == r.label) {
                Some(s) => s,
                None => {
                    series.push(Series {
                        name: r.label.clone(),
                        x: Vec::new(),
                        estimate: Vec::new(),
                        low: Vec::new(),
                        high: Vec::new(),
                    });
                    series.last_mut().unwrap()
                }
            };
            s.x.push(x);
            s.estimate.push(r.estimate);
            s.low.push(r.ci_low);
            s.high.push(r.ci_high);
        }
        let spec = Self {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series,
            y_range: None,
            band_opacity: 0.25,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            bail!("nothing to plot");
        }
        for s in &self.series {
            let n = s.x.len();
            if n == 0 || s.estimate.len() != n || s.low.len() != n || s.high.len() != n {
                bail!("series `{}` has unequal or empty arrays", s.name);
            }
            for i in 0..n {
                if !(s.low[i] <= s.estimate[i] && s.estimate[i] <= s.high[i]) {
                    bail!("series `{}`: interval does not bracket the estimate at x = {}", s.name, s.x[i]);
                }
            }
        }
        Ok(())
    }

    fn x_bounds(&self) -> (f64, f64) {
        let xs = self.series.iter().flat_map(|s| s.x.iter().copied());
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo == hi {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    }

    fn y_bounds(&self) -> (f64, f64) {
        if let Some(r) = self.y_range {
            return r;
        }
        let lo = self.series.iter().flat_map(|s| s.low.iter().copied()).fold(f64::INFINITY, f64::min);
        let hi = self.series.iter().flat_map(|s| s.high.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo == hi { (lo - 0.01, hi + 0.01) } else { (lo, hi) };
        let step = nice_step(hi - lo, 6);
        ((lo / step).floor() * step, (hi / step).ceil() * step)
    }

    pub fn render_svg(&self) -> String {
        let (x0, x1) = self.x_bounds();
        let (y0, y1) = self.y_bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            esc(&self.title)
        );

        let _ = writeln!(s, r#"<g class="axes" stroke="black" stroke-width="1">"#);
        let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/>"#, TOP + ph, LEFT + pw, TOP + ph);
        let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/>"#, TOP + ph);
        let _ = writeln!(s, "</g>");

        let _ = writeln!(s, r#"<g class="x-ticks" text-anchor="middle">"#);
        for t in ticks(x0, x1, 8) {
            let x = px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}">{}</text>"##,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 20.0,
                tick_label(t, x1 - x0)
            );
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<g class="y-ticks" text-anchor="end">"#);
        for t in ticks(y0, y1, 6) {
            let y = py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/><line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}">{}</text>"##,
                LEFT + pw,
                LEFT - 5.0,
                LEFT - 8.0,
                y + 4.0,
                tick_label(t, y1 - y0)
            );
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 20.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        for (k, ser) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let _ = writeln!(s, r#"<g class="series" data-series="{}">"#, esc(&ser.name));
            let mut band = String::new();
            for (x, h) in ser.x.iter().zip(&ser.high) {
                let _ = write!(band, "{:.2},{:.2} ", px(*x), py(*h));
            }
            for (x, l) in ser.x.iter().zip(&ser.low).rev() {
                let _ = write!(band, "{:.2},{:.2} ", px(*x), py(*l));
            }
            let _ = writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="{}" stroke="none"/>"#,
                band.trim_end(),
                self.band_opacity
            );
            let line: Vec<String> = ser
                .x
                .iter()
                .zip(&ser.estimate)
                .map(|(x, e)| format!("{:.2},{:.2}", px(*x), py(*e)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="estimate" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
            for i in 0..ser.x.len() {
                let _ = writeln!(
                    s,
                    r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" data-x="{}" data-estimate="{}" data-ci-low="{}" data-ci-high="{}"/>"#,
                    px(ser.x[i]),
                    py(ser.estimate[i]),
                    fmt_sig17(ser.x[i]),
                    fmt_sig17(ser.estimate[i]),
                    fmt_sig17(ser.low[i]),
                    fmt_sig17(ser.high[i]),
                );
            }
            let _ = writeln!(s, "</g>");
        }

        if self.series.len() > 1 {
            let _ = writeln!(s, r#"<g class="legend">"#);
            for (k, ser) in self.series.iter().enumerate() {
                let y = TOP + 10.0 + 18.0 * k as f64;
                let x = LEFT + 15.0;
                let color = PALETTE[k % PALETTE.len()];
                let _ = writeln!(
                    s,
                    r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
                    x + 20.0,
                    x + 26.0,
                    y + 4.0,
                    esc(&ser.name)
                );
            }
            let _ = writeln!(s, "</g>");
        }
        s.push_str("</svg>\n");
        s
    }

    /// `series,x,estimate,ci_low,ci_high`, one line per plotted point.
    pub fn companion_csv(&self) -> String {
        let mut s = String::from("series,x,estimate,ci_low,ci_high\n");
        for ser in &self.series {
            for i in 0..ser.x.len() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    csv_field(&ser.name),
                    fmt_sig17(ser.x[i]),
                    fmt_sig17(ser.estimate[i]),
                    fmt_sig17(ser.low[i]),
                    fmt_sig17(ser.high[i]),
                );
            }
        }
        s
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Step from {1, 2, 5} × 10^k giving at most about `target` intervals.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let step = nice_step(hi - lo, target);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64, span: f64) -> String {
    let step = nice_step(span, 6);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_ticks() {
        assert_eq!(ticks(0.0, 35.0, 8), vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0]);
        assert_eq!(ticks(0.0, 1.0, 6), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(tick_label(0.6000000000000001, 1.0), "0.6");
        assert_eq!(tick_label(-0.0, 1.0), "0.0");
        assert_eq!(nice_step(120.0, 8), 20.0);
    }

    #[test]
    fn rejects_unbracketed_points() {
        let spec = PlotSpec {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "a".into(),
                x: vec![0.0],
                estimate: vec![0.5],
                low: vec![0.6],
                high: vec![0.7],
            }],
            y_range: Some((0.0, 1.0)),
            band_opacity: 0.25,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn svg_carries_csv_numbers() {
        let spec = PlotSpec {
            title: "A & B".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "g=a".into(),
                x: vec![0.0, 1.0],
                estimate: vec![0.25, 0.5],
                low: vec![0.2, 0.4],
                high: vec![0.3, 0.6],
            }],
            y_range: Some((0.0, 1.0)),
            band_opacity: 0.25,
        };
        let svg = spec.render_svg();
        assert!(svg.contains(r#"viewBox="0 0 800 600""#));
        assert!(svg.contains(r#"fill-opacity="0.25""#));
        assert!(svg.contains("A &amp; B"));
        let csv = spec.companion_csv();
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert!(svg.contains(&format!(r#"data-x="{}" data-estimate="{}""#, f[1], f[2])));
        }
    }
}
