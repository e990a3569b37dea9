//! Standalone SVG figures: paired slope charts, retention curves and
//! grouped quintile bars.

use std::fmt::Write;

use crate::error::Result;
use crate::retention::{retention_curve, Condition};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6c4f9e", "#00798c", "#8d6a9f", "#404040",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Value range padded by 5%; a flat range is widened to ±1.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    svg: String,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn new(title: &str, y_label: &str, y_lo: f64, y_hi: f64) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let mut f = Self { svg, y_lo, y_hi };
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            f.svg,
            r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
            let y = f.y(v);
            let _ = writeln!(
                f.svg,
                r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                tick(v)
            );
        }
        let _ = writeln!(
            f.svg,
            r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        f
    }

    fn y(&self, v: f64) -> f64 {
        let (y0, y1) = (TOP, H - BOTTOM);
        y1 - (v - self.y_lo) / (self.y_hi - self.y_lo) * (y1 - y0)
    }

    fn x_label(&mut self, x: f64, text: &str) {
        let _ = writeln!(
            self.svg,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 18.0,
            escape(text)
        );
    }

    fn legend(&mut self, i: usize, text: &str) {
        let (x, y) = (W - RIGHT + 14.0, TOP + 8.0 + 18.0 * i as f64);
        let _ = writeln!(
            self.svg,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            escape(text)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// One line per paired unit (seed) from the left to the right condition.
pub fn slope_chart(
    title: &str,
    y_label: &str,
    left: &str,
    right: &str,
    pairs: &[(String, f64, f64)],
) -> String {
    let (lo, hi) = range(pairs.iter().flat_map(|p| [p.1, p.2]));
    let mut f = Frame::new(title, y_label, lo, hi);
    let (xa, xb) = (LEFT + 80.0, W - RIGHT - 80.0);
    f.x_label(xa, left);
    f.x_label(xb, right);
    for (i, (label, a, b)) in pairs.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let (ya, yb) = (f.y(*a), f.y(*b));
        let _ = writeln!(
            f.svg,
            r#"<line x1="{xa}" y1="{ya:.2}" x2="{xb}" y2="{yb:.2}" stroke="{c}" stroke-width="1.5"/><circle cx="{xa}" cy="{ya:.2}" r="3.5" fill="{c}"/><circle cx="{xb}" cy="{yb:.2}" r="3.5" fill="{c}"/>"#
        );
        f.legend(i, label);
    }
    f.finish()
}

/// Retention over distance for each condition at the given context.
pub fn retention_curves(title: &str, context: usize, conditions: &[Condition]) -> Result<String> {
    let mut f = Frame::new(title, "retention", 0.0, 1.05);
    let (x0, x1) = (LEFT, W - RIGHT);
    let span = (context - 1).max(1) as f64;
    for k in 0..=4 {
        let d = (span * k as f64 / 4.0).round();
        f.x_label(x0 + d / span * (x1 - x0), &format!("{d:.0}"));
    }
    for (i, c) in conditions.iter().enumerate() {
        let curve = match c.retention(context)? {
            Some(cfg) => retention_curve(&cfg)?,
            None => vec![1.0; context],
        };
        let mut d = String::new();
        for (k, v) in curve.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2}",
                if k == 0 { "M" } else { " L" },
                x0 + k as f64 / span * (x1 - x0),
                f.y(*v)
            );
        }
        let _ = writeln!(
            f.svg,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="2"/>"#,
            PALETTE[i % PALETTE.len()]
        );
        f.legend(i, &c.to_string());
    }
    Ok(f.finish())
}

/// Grouped bars, one group per quintile, one bar per series.
pub fn quintile_bars(title: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let (lo, hi) = range(series.iter().flat_map(|s| s.1.iter().copied()).chain([0.0]));
    let mut f = Frame::new(title, y_label, lo, hi);
    let groups = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    let group_w = (W - RIGHT - LEFT) / groups.max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    let zero = f.y(0.0);
    for g in 0..groups {
        f.x_label(LEFT + group_w * (g as f64 + 0.5), &format!("Q{}", g + 1));
    }
    for (i, (name, values)) in series.iter().enumerate() {
        for (g, v) in values.iter().enumerate() {
            let x = LEFT + group_w * (g as f64 + 0.1) + bar_w * i as f64;
            let y = f.y(*v);
            let _ = writeln!(
                f.svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                y.min(zero),
                (y - zero).abs(),
                PALETTE[i % PALETTE.len()]
            );
        }
        f.legend(i, name);
    }
    f.finish()
}
