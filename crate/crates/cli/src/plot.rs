//! Minimal deterministic SVG line charts.

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const GAP: f64 = 45.0;
const LEGEND: f64 = 24.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stroke {
    Solid,
    Dashed,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub stroke: Stroke,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, color: &'static str, stroke: Stroke, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            color,
            stroke,
            points,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Tick positions at 1, 2 or 5 times a power of ten.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.into() }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1e-3);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Panels stacked vertically in an 800x600 canvas.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();

    let n = panels.len().max(1) as f64;
    let avail = HEIGHT - MARGIN_TOP - LEGEND - GAP * n;
    let ph = avail / n;
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (i, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + i as f64 * (ph + GAP) + 10.0;
        let (x0, x1) = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (y0, y1) = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

        writeln!(
            out,
            r#"<rect x="{MARGIN_LEFT}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            top - 4.0,
            escape(&panel.title)
        )
        .unwrap();
        for t in nice_ticks(x0, x1, 8) {
            let x = sx(t);
            writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                top + ph,
                top + ph + 4.0,
                top + ph + 15.0,
                tick_label(t)
            )
            .unwrap();
        }
        for t in nice_ticks(y0, y1, 4) {
            let y = sy(t);
            writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 4.0,
                MARGIN_LEFT - 6.0,
                y + 4.0,
                tick_label(t)
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN_RIGHT,
            top + ph + 28.0,
            escape(&panel.x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text transform="translate(14 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            top + ph / 2.0,
            escape(&panel.y_label)
        )
        .unwrap();
        for s in &panel.series {
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = match s.stroke {
                Stroke::Solid => "",
                Stroke::Dashed => r#" stroke-dasharray="6 4""#,
            };
            writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                s.color,
                pts.join(" ")
            )
            .unwrap();
        }
    }

    // one legend for all panels
    let mut seen: Vec<(&str, &str, Stroke)> = Vec::new();
    for s in panels.iter().flat_map(|p| &p.series) {
        if !seen.iter().any(|e| e.0 == s.label) {
            seen.push((&s.label, s.color, s.stroke));
        }
    }
    let y = HEIGHT - 12.0;
    for (i, (label, color, stroke)) in seen.iter().enumerate() {
        let x = MARGIN_LEFT + i as f64 * 170.0;
        let dash = if *stroke == Stroke::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
        writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{y:.2}">{}</text>"#,
            y - 4.0,
            x + 30.0,
            y - 4.0,
            x + 36.0,
            escape(label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_numbers() {
        assert_eq!(nice_ticks(0.0, 50.0, 8), vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
        assert_eq!(nice_ticks(-0.05, 0.26, 4), vec![0.0, 0.1, 0.2]);
        assert_eq!(tick_label(0.25), "0.25");
        assert_eq!(tick_label(12.0), "12");
        assert_eq!(tick_label(2e-5), "2.0e-5");
    }

    #[test]
    fn render_is_deterministic_and_sized() {
        let panel = Panel {
            title: "X".into(),
            x_label: "t".into(),
            y_label: "X".into(),
            series: vec![Series::new("a", "red", Stroke::Solid, vec![(0.0, 1.0), (1.0, 2.0)])],
        };
        let a = render("demo", &[panel.clone(), panel.clone()]);
        assert_eq!(a, render("demo", &[panel.clone(), panel]));
        assert!(a.contains(r#"width="800" height="600""#));
        assert_eq!(a.matches("<polyline").count(), 2);
    }
}
