//! Minimal hand-written SVG plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
    /// Draw as a right-continuous step function.
    pub step: bool,
    pub dashed: bool,
}

pub struct Plot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub x_max: f64,
    pub series: Vec<Series<'a>>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

impl Plot<'_> {
    pub fn render(&self) -> String {
        let x_max = if self.x_max > 0.0 { self.x_max } else { 1.0 };
        let sx = |x: f64| MARGIN + x / x_max * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - y.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="25" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            self.title
        );
        let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(x_max), sy(1.0));
        let _ = writeln!(
            out,
            r#"<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                fmt(sy(f) + 4.0),
                fmt(f)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                fmt(sx(f * x_max)),
                y0 + 16.0,
                fmt(f * x_max)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 10.0,
            self.x_label
        );
        let _ = writeln!(
            out,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            self.y_label
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut pts = Vec::new();
            let mut prev: Option<f64> = None;
            for &(x, y) in &s.points {
                if let (true, Some(py)) = (s.step, prev) {
                    pts.push(format!("{},{}", fmt(sx(x)), fmt(sy(py))));
                }
                pts.push(format!("{},{}", fmt(sx(x)), fmt(sy(y))));
                prev = Some(y);
            }
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                pts.join(" ")
            );
            let ly = 45.0 + 16.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
                WIDTH - 170.0,
                WIDTH - 150.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}">{}</text>"#,
                WIDTH - 145.0,
                ly + 4.0,
                s.label
            );
        }
        out.push_str("</svg>\n");
        out
    }
}
