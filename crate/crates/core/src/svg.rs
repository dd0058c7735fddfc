//! Minimal SVG line charts for episode traces.

use std::fmt::Write as _;

use crate::montecarlo::StepRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 240.0;
const PAD_LEFT: f64 = 60.0;
const PAD_RIGHT: f64 = 20.0;
const PAD_TOP: f64 = 30.0;
const PAD_BOTTOM: f64 = 40.0;

/// A single-series line chart. Non-finite samples are skipped.
pub struct LineChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub points: Vec<(f64, f64)>,
    /// Optional horizontal reference line.
    pub reference: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LineChart<'_> {
    /// Renders the chart as a `<g>` element translated by `y_offset`.
    fn render_group(&self, y_offset: f64) -> String {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
        if !pts.is_empty() {
            x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        }
        if let Some(r) = self.reference.filter(|r| r.is_finite()) {
            y0 = y0.min(r);
            y1 = y1.max(r);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pw = WIDTH - PAD_LEFT - PAD_RIGHT;
        let ph = HEIGHT - PAD_TOP - PAD_BOTTOM;
        let sx = |x: f64| PAD_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| PAD_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut g = String::new();
        let _ = writeln!(g, r#"<g transform="translate(0,{y_offset})">"#);
        let _ = writeln!(
            g,
            r##"<rect x="{PAD_LEFT}" y="{PAD_TOP}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(
            g,
            r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(self.title)
        );
        let _ = writeln!(
            g,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            PAD_LEFT + pw / 2.0,
            HEIGHT - 6.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            g,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
            PAD_TOP + ph / 2.0,
            PAD_TOP + ph / 2.0,
            escape(self.y_label)
        );
        for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
            let _ = writeln!(
                g,
                r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">{:.4}</text>"#,
                PAD_LEFT - 4.0,
                y + 3.0,
                v
            );
        }
        for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
            let _ = writeln!(
                g,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-size="10">{v:.1}</text>"#,
                PAD_TOP + ph + 14.0
            );
        }
        if let Some(r) = self.reference.filter(|r| r.is_finite()) {
            let _ = writeln!(
                g,
                r##"<line x1="{PAD_LEFT}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#c33" stroke-dasharray="4 3"/>"##,
                PAD_LEFT + pw,
                y = sy(r)
            );
        }
        if !pts.is_empty() {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                g,
                r##"<polyline fill="none" stroke="#1f5fbf" stroke-width="1.5" points="{}"/>"##,
                path.join(" ")
            );
        }
        g.push_str("</g>\n");
        g
    }
}

pub fn render(charts: &[LineChart]) -> String {
    let total = HEIGHT * charts.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{total}" viewBox="0 0 {WIDTH} {total}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, c) in charts.iter().enumerate() {
        s.push_str(&c.render_group(i as f64 * HEIGHT));
    }
    s.push_str("</svg>\n");
    s
}

/// Attitude error and keep-out margin versus time, both in degrees.
pub fn episode_charts(steps: &[StepRecord]) -> String {
    let phi = LineChart {
        title: "attitude error",
        x_label: "t [s]",
        y_label: "phi [deg]",
        points: steps.iter().map(|s| (s.t, s.phi.to_degrees())).collect(),
        reference: Some(0.25),
    };
    let margin = LineChart {
        title: "keep-out margin",
        x_label: "t [s]",
        y_label: "theta margin [deg]",
        points: steps.iter().map(|s| (s.t, s.theta_margin.to_degrees())).collect(),
        reference: Some(0.0),
    };
    render(&[phi, margin])
}
