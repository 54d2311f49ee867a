// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal SVG charts: grouped bars and categorical-x line plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

struct Frame {
    out: String,
    y_max: f64,
}

impl Frame {
    fn new(title: &str, y_label: &str, y_max: f64) -> Self {
        let y_max = if y_max.is_finite() && y_max > 0.0 { y_max } else { 1.0 };
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let mut frame = Frame { out, y_max };
        frame.axes(y_label);
        frame
    }

    fn plot_w() -> f64 {
        WIDTH - LEFT - RIGHT
    }

    fn plot_h() -> f64 {
        HEIGHT - TOP - BOTTOM
    }

    fn y(&self, v: f64) -> f64 {
        TOP + Self::plot_h() * (1.0 - (v / self.y_max).clamp(0.0, 1.0))
    }

    fn axes(&mut self, y_label: &str) {
        let x0 = LEFT;
        let y0 = TOP + Self::plot_h();
        let _ = writeln!(
            self.out,
            r##"<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y0}" stroke="#333"/>"##
        );
        let _ = writeln!(
            self.out,
            r##"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="#333"/>"##,
            LEFT + Self::plot_w()
        );
        for k in 0..=4 {
            let v = self.y_max * k as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                self.out,
                r##"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="#333"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                trim(v)
            );
        }
        let _ = writeln!(
            self.out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            TOP + Self::plot_h() / 2.0,
            TOP + Self::plot_h() / 2.0,
            escape(y_label)
        );
    }

    fn x_label(&mut self, x: f64, label: &str) {
        let y = TOP + Self::plot_h() + 16.0;
        let _ = writeln!(
            self.out,
            r#"<text x="{x}" y="{y}" text-anchor="end" transform="rotate(-30 {x} {y})">{}</text>"#,
            escape(label)
        );
    }

    fn legend(&mut self, row: usize, swatch: &str, label: &str, dashed: bool) {
        let x = LEFT + Self::plot_w() + 16.0;
        let y = TOP + 10.0 + 18.0 * row as f64;
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            self.out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{swatch}" stroke-width="4"{dash}/><text x="{}" y="{}">{}</text>"#,
            x + 18.0,
            x + 24.0,
            y + 4.0,
            escape(label)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Bars for each category, one per series, side by side.
pub fn grouped_bar_chart(
    title: &str,
    y_label: &str,
    categories: &[String],
    series: &[(String, Vec<f64>)],
    y_max: f64,
) -> String {
    let mut f = Frame::new(title, y_label, y_max);
    let slot = Frame::plot_w() / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let x0 = LEFT + slot * c as f64 + slot * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0);
            let y = f.y(v);
            let _ = writeln!(
                f.out,
                r#"<rect x="{}" y="{y}" width="{bar}" height="{}" fill="{}"><title>{}</title></rect>"#,
                x0 + bar * s as f64,
                TOP + Frame::plot_h() - y,
                color(s),
                escape(&format!("{name}: {v}"))
            );
        }
        f.x_label(x0 + slot * 0.4, name);
    }
    if series.len() > 1 {
        for (s, (label, _)) in series.iter().enumerate() {
            f.legend(s, color(s), label, false);
        }
    }
    f.finish()
}

pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)], y_max: f64) -> String {
    let categories: Vec<String> = bars.iter().map(|(l, _)| l.clone()).collect();
    let values: Vec<f64> = bars.iter().map(|(_, v)| *v).collect();
    grouped_bar_chart(title, y_label, &categories, &[(String::new(), values)], y_max)
}

/// Series over evenly spaced categorical x positions, with dashed
/// horizontal baselines and circled marker points `(series, x)`.
pub fn line_chart(
    title: &str,
    y_label: &str,
    x_labels: &[String],
    series: &[(String, Vec<f64>)],
    baselines: &[(String, f64)],
    markers: &[(usize, usize)],
    y_max: f64,
) -> String {
    let mut f = Frame::new(title, y_label, y_max);
    let step = Frame::plot_w() / x_labels.len().max(1) as f64;
    let x = |i: usize| LEFT + step * (i as f64 + 0.5);
    for (i, label) in x_labels.iter().enumerate() {
        f.x_label(x(i) + 4.0, label);
    }
    let mut legend_row = 0;
    for (b, (label, v)) in baselines.iter().enumerate() {
        let y = f.y(*v);
        let stroke = color(series.len() + b);
        let _ = writeln!(
            f.out,
            r#"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="{stroke}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
            LEFT + Frame::plot_w()
        );
        f.legend(legend_row, stroke, &format!("{label} ({})", trim(*v)), true);
        legend_row += 1;
    }
    for (s, (label, values)) in series.iter().enumerate() {
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{},{}", x(i), f.y(*v)))
            .collect();
        let _ = writeln!(
            f.out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            points.join(" "),
            color(s)
        );
        for (i, v) in values.iter().enumerate() {
            let _ = writeln!(
                f.out,
                r#"<circle cx="{}" cy="{}" r="3" fill="{}"/>"#,
                x(i),
                f.y(*v),
                color(s)
            );
        }
        f.legend(legend_row, color(s), label, false);
        legend_row += 1;
    }
    for &(s, i) in markers {
        if let Some(v) = series.get(s).and_then(|(_, vals)| vals.get(i)) {
            let _ = writeln!(
                f.out,
                r#"<circle cx="{}" cy="{}" r="7" fill="none" stroke="black" stroke-width="1.5"><title>best</title></circle>"#,
                x(i),
                f.y(*v)
            );
        }
    }
    f.finish()
}
