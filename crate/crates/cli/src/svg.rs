//! Deterministic SVG line charts.
//!
//! Fixed canvas, fixed palette, fixed numeric formatting, no timestamps or
//! generated ids: identical data always renders identical bytes. Write-only
//! output for plotting metric curves and ratio trajectories.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

/// One polyline: a label and its (x, y) points.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
}

/// Renders a line chart of the given series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_x = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let to_y = |y: f64| MARGIN_TOP + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"24\" font-family=\"monospace\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );

    // Axes and ticks.
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN_LEFT:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN_LEFT:.2}\" y1=\"{MARGIN_TOP:.2}\" x2=\"{MARGIN_LEFT:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        MARGIN_TOP + plot_h
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_min + f * (x_max - x_min);
        let yv = y_min + f * (y_max - y_min);
        let xp = to_x(xv);
        let yp = to_y(yv);
        let _ = writeln!(
            svg,
            "<line x1=\"{xp:.2}\" y1=\"{:.2}\" x2=\"{xp:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{xp:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            MARGIN_TOP + plot_h + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{MARGIN_LEFT:.2}\" y2=\"{yp:.2}\" stroke=\"black\"/>",
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            MARGIN_LEFT - 8.0,
            yp + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    // Data and legend.
    for (index, s) in series.iter().enumerate() {
        let color = PALETTE[index % PALETTE.len()];
        if !s.points.is_empty() {
            let mut path = String::new();
            for &(x, y) in s.points {
                let _ = write!(path, "{:.2},{:.2} ", to_x(x), to_y(y));
            }
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                path.trim_end()
            );
        }
        let ly = MARGIN_TOP + 14.0 * index as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            MARGIN_LEFT + plot_w - 120.0,
            MARGIN_LEFT + plot_w - 100.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{}</text>",
            MARGIN_LEFT + plot_w - 94.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.001 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
