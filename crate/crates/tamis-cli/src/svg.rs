//! Minimal self-contained SVG line charts for the trace diagnostics.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f6fb4", "#d65319", "#2c8f4c", "#8d55bb", "#b4336f", "#5a7382", "#a58422", "#2aa0a6",
];

/// One polyline per series; points with a non-finite coordinate split the
/// line into segments instead of corrupting the path.
pub fn line_chart(title: &str, y_label: &str, series: &[Vec<(f64, f64)>]) -> String {
    let finite = series
        .iter()
        .flatten()
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || !x1.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x0 == x1 {
        x1 = x0 + 1.0;
    }
    if y0 == y1 {
        y1 = y0 + 1.0;
    }
    let pad = 0.04 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let py =
        |y: f64| HEIGHT - MARGIN_BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);

    let mut out = String::new();
    let _ = write!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="system-ui, sans-serif" font-size="12">"##
    );
    let _ = write!(
        out,
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    );
    let _ = write!(
        out,
        r##"<text x="{}" y="22" font-size="15" fill="#222">{}</text>"##,
        MARGIN_LEFT,
        escape(title)
    );
    let _ = write!(
        out,
        r##"<text x="12" y="{}" fill="#444" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"##,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        escape(y_label)
    );
    let _ = write!(
        out,
        r##"<text x="{}" y="{}" fill="#444" text-anchor="middle">t</text>"##,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0
    );

    // Gridlines and tick labels.
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = y0 + f * (y1 - y0);
        let x = x0 + f * (x1 - x0);
        let _ = write!(
            out,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ddd"/>"##,
            MARGIN_LEFT,
            py(y),
            WIDTH - MARGIN_RIGHT,
            py(y)
        );
        let _ = write!(
            out,
            r##"<text x="{}" y="{}" fill="#555" text-anchor="end">{}</text>"##,
            MARGIN_LEFT - 6.0,
            py(y) + 4.0,
            label(y)
        );
        let _ = write!(
            out,
            r##"<text x="{}" y="{}" fill="#555" text-anchor="middle">{}</text>"##,
            px(x),
            HEIGHT - MARGIN_BOTTOM + 16.0,
            label(x)
        );
    }
    let _ = write!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        MARGIN_LEFT,
        MARGIN_TOP,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    );

    let opacity = if series.len() > 4 { 0.65 } else { 0.9 };
    for (s, points) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        for segment in points.split(|(x, y)| !x.is_finite() || !y.is_finite()) {
            if segment.len() < 2 {
                continue;
            }
            let path: Vec<String> = segment
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = write!(
                out,
                r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.4" stroke-opacity="{opacity}"/>"##,
                path.join(" ")
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() || s == "-" {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
