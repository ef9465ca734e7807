//! Minimal static SVG output: heatmap panels and line charts.

use std::fmt::Write as _;

pub struct Panel<'a> {
    pub title: String,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

fn gray(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let c = (255.0 * (1.0 - t)).round() as u8;
    format!("#{c:02x}{c:02x}{c:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grid of heatmap panels sharing one grayscale range (darker = larger).
pub fn heatmaps(title: &str, panels: &[Panel], per_row: usize) -> String {
    let cell = 8.0;
    let pad = 16.0;
    let (lo, hi) = panels
        .iter()
        .flat_map(|p| p.values.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let max_cols = panels.iter().map(|p| p.cols).max().unwrap_or(1) as f64;
    let max_rows = panels.iter().map(|p| p.rows).max().unwrap_or(1) as f64;
    let pw = max_cols * cell + pad;
    let ph = max_rows * cell + pad + 14.0;
    let per_row = per_row.max(1);
    let nrows = panels.len().div_ceil(per_row);
    let width = pad + per_row.min(panels.len()).max(1) as f64 * pw;
    let height = 30.0 + nrows as f64 * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="18" font-size="12">{}</text>"#, escape(title));
    for (i, p) in panels.iter().enumerate() {
        let ox = pad + (i % per_row) as f64 * pw;
        let oy = 30.0 + (i / per_row) as f64 * ph;
        let _ = writeln!(s, r#"<text x="{ox}" y="{}">{}</text>"#, oy + 10.0, escape(&p.title));
        for r in 0..p.rows {
            for c in 0..p.cols {
                let v = p.values[r * p.cols + c];
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
                    ox + c as f64 * cell,
                    oy + 14.0 + r as f64 * cell,
                    gray(v, lo, hi)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

pub struct Series<'a> {
    pub label: String,
    pub points: &'a [(f64, f64)],
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart; `log_y` plots `log10(y)` for positive values.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let (w, h, ml, mr, mt, mb) = (560.0, 320.0, 60.0, 120.0, 30.0, 40.0);
    let ty = |y: f64| if log_y { y.max(1e-300).log10() } else { y };
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().map(|&(x, y)| (x, ty(y)))).filter(|p| p.1.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{ml}" y="18" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{ml},{mt} V{} H{}" fill="none" stroke="black"/>"#,
        h - mb,
        w - mr
    );
    let fmt_y = |y: f64| if log_y { format!("{:.1e}", 10f64.powf(y)) } else { format!("{y:.3e}") };
    let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, py(y1) + 4.0, fmt_y(y1));
    let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, py(y0), fmt_y(y0));
    let _ = writeln!(s, r#"<text x="{ml}" y="{}">{x0}</text>"#, h - mb + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1}</text>"#, w - mr, h - mb + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 8.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#, h / 2.0, h / 2.0, escape(y_label));
    for (i, se) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = se
            .points
            .iter()
            .map(|&(x, y)| (x, ty(y)))
            .filter(|p| p.1.is_finite())
            .enumerate()
            .map(|(j, (x, y))| format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let ly = mt + 14.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, w - mr + 8.0, escape(&se.label));
    }
    s.push_str("</svg>\n");
    s
}
