//! Minimal line plot: mean curve plus a shaded one-standard-deviation band.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

/// `rows` are `(iteration, mean, std)`.
pub fn exploitability_plot(title: &str, rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    if rows.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let x_max = rows.iter().map(|r| r.0).max().unwrap_or(1).max(1) as f64;
    let x_min = rows.iter().map(|r| r.0).min().unwrap_or(0) as f64;
    let y_max = rows
        .iter()
        .map(|r| r.1 + r.2)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let y_min = rows
        .iter()
        .map(|r| r.1 - r.2)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::min);
    let span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let px = |x: f64| PAD + (x - x_min) / span * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y_min) / (y_max - y_min) * (H - 2.0 * PAD);

    let _ = writeln!(
        out,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
        H - PAD + 16.0,
        x_min
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
        W - PAD,
        H - PAD + 16.0,
        x_max
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{PAD}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3e}</text>"#,
        PAD - 4.0,
        y_max
    );

    let mut band = String::new();
    for r in rows {
        let _ = write!(band, "{:.2},{:.2} ", px(r.0 as f64), py(r.1 + r.2));
    }
    for r in rows.iter().rev() {
        let _ = write!(band, "{:.2},{:.2} ", px(r.0 as f64), py(r.1 - r.2));
    }
    let _ = writeln!(
        out,
        r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
        band.trim_end()
    );
    let mut line = String::new();
    for r in rows {
        let _ = write!(line, "{:.2},{:.2} ", px(r.0 as f64), py(r.1));
    }
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        line.trim_end()
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
