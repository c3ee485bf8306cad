//! Minimal SVG output: greyscale cell heatmaps and spectrum scatter plots.

use std::fmt::Write as _;

/// Greyscale heatmap of a 1D or 2D cell array (axis 0 horizontal). Values
/// are mapped linearly from `[min, max]` to white..black.
pub fn heatmap(values: &[f64], nx: usize, ny: usize, title: &str, config_hash: &str) -> String {
    assert_eq!(values.len(), nx * ny);
    let cell = (480 / nx.max(ny)).max(1);
    let (w, h) = (cell * nx, cell * ny);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}">"#, h + 24);
    let _ = writeln!(s, "<!-- config_hash={config_hash} -->");
    let _ = writeln!(s, r#"<text x="2" y="16" font-size="12">{}</text>"#, escape(title));
    for y in 0..ny {
        for x in 0..nx {
            let t = (values[y * nx + x] - lo) / span;
            let g = (255.0 * (1.0 - t)).round() as u8;
            // row 0 at the bottom
            let py = 24 + (ny - 1 - y) * cell;
            let _ = writeln!(s, r#"<rect x="{}" y="{py}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>"#, x * cell);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of index vs value for up to two named series.
pub fn scatter(series: &[(&str, &[f64])], title: &str, y_label: &str, config_hash: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(1);
    let all = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let px = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n as f64;
    let py = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(s, "<!-- config_hash={config_hash} -->");
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="4" y="{}" font-size="11">{}</text>"#, pad - 6.0, escape(y_label));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">index</text>"#, w - pad, h - pad + 16.0);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-size="10">{lo:.4e}</text>"#, h - pad);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-size="10">{hi:.4e}</text>"#, pad + 10.0);
    for (k, (name, vals)) in series.iter().enumerate() {
        let marker = k % 2;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11">{} {}</text>"#,
            w - 180.0,
            40.0 + 14.0 * k as f64,
            if marker == 0 { "o" } else { "x" },
            escape(name)
        );
        for (i, &v) in vals.iter().enumerate() {
            let (x, y) = (px(i + 1), py(v));
            if marker == 0 {
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="none" stroke="black"/>"#);
            } else {
                let _ = writeln!(
                    s,
                    r#"<path d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="black"/>"#,
                    x - 3.0,
                    y - 3.0,
                    x + 3.0,
                    y + 3.0,
                    x - 3.0,
                    y + 3.0,
                    x + 3.0,
                    y - 3.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
