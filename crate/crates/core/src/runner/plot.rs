use std::fmt::Write as _;

use super::Fig3Row;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const BASE_COLOR: &str = "#1f77b4";
const REG_COLOR: &str = "#d62728";

/// Alignment (x) against uniformity (y) for both arms, with every point
/// labeled by its epoch.
pub fn fig3_svg(rows: &[Fig3Row], beta: f64) -> String {
    let xs = rows.iter().flat_map(|r| [r.align_base, r.align_reg]);
    let ys = rows.iter().flat_map(|r| [r.unif_base, r.unif_reg]);
    let (x0, x1) = padded_range(xs);
    let (y0, y1) = padded_range(ys);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    // SVG y grows downward.
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(
        w,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for (v, pos) in [(x0, left), (x1, right)] {
        writeln!(w, r#"<text x="{pos}" y="{}" text-anchor="middle">{v:.3}</text>"#, bottom + 16.0).unwrap();
    }
    for (v, pos) in [(y0, bottom), (y1, top)] {
        writeln!(w, r#"<text x="{}" y="{pos}" text-anchor="end">{v:.3}</text>"#, left - 6.0).unwrap();
    }
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">alignment</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">uniformity</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();

    let arms: [(&str, String, fn(&Fig3Row) -> (f64, f64)); 2] = [
        (BASE_COLOR, "beta = 0".to_string(), |r| (r.align_base, r.unif_base)),
        (REG_COLOR, format!("beta = {beta}"), |r| (r.align_reg, r.unif_reg)),
    ];
    for (k, (color, label, pick)) in arms.iter().enumerate() {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| {
            let (x, y) = pick(r);
            (sx(x), sy(y))
        }).collect();
        let path: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        )
        .unwrap();
        for ((x, y), r) in points.iter().zip(rows) {
            writeln!(w, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#).unwrap();
            writeln!(
                w,
                r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
                x + 4.0,
                y - 4.0,
                r.epoch
            )
            .unwrap();
        }
        let ly = top + 14.0 * k as f64;
        writeln!(
            w,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            right - 110.0,
            right - 90.0
        )
        .unwrap();
        writeln!(w, r#"<text x="{}" y="{}">{label}</text>"#, right - 85.0, ly + 4.0).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}
