//! A small SVG line chart of test F1 against labeled fraction.

use std::fmt::Write as _;

use crate::report::RunSummary;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub fn f1_curve_svg(runs: &[RunSummary]) -> String {
    let x_max = runs
        .iter()
        .flat_map(|r| r.iterations.iter().map(|i| i.labeled_fraction))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |v: f64| MARGIN + v / x_max * plot_w;
    let y = |v: f64| HEIGHT - MARGIN - v.clamp(0.0, 1.0) * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        writeln!(
            svg,
            r##"<line x1="{MARGIN}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y(v) + 4.0,
            y = y(v)
        )
        .unwrap();
        let fx = x_max * v;
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}%</text>"#,
            x(fx),
            HEIGHT - MARGIN + 18.0,
            fx * 100.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<line x1="{MARGIN}" x2="{MARGIN}" y1="{MARGIN}" y2="{b}" stroke="black"/><line x1="{MARGIN}" x2="{r}" y1="{b}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">labeled fraction of the pool</text>"#, WIDTH / 2.0, HEIGHT - 12.0)
        .unwrap();
    writeln!(
        svg,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">test F1</text>"#,
        HEIGHT / 2.0
    )
    .unwrap();

    for (i, run) in runs.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> =
            run.iterations.iter().map(|r| format!("{:.1},{:.1}", x(r.labeled_fraction), y(r.f1_mean))).collect();
        writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" ")).unwrap();
        let ly = MARGIN + 16.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{lx}" x2="{lx2}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{tx}" y="{ty}">{}</text>"#,
            run.stem(),
            lx = WIDTH - MARGIN - 110.0,
            lx2 = WIDTH - MARGIN - 90.0,
            tx = WIDTH - MARGIN - 84.0,
            ty = ly + 4.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
