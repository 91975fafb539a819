//! Hand-written SVG for the two figures the CLI emits.

use std::fmt::Write;

use autoreparam::oracle::CrossoverRow;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// κ_cp and κ_ncp against q, both axes in log10.
pub fn crossover_plot(rows: &[CrossoverRow], sigma_mu: f64) -> String {
    let lx: Vec<f64> = rows.iter().map(|r| r.q.log10()).collect();
    let ly = |k: f64| k.log10();
    let (x0, x1) = (lx[0], lx[lx.len() - 1]);
    let y1 = rows
        .iter()
        .map(|r| ly(r.kappa_cp).max(ly(r.kappa_ncp)))
        .fold(0.0, f64::max)
        .max(1.0);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - y / y1 * (H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">condition number vs data strength (σ_μ = {sigma_mu})</text>"#,
        W / 2.0
    );
    let (left, right, bottom, top) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
    );
    for decade in (x0.ceil() as i32)..=(x1.floor() as i32) {
        let x = px(decade as f64);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle" font-size="11">1e{decade}</text>"#,
            bottom + 5.0,
            bottom + 18.0
        );
    }
    for decade in 0..=(y1.floor() as i32) {
        let y = py(decade as f64);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end" font-size="11">1e{decade}</text>"#,
            left - 5.0,
            left - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">q = N/σ² (log scale)</text>"#,
        W / 2.0,
        H - 20.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">κ (log scale)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (label, colour, pick) in [
        ("CP", "#1f77b4", (|r: &CrossoverRow| r.kappa_cp) as fn(&CrossoverRow) -> f64),
        ("NCP", "#d62728", |r: &CrossoverRow| r.kappa_ncp),
    ] {
        let points: Vec<String> = rows
            .iter()
            .zip(&lx)
            .map(|(r, &x)| format!("{:.2},{:.2}", px(x), py(ly(pick(r)))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"><title>{label}</title></polyline>"#,
            points.join(" ")
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="12" fill="#1f77b4">CP</text><text x="{}" y="{}" font-size="12" fill="#d62728">NCP</text>"##,
        right - 60.0,
        top + 12.0,
        right - 30.0,
        top + 12.0
    );
    out.push_str("</svg>\n");
    out
}

pub struct HeatmapRow {
    pub label: String,
    pub lambda: Vec<f64>,
}

const CELL: f64 = 14.0;
const LABEL_W: f64 = 220.0;

/// One row per run and one greyscale cell per λ element: white is λ = 1,
/// black is λ = 0. Cells are the only `rect` elements in the document.
pub fn heatmap(rows: &[HeatmapRow]) -> String {
    let cols = rows.iter().map(|r| r.lambda.len()).max().unwrap_or(0);
    let width = LABEL_W + CELL * cols as f64 + 10.0;
    let height = CELL * rows.len() as f64 + 30.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="4" y="16" font-size="12">centring weights λ (white = centred, black = non-centred)</text>"#
    );
    for (i, row) in rows.iter().enumerate() {
        let y = 24.0 + CELL * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="4" y="{:.1}" font-size="11">{}</text>"#,
            y + CELL - 3.0,
            escape(&row.label)
        );
        for (j, &l) in row.lambda.iter().enumerate() {
            let g = (255.0 * l.clamp(0.0, 1.0)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{y:.1}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})" stroke="none"><title>{l}</title></rect>"#,
                LABEL_W + CELL * j as f64
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
