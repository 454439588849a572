//! SVG scatter of spots colored by domain label.

use std::fmt::Write;

use crate::numerics::Matrix;
use crate::scalar::Scalar;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const CANVAS: f64 = 600.0;
const MARGIN: f64 = 20.0;

/// One circle per spot; image y runs downward, as in pixel coordinates.
pub fn scatter_svg<T: Scalar>(coords: &Matrix<T>, labels: &[usize]) -> String {
    let xs: Vec<f64> = (0..coords.rows()).map(|i| coords[(i, 0)].as_f64()).collect();
    let ys: Vec<f64> = (0..coords.rows()).map(|i| coords[(i, 1)].as_f64()).collect();
    let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (x0, y0) = (lo(&xs), lo(&ys));
    let span = (hi(&xs) - x0).max(hi(&ys) - y0).max(f64::MIN_POSITIVE);
    let scale = (CANVAS - 2.0 * MARGIN) / span;
    let radius = (0.5 * (CANVAS - 2.0 * MARGIN) / (coords.rows().max(1) as f64).sqrt()).clamp(1.0, 12.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, &l) in labels.iter().enumerate() {
        let cx = MARGIN + (xs[i] - x0) * scale;
        let cy = MARGIN + (ys[i] - y0) * scale;
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{radius:.2}" fill="{}"><title>{l}</title></circle>"#,
            PALETTE[l % PALETTE.len()]
        );
    }
    svg.push_str("</svg>\n");
    svg
}
