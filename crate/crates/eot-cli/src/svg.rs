//! Minimal hand-written SVG scatter plots: one circle marker per point,
//! light axes, no external plotting dependencies.

use nalgebra::DMatrix;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 40.0;

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Render `[n x 2]` points as an SVG scatter plot. Returns an error
/// string-free SVG document; callers validate shape beforehand.
pub fn scatter_svg(points: &DMatrix<f64>, title: &str, color: &str) -> String {
    assert_eq!(points.ncols(), 2, "scatter plots are 2D");
    let n = points.nrows();
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        x_lo = x_lo.min(points[(i, 0)]);
        x_hi = x_hi.max(points[(i, 0)]);
        y_lo = y_lo.min(points[(i, 1)]);
        y_hi = y_hi.max(points[(i, 1)]);
    }
    if !x_lo.is_finite() {
        // empty plot: fix an arbitrary frame
        x_lo = -1.0;
        x_hi = 1.0;
        y_lo = -1.0;
        y_hi = 1.0;
    }
    // pad degenerate ranges so the projection stays well defined
    if x_hi - x_lo < 1e-9 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let sx = (WIDTH - 2.0 * MARGIN) / (x_hi - x_lo);
    let sy = (HEIGHT - 2.0 * MARGIN) / (y_hi - y_lo);
    let px = |x: f64| MARGIN + (x - x_lo) * sx;
    // SVG y grows downward
    let py = |y: f64| HEIGHT - MARGIN - (y - y_lo) * sy;

    let mut out = String::with_capacity(128 * n + 1024);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str(&format!(
        "  <title>{}</title>\n  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         fill=\"white\"/>\n",
        escape_xml(title)
    ));
    // frame + axis labels at the data extremes
    out.push_str(&format!(
        "  <rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{h}\" fill=\"none\" \
         stroke=\"#888\"/>\n",
        m = MARGIN,
        w = WIDTH - 2.0 * MARGIN,
        h = HEIGHT - 2.0 * MARGIN
    ));
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#444\">[{:.2}, {:.2}] x [{:.2}, {:.2}]</text>\n",
        MARGIN,
        MARGIN - 10.0,
        x_lo,
        x_hi,
        y_lo,
        y_hi
    ));
    for i in 0..n {
        out.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.55\"/>\n",
            px(points[(i, 0)]),
            py(points[(i, 1)]),
            color
        ));
    }
    out.push_str("</svg>\n");
    out
}
