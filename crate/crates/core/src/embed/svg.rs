use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

const SIZE: f64 = 640.0;
const RADIUS: f64 = 3.0;

/// Axis range padded by 5% on each side; a zero span becomes ±1.
fn padded(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = vals.clone().fold(f64::INFINITY, f64::min);
    let hi = vals.fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        (lo - 0.05 * span, hi + 0.05 * span)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// Standalone SVG scatter plot of n×2 points, coloured by label.
pub fn render_scatter_svg(y: &[f64], labels: &[usize]) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::invalid("emit_scatter_svg", "no points"));
    }
    if y.len() != 2 * labels.len() {
        return Err(Error::shape("emit_scatter_svg", format!("{} coordinates for {} labels", y.len(), labels.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("emit_scatter_svg", "non-finite coordinate"));
    }
    let (x0, x1) = padded(y.iter().step_by(2).copied());
    let (y0, y1) = padded(y.iter().skip(1).step_by(2).copied());
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    for (p, &l) in y.chunks(2).zip(labels) {
        let cx = (p[0] - x0) / (x1 - x0) * SIZE;
        // SVG y grows downwards
        let cy = (y1 - p[1]) / (y1 - y0) * SIZE;
        let _ =
            writeln!(s, r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{RADIUS}" fill="{}"/>"#, PALETTE[l % PALETTE.len()]);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_scatter_svg(y: &[f64], labels: &[usize], path: &Path) -> Result<()> {
    let svg = render_scatter_svg(y, labels)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point() {
        let svg = render_scatter_svg(&[0.0, 0.0, 1.0, 2.0, -1.0, 0.5], &[0, 1, 2]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg, render_scatter_svg(&[0.0, 0.0, 1.0, 2.0, -1.0, 0.5], &[0, 1, 2]).unwrap());
        assert!(svg.contains(PALETTE[2]));
    }

    #[test]
    fn empty_and_unwritable() {
        assert!(render_scatter_svg(&[], &[]).is_err());
        let err = emit_scatter_svg(&[0.0, 0.0], &[0], Path::new("/nonexistent-dir/x.svg")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.svg"));
    }
}
