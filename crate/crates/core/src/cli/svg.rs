//! Static SVG rendering of the imbalance frontier.

use std::fmt::Write as _;

use crate::estimator::FrontierPoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 70.0;

/// Axis range with a small pad; degenerate ranges get a unit window.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 0.0 {
        let pad = 0.5 * (1.0 + lo.abs() * 0.01);
        return (lo - pad, hi + pad);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

/// Renders the frontier with the disaggregated RMSE on the x axis and
/// the aggregated RMSE on the y axis, one marker per grid point.
pub fn frontier_svg(points: &[FrontierPoint]) -> String {
    let (x_lo, x_hi) = padded_range(points.iter().map(|p| p.rmse_dis));
    let (y_lo, y_hi) = padded_range(points.iter().map(|p| p.rmse_agg));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_at = |v: f64| MARGIN_LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w;
    let y_at = |v: f64| HEIGHT - MARGIN_BOTTOM - (v - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">Imbalance frontier</text>",
        WIDTH / 2.0
    );

    // axes
    let x0 = MARGIN_LEFT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{:.1}\" y2=\"{y0}\" stroke=\"black\"/>",
        WIDTH - MARGIN_RIGHT
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN_TOP}\" stroke=\"black\"/>"
    );

    // ticks
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let xp = x_at(xv);
        let _ = writeln!(
            svg,
            "  <line x1=\"{xp:.2}\" y1=\"{y0}\" x2=\"{xp:.2}\" y2=\"{:.1}\" stroke=\"black\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{xp:.2}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            y0 + 20.0,
            format_tick(xv)
        );
        let yv = y_lo + f * (y_hi - y_lo);
        let yp = y_at(yv);
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.1}\" y1=\"{yp:.2}\" x2=\"{x0}\" y2=\"{yp:.2}\" stroke=\"black\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            x0 - 8.0,
            yp + 4.0,
            format_tick(yv)
        );
    }

    // axis labels
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">Disaggregated pre-treatment fit (RMSE)</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 20 {:.1})\">Aggregated pre-treatment fit (RMSE)</text>",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    // frontier path and points
    if points.len() > 1 {
        let path: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_at(p.rmse_dis), y_at(p.rmse_agg)))
            .collect();
        let _ = writeln!(
            svg,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
    }
    for p in points {
        let _ = writeln!(
            svg,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"steelblue\"><title>nu={}</title></circle>",
            x_at(p.rmse_dis),
            y_at(p.rmse_agg),
            p.nu
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{FeasibleSet, Weights};

    fn point(nu: f64, rmse_dis: f64, rmse_agg: f64) -> FrontierPoint {
        let set = FeasibleSet::simplex(2).unwrap();
        FrontierPoint {
            nu,
            rmse_dis,
            rmse_agg,
            weights: Weights::new(vec![0.5, 0.5], &set).unwrap(),
            fw_gap: 0.0,
            converged: true,
        }
    }

    #[test]
    fn svg_has_labels_and_one_marker_per_point() {
        let points = vec![
            point(0.0, 1.0, 0.8),
            point(0.5, 1.1, 0.5),
            point(1.0, 1.5, 0.2),
        ];
        let svg = frontier_svg(&points);
        assert!(svg.contains("Disaggregated pre-treatment fit (RMSE)"));
        assert!(svg.contains("Aggregated pre-treatment fit (RMSE)"));
        assert!(svg.contains("Imbalance frontier"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn degenerate_frontier_still_renders() {
        let points = vec![point(0.0, 0.0, 0.0), point(1.0, 0.0, 0.0)];
        let svg = frontier_svg(&points);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(!svg.contains("NaN"));
    }
}
