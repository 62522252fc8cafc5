//! Hand-emitted SVG artifacts: keypoint overlays, graph renderings and the
//! accuracy-versus-epsilon sweep plot. No plotting dependency; the files
//! are plain text, inspectable and diffable.

use std::fmt::Write as _;

use siftfuse::attack::EvalReport;
use siftfuse::image::ImageTensor;
use siftfuse::sift::{to_grayscale, Keypoint};

const SERIES_COLORS: &[&str] = &["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Grayscale backdrop as one unit rect per pixel, in image coordinates.
fn image_backdrop(out: &mut String, img: &ImageTensor) {
    let gray = to_grayscale(img);
    let _ = writeln!(out, "  <g shape-rendering=\"crispEdges\">");
    for y in 0..gray.height {
        for x in 0..gray.width {
            let v = (gray.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            let _ = writeln!(
                out,
                "    <rect x=\"{x}\" y=\"{y}\" width=\"1\" height=\"1\" fill=\"rgb({v},{v},{v})\"/>"
            );
        }
    }
    let _ = writeln!(out, "  </g>");
}

/// Keypoints drawn over the image: one circle of radius `scale` per
/// keypoint plus an orientation tick. Marker coordinates are the raw
/// keypoint values.
pub fn keypoint_overlay(img: &ImageTensor, keypoints: &[Keypoint]) -> String {
    let (w, h) = (img.width, img.height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{}\" height=\"{}\">",
        w * 8,
        h * 8
    );
    image_backdrop(&mut out, img);
    let _ = writeln!(out, "  <g class=\"keypoints\" fill=\"none\" stroke-width=\"0.3\">");
    for kp in keypoints {
        let (dx, dy) = (kp.orientation.cos() * kp.scale, kp.orientation.sin() * kp.scale);
        let _ = writeln!(
            out,
            "    <g class=\"marker\"><circle cx=\"{}\" cy=\"{}\" r=\"{}\" stroke=\"#00e020\"/><line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#00e020\"/></g>",
            kp.x,
            kp.y,
            kp.scale,
            kp.x,
            kp.y,
            kp.x + dx,
            kp.y + dy
        );
    }
    let _ = writeln!(out, "  </g>");
    out.push_str("</svg>\n");
    out
}

/// Keypoint graph drawn over the image: one line per undirected edge, one
/// node circle per keypoint. `default_k` adds a "(default)" marker to the
/// caption.
pub fn graph_overlay(
    img: &ImageTensor,
    keypoints: &[Keypoint],
    edges: &[(u32, u32)],
    k: usize,
    default_k: bool,
) -> String {
    let (w, h) = (img.width, img.height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{}\" height=\"{}\">",
        w * 8,
        h * 8
    );
    image_backdrop(&mut out, img);
    let _ = writeln!(out, "  <g class=\"edges\" stroke=\"#ffb000\" stroke-width=\"0.25\">");
    for &(a, b) in edges.iter().filter(|(a, b)| a < b) {
        let (pa, pb) = (&keypoints[a as usize], &keypoints[b as usize]);
        let _ = writeln!(
            out,
            "    <line class=\"edge\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>",
            pa.x, pa.y, pb.x, pb.y
        );
    }
    let _ = writeln!(out, "  </g>");
    let _ = writeln!(out, "  <g class=\"nodes\" fill=\"#00e020\">");
    for kp in keypoints {
        let _ = writeln!(out, "    <circle cx=\"{}\" cy=\"{}\" r=\"0.6\"/>", kp.x, kp.y);
    }
    let _ = writeln!(out, "  </g>");
    let caption = if default_k { format!("k = {k} (default)") } else { format!("k = {k}") };
    let _ = writeln!(
        out,
        "  <text x=\"1\" y=\"3\" font-size=\"3\" fill=\"#ffffff\" stroke=\"none\">{caption}</text>"
    );
    out.push_str("</svg>\n");
    out
}

/// Accuracy-versus-epsilon line plot, log-scaled x axis, one series per
/// variant. Tick labels are exactly the grid values; the epsilon = 0 rows
/// are tabulated in the CSV but not drawn on the log axis.
pub fn sweep_plot(report: &EvalReport, grid: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 60.0;
    const MR: f64 = 20.0;
    const MT: f64 = 30.0;
    const MB: f64 = 60.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;

    let (lo, hi) = (grid.first().copied().unwrap_or(1e-3), grid.last().copied().unwrap_or(1e-1));
    let x_of = |eps: f64| -> f64 {
        ML + plot_w * (eps.log10() - lo.log10()) / (hi.log10() - lo.log10()).max(1e-12)
    };
    let y_of = |acc: f64| -> f64 { MT + plot_h * (1.0 - acc) };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"11\">"
    );
    let _ = writeln!(out, "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "  <text x=\"{}\" y=\"18\" text-anchor=\"middle\">accuracy vs epsilon ({}, {}, PGD steps {})</text>",
        W / 2.0,
        report.dataset,
        report.backbone,
        report.steps
    );

    // Axes and horizontal gridlines.
    let _ = writeln!(
        out,
        "  <line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000\"/>",
        MT + plot_h,
        ML + plot_w,
        MT + plot_h
    );
    let _ = writeln!(out, "  <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"#000\"/>", MT + plot_h);
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let y = y_of(acc);
        let _ = writeln!(
            out,
            "  <line x1=\"{ML}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#dddddd\"/>",
            ML + plot_w
        );
        let _ = writeln!(
            out,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{acc:.1}</text>",
            ML - 6.0,
            y + 4.0
        );
    }
    // One tick per grid epsilon.
    for &eps in grid {
        let x = x_of(eps);
        let _ = writeln!(
            out,
            "  <line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#000\"/>",
            MT + plot_h,
            MT + plot_h + 5.0
        );
        let _ = writeln!(
            out,
            "  <text class=\"xtick\" x=\"{x}\" y=\"{}\" text-anchor=\"end\" transform=\"rotate(-45 {x} {})\">{eps:.4}</text>",
            MT + plot_h + 18.0,
            MT + plot_h + 18.0
        );
    }

    // One polyline per variant over the nonzero grid.
    let mut variants: Vec<&str> = Vec::new();
    for row in &report.rows {
        if !variants.contains(&row.variant.as_str()) {
            variants.push(&row.variant);
        }
    }
    for (vi, variant) in variants.iter().enumerate() {
        let color = SERIES_COLORS[vi % SERIES_COLORS.len()];
        let mut points = String::new();
        for &eps in grid {
            if let Some(acc) = report.accuracy_of(variant, eps) {
                let _ = write!(points, "{:.2},{:.2} ", x_of(eps), y_of(acc));
            }
        }
        let _ = writeln!(
            out,
            "  <polyline class=\"series\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points.trim_end()
        );
        let ly = MT + 14.0 * vi as f64;
        let _ = writeln!(
            out,
            "  <rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            ML + plot_w - 110.0,
            ly
        );
        let _ = writeln!(
            out,
            "  <text x=\"{}\" y=\"{}\">{variant}</text>",
            ML + plot_w - 96.0,
            ly + 9.0
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use siftfuse::attack::{EvalReport, EvalRow};

    #[test]
    fn overlay_marker_count_matches_keypoints() {
        let img = ImageTensor::constant(8, 8, 1, 0.5);
        let kps = vec![
            Keypoint { x: 2.0, y: 3.0, scale: 1.5, orientation: 0.0, response: 0.1 },
            Keypoint { x: 5.0, y: 6.0, scale: 2.0, orientation: 1.0, response: 0.2 },
        ];
        let svg = keypoint_overlay(&img, &kps);
        assert_eq!(svg.matches("class=\"marker\"").count(), 2);
        assert!(svg.contains("cx=\"2\" cy=\"3\""));
    }

    #[test]
    fn graph_overlay_draws_each_edge_once() {
        let img = ImageTensor::constant(8, 8, 1, 0.5);
        let kps = vec![
            Keypoint { x: 1.0, y: 1.0, scale: 1.0, orientation: 0.0, response: 0.1 },
            Keypoint { x: 6.0, y: 6.0, scale: 1.0, orientation: 0.0, response: 0.1 },
        ];
        let edges = vec![(0u32, 1u32), (1, 0)];
        let svg = graph_overlay(&img, &kps, &edges, 5, true);
        assert_eq!(svg.matches("class=\"edge\"").count(), edges.len() / 2);
        assert!(svg.contains("(default)"));
    }

    #[test]
    fn plot_ticks_equal_grid_values() {
        let grid = [0.001, 0.01, 0.1];
        let report = EvalReport {
            rows: vec![
                EvalRow { epsilon: 0.0, variant: "fused".into(), accuracy: 0.9 },
                EvalRow { epsilon: 0.001, variant: "fused".into(), accuracy: 0.8 },
                EvalRow { epsilon: 0.01, variant: "fused".into(), accuracy: 0.6 },
                EvalRow { epsilon: 0.1, variant: "fused".into(), accuracy: 0.2 },
            ],
            dataset: "shapes".into(),
            backbone: "vit".into(),
            seed: 1,
            steps: 10,
            random_start: true,
        };
        let svg = sweep_plot(&report, &grid);
        assert_eq!(svg.matches("class=\"xtick\"").count(), grid.len());
        for eps in grid {
            assert!(svg.contains(&format!(">{eps:.4}<")), "missing tick {eps}");
        }
        assert_eq!(svg.matches("class=\"series\"").count(), 1);
    }
}
