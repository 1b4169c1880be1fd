//! Static SVG rendering of a loss trace: best and mean total loss per
//! iteration as polylines on a framed plot. No external renderer, no
//! timestamps, fully deterministic output.

use std::fmt::Write;

use deceptforge_core::IterationStats;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 44.0;

fn polyline(points: &[(f64, f64)], style: &str) -> String {
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!("  <polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
}

/// Renders the trace as a standalone SVG document.
pub fn render_loss_svg(trace: &[IterationStats]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    out.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if trace.is_empty() {
        out.push_str("  <text x=\"20\" y=\"40\" font-family=\"monospace\">no data</text>\n");
        out.push_str("</svg>\n");
        return out;
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for stats in trace {
        for v in [stats.best_total, stats.mean_total] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(hi - lo).is_finite() || hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);

    let x_span = (trace.len().saturating_sub(1)).max(1) as f64;
    let x = |i: usize| LEFT + (i as f64 / x_span) * (WIDTH - LEFT - RIGHT);
    let y = |v: f64| TOP + (1.0 - (v - lo) / (hi - lo)) * (HEIGHT - TOP - BOTTOM);

    let _ = writeln!(
        out,
        "  <rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" \
         stroke=\"#444\"/>",
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );

    let best: Vec<(f64, f64)> =
        trace.iter().enumerate().map(|(i, s)| (x(i), y(s.best_total))).collect();
    let mean: Vec<(f64, f64)> =
        trace.iter().enumerate().map(|(i, s)| (x(i), y(s.mean_total))).collect();
    out.push_str(&polyline(&mean, "stroke=\"#999999\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\""));
    out.push_str(&polyline(&best, "stroke=\"#1f6feb\" stroke-width=\"2\""));

    let label = |out: &mut String, px: f64, py: f64, anchor: &str, text: String| {
        let _ = writeln!(
            out,
            "  <text x=\"{px:.2}\" y=\"{py:.2}\" font-family=\"monospace\" font-size=\"12\" \
             text-anchor=\"{anchor}\">{text}</text>"
        );
    };
    label(&mut out, LEFT - 6.0, y(hi - pad) + 4.0, "end", format!("{:.4}", hi - pad));
    label(&mut out, LEFT - 6.0, y(lo + pad) + 4.0, "end", format!("{:.4}", lo + pad));
    label(&mut out, LEFT, HEIGHT - BOTTOM + 16.0, "middle", "0".into());
    label(
        &mut out,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM + 16.0,
        "middle",
        format!("{}", trace.last().map(|s| s.iteration).unwrap_or(0)),
    );
    label(&mut out, WIDTH / 2.0, HEIGHT - 8.0, "middle", "iteration".into());
    label(&mut out, WIDTH - RIGHT - 8.0, TOP + 16.0, "end", "best total loss".into());
    label(&mut out, WIDTH - RIGHT - 8.0, TOP + 32.0, "end", "mean total loss (dashed)".into());

    out.push_str("</svg>\n");
    out
}
