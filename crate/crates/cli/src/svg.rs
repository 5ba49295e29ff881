//! Static, self-contained SVG figures. All coordinates are printed with fixed
//! precision so identical inputs give identical bytes.

use std::fmt::Write;

use asv_core::InteractionMatrix;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" {FONT} font-size=\"14\">{}</text>",
        width / 2.0,
        escape(title)
    );
}

/// Nearest-rank 99th percentile of |x| over finite values.
pub fn clip_level(values: &[f64]) -> f64 {
    let mut abs: Vec<f64> = values.iter().filter(|v| v.is_finite()).map(|v| v.abs()).collect();
    if abs.is_empty() {
        return 1.0;
    }
    abs.sort_by(f64::total_cmp);
    let rank = ((0.99 * abs.len() as f64).ceil() as usize).clamp(1, abs.len());
    let c = abs[rank - 1];
    if c > 0.0 {
        c
    } else {
        1.0
    }
}

/// Blue for negative, white at zero, red for positive; `t` in [-1, 1].
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (end, s) = if t < 0.0 { ([59.0, 76.0, 192.0], -t) } else { ([180.0, 4.0, 38.0], t) };
    let c: Vec<u8> = end.iter().map(|&e| (255.0 + (e - 255.0) * s).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Pairwise matrix heatmap; values are expected in percent of σ²(T).
pub fn heatmap(matrix: &InteractionMatrix, title: &str) -> String {
    let k = matrix.labels.len();
    let clip = clip_level(&matrix.pair_values());
    let cell = if k <= 20 { 24.0 } else if k <= 60 { 12.0 } else { 6.0 };
    let show_labels = k <= 60;
    let margin = if show_labels { 110.0 } else { 20.0 };
    let grid = cell * k as f64;
    let width = margin + grid + 90.0;
    let height = 30.0 + margin + grid + 20.0;
    let (x0, y0) = (margin, 30.0 + margin);

    let mut out = String::new();
    header(&mut out, width, height, title);
    let _ = writeln!(out, "<metadata>diverging scale clipped at {clip:.6} percent</metadata>");
    for (i, row) in matrix.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let fill = if i == j {
                "#ffffff".to_string()
            } else if v.is_finite() {
                diverging(v / clip)
            } else {
                "#d9d9d9".to_string()
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{fill}\"><title>{} / {}: {:.4}</title></rect>",
                x0 + j as f64 * cell,
                y0 + i as f64 * cell,
                escape(&matrix.labels[i]),
                escape(&matrix.labels[j]),
                v
            );
        }
    }
    if show_labels {
        for (i, l) in matrix.labels.iter().enumerate() {
            let c = (i as f64 + 0.5) * cell;
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\" {FONT}>{}</text>",
                x0 - 4.0,
                y0 + c,
                escape(l)
            );
            let _ = writeln!(
                out,
                "<text transform=\"translate({:.1},{:.1}) rotate(-60)\" {FONT}>{}</text>",
                x0 + c,
                y0 - 4.0,
                escape(l)
            );
        }
    }
    // Legend.
    let lx = x0 + grid + 20.0;
    let steps = 20;
    let lh = (grid.max(100.0)) / steps as f64;
    for s in 0..steps {
        let t = 1.0 - 2.0 * (s as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{lx:.1}\" y=\"{:.1}\" width=\"14\" height=\"{lh:.2}\" fill=\"{}\"/>",
            y0 + s as f64 * lh,
            diverging(t)
        );
    }
    for (t, y) in [(clip, y0), (0.0, y0 + lh * steps as f64 / 2.0), (-clip, y0 + lh * steps as f64)] {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{y:.1}\" dominant-baseline=\"middle\" {FONT}>{t:.2}%</text>",
            lx + 18.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram with `bins` uniform bins over the observed range.
pub fn histogram(values: &[f64], bins: usize, title: &str, x_label: &str) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if finite.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if hi <= lo {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width_bin = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let b = (((v - lo) / width_bin) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1);

    let (w, h) = (640.0, 360.0);
    let (x0, y0, pw, ph) = (60.0, 40.0, 550.0, 260.0);
    let mut out = String::new();
    header(&mut out, w, h, title);
    let _ = writeln!(
        out,
        "<metadata>{bins} uniform bins over [{lo:.6}, {hi:.6}], {} values</metadata>",
        finite.len()
    );
    let bw = pw / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        let bh = ph * c as f64 / max as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"#4c72b0\" stroke=\"white\" stroke-width=\"0.5\"><title>{c}</title></rect>",
            x0 + i as f64 * bw,
            y0 + ph - bh,
            bw
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        y0 + ph,
        x0 + pw,
        y0 + ph
    );
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{:.1}\" stroke=\"black\"/>", y0 + ph);
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{v:.2}</text>",
            x0 + pw * t as f64 / 4.0,
            y0 + ph + 16.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{x0}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{max}</text>",
        y0 + 4.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
        x0 + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    out.push_str("</svg>\n");
    out
}

/// Horizontal bars, one per label, in percent.
pub fn bar_chart(items: &[(String, f64)], title: &str) -> String {
    let row = 22.0;
    let (x0, pw) = (150.0, 400.0);
    let y0 = 40.0;
    let h = y0 + row * items.len() as f64 + 40.0;
    let extent = items.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max).max(1e-12);
    let zero = x0 + pw / 2.0;
    let scale = pw / 2.0 / extent;

    let mut out = String::new();
    header(&mut out, x0 + pw + 80.0, h, title);
    for (i, (label, v)) in items.iter().enumerate() {
        let y = y0 + i as f64 * row;
        let len = v.abs() * scale;
        let x = if *v < 0.0 { zero - len } else { zero };
        let fill = if *v < 0.0 { "#3b4cc0" } else { "#b40426" };
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{len:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
            y + 3.0,
            row - 6.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\" {FONT}>{}</text>",
            x0 - 6.0,
            y + row / 2.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" dominant-baseline=\"middle\" {FONT}>{v:.2}%</text>",
            x0 + pw + 6.0,
            y + row / 2.0
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{zero:.1}\" y1=\"{:.1}\" x2=\"{zero:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        y0,
        y0 + row * items.len() as f64
    );
    out.push_str("</svg>\n");
    out
}
