//! Minimal SVG line plots with optional spread bands.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Per-point half-width of the shaded band; empty for none.
    pub spread: Vec<f64>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `series` on shared axes; `log_y` plots `log10(y)` and drops
/// nonpositive values.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let ty = |y: f64| if log_y { (y > 0.0).then(|| y.log10()) } else { Some(y) };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (k, &(x, y)) in s.points.iter().enumerate() {
            let band = s.spread.get(k).copied().unwrap_or(0.0);
            for v in [y - band, y, y + band] {
                if let Some(t) = ty(v).filter(|t| t.is_finite()) {
                    xs.push(x);
                    ys.push(t);
                }
            }
        }
    }
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let ylab = if log_y { format!("1e{fy:.1}") } else { format!("{fy:.3}") };
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.2}</text>"#, px(fx), b + 18.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#, l - 6.0, py(fy) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        // Raw (x, y, band) for points visible on this scale.
        let pts: Vec<(f64, f64, f64)> = s
            .points
            .iter()
            .enumerate()
            .filter(|(_, &(_, y))| ty(y).is_some())
            .map(|(i, &(x, y))| (x, y, s.spread.get(i).copied().unwrap_or(0.0)))
            .collect();
        if !s.spread.is_empty() && !pts.is_empty() {
            let at = |x: f64, v: f64| format!("{:.1},{:.1}", px(x), py(ty(v).unwrap_or(y0).max(y0)));
            let upper: Vec<String> = pts.iter().map(|&(x, y, b)| at(x, y + b)).collect();
            let lower: Vec<String> = pts.iter().rev().map(|&(x, y, b)| at(x, y - b)).collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" ")
            );
        }
        let line: Vec<String> = pts.iter().map(|&(x, y, _)| format!("{:.1},{:.1}", px(x), py(ty(y).unwrap_or(y0)))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = t + 16.0 * k as f64;
        let _ = writeln!(out, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, r - 150.0, r - 130.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, r - 125.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_each_series() {
        let s = vec![
            Series {
                label: "a <1>".into(),
                points: vec![(1.0, 0.5), (2.0, 0.1), (3.0, 0.01)],
                spread: vec![0.1, 0.05, 0.0],
            },
            Series {
                label: "b".into(),
                points: vec![(1.0, 0.0), (2.0, 0.2)],
                spread: Vec::new(),
            },
        ];
        let svg = line_plot("t", "x", "y", &s, true);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt;1&gt;"));
    }
}
