//! Minimal standalone SVG charts: learning curves with confidence bands and grouped bars.

use std::fmt::Write;

use super::CurveStats;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.x0) / (self.x1 - self.x0).max(f64::MIN_POSITIVE) * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.y0) / (self.y1 - self.y0).max(f64::MIN_POSITIVE) * (H - 2.0 * PAD)
    }
}

fn header(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"##,
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
    );
    for k in 0..=4 {
        let fx = frame.x0 + (frame.x1 - frame.x0) * k as f64 / 4.0;
        let fy = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text><text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            frame.x(fx),
            H - PAD + 16.0,
            tick(fx),
            PAD - 4.0,
            frame.y(fy) + 4.0,
            tick(fy)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}", v)
    } else if v.abs() >= 10.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.2}", v)
    }
}

/// Mean lines with shaded `±1.96·se` bands, one per curve.
pub fn line_plot(title: &str, y_label: &str, curves: &[&CurveStats]) -> String {
    let mut xs = curves.iter().flat_map(|c| c.steps.iter().copied());
    let first = xs.next().unwrap_or(0.0);
    let (x0, x1) = xs.fold((first, first), |(a, b), v| (a.min(v), b.max(v)));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in curves {
        for t in 0..c.steps.len() {
            let (l, h) = c.ci(t).unwrap_or((c.mean[t], c.mean[t]));
            lo = lo.min(l);
            hi = hi.max(h);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let frame = Frame { x0, x1, y0: lo, y1: hi };
    let mut out = String::new();
    header(&mut out, title, &frame, "env steps", y_label);
    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if c.se.iter().all(Option::is_some) && !c.steps.is_empty() {
            let upper: Vec<String> = (0..c.steps.len())
                .map(|t| format!("{:.1},{:.1}", frame.x(c.steps[t]), frame.y(c.ci(t).expect("se").1)))
                .collect();
            let lower: Vec<String> = (0..c.steps.len())
                .rev()
                .map(|t| format!("{:.1},{:.1}", frame.x(c.steps[t]), frame.y(c.ci(t).expect("se").0)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" ")
            );
        }
        let pts: Vec<String> = (0..c.steps.len())
            .map(|t| format!("{:.1},{:.1}", frame.x(c.steps[t]), frame.y(c.mean[t])))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 140.0,
            PAD + 16.0 * k as f64,
            escape(&c.task_id)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars with error whiskers. `groups` holds `(group label, [(bar label, value, error)])`.
pub fn bar_plot(title: &str, y_label: &str, groups: &[(String, Vec<(String, f64, f64)>)]) -> String {
    let vals = groups.iter().flat_map(|g| g.1.iter());
    let (mut lo, mut hi) = vals.fold((0.0f64, 0.0f64), |(a, b), (_, v, e)| (a.min(v - e), b.max(v + e)));
    if hi <= lo {
        hi = lo + 1.0;
    }
    let margin = 0.05 * (hi - lo);
    lo -= if lo < 0.0 { margin } else { 0.0 };
    hi += margin;
    let frame = Frame {
        x0: 0.0,
        x1: groups.len().max(1) as f64,
        y0: lo,
        y1: hi,
    };
    let mut out = String::new();
    header(&mut out, title, &frame, "", y_label);
    let _ = writeln!(
        out,
        r##"<line x1="{PAD}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
        frame.y(0.0),
        W - PAD,
        frame.y(0.0)
    );
    for (g, (label, bars)) in groups.iter().enumerate() {
        let slot = (frame.x(g as f64 + 1.0) - frame.x(g as f64)) * 0.8;
        let bw = slot / bars.len().max(1) as f64;
        let left = frame.x(g as f64) + 0.1 * slot / 0.8;
        for (b, (name, v, e)) in bars.iter().enumerate() {
            let color = COLORS[b % COLORS.len()];
            let x = left + b as f64 * bw;
            let (top, bottom) = (frame.y(v.max(0.0)), frame.y(v.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{color}"><title>{}: {v:.3}</title></rect>"#,
                bw * 0.9,
                (bottom - top).max(0.5),
                escape(name)
            );
            let cx = x + bw * 0.45;
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                frame.y(v - e),
                frame.y(v + e)
            );
            if g == 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                    W - PAD - 140.0,
                    PAD + 16.0 * b as f64,
                    escape(name)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            frame.x(g as f64 + 0.5),
            H - PAD + 30.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
