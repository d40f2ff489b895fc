//! Minimal line and bar charts.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD / 2.0
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-6);
    (lo - 0.1 * span, hi + 0.1 * span)
}

/// Kappa against the fusion weight, with the chosen weight marked.
pub fn alpha_curve(points: &[(f64, f64)], chosen: f64) -> String {
    let mut s = header("Validation kappa vs fusion weight");
    let (lo, hi) = y_range(points.iter().map(|p| p.1));
    let x = |a: f64| PAD + a * (W - 1.5 * PAD);
    let y = |k: f64| H - PAD - (k - lo) / (hi - lo) * (H - 2.0 * PAD);
    let path: Vec<String> = points.iter().map(|(a, k)| format!("{:.2},{:.2}", x(*a), y(*k))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.join(" "));
    for (a, k) in points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, x(*a), y(*k));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{a:.1}</text>"#, x(*a), H - PAD + 16.0);
    }
    let _ = writeln!(
        s,
        r#"<line x1="{0:.2}" y1="{PAD}" x2="{0:.2}" y2="{1}" stroke="firebrick" stroke-dasharray="4 3"/>"#,
        x(chosen),
        H - PAD
    );
    for k in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{k:.3}</text>"#, PAD - 4.0, y(k) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">alpha</text>"#, W / 2.0, H - 12.0);
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per measure, one bar per model.
pub fn grouped_bars(title: &str, groups: &[&str], series: &[(String, Vec<f64>)]) -> String {
    let mut s = header(title);
    let max = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(0.0, f64::max).max(1e-9);
    let palette = ["steelblue", "darkorange", "seagreen", "firebrick", "slateblue", "goldenrod"];
    let group_w = (W - 1.5 * PAD) / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let gx = PAD + gi as f64 * group_w + 0.1 * group_w;
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(gi).copied().unwrap_or(0.0);
            let h = v / max * (H - 2.0 * PAD);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + si as f64 * bar_w,
                H - PAD - h,
                bar_w,
                h,
                palette[si % palette.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + 0.4 * group_w,
            H - PAD + 16.0,
            escape(g)
        );
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let y = PAD + 14.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - 170.0,
            y - 9.0,
            palette[si % palette.len()],
            W - 155.0,
            y,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
