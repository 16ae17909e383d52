//! A small log-log line plot writer.

use std::fmt::Write as _;

/// One named polyline of `(x, y)` points, both positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN: [f64; 4] = [70.0, 160.0, 30.0, 50.0];
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn decades(lo: f64, hi: f64) -> (f64, f64) {
    let a = lo.log10().floor();
    let mut b = hi.log10().ceil();
    if b <= a {
        b = a + 1.0;
    }
    (a, b)
}

/// Renders the series on log-log axes with decade ticks.
pub fn loglog_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0 > 0.0 && p.1 > 0.0);
    let (xl, xh) = pts().fold((f64::INFINITY, 0.0f64), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (yl, yh) = pts().fold((f64::INFINITY, 0.0f64), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let (xa, xb) = if xl.is_finite() { decades(xl, xh) } else { (0.0, 1.0) };
    let (ya, yb) = if yl.is_finite() { decades(yl, yh) } else { (0.0, 1.0) };
    let [ml, mr, mt, mb] = MARGIN;
    let pw = W - ml - mr;
    let ph = H - mt - mb;
    let sx = |x: f64| ml + (x.log10() - xa) / (xb - xa) * pw;
    let sy = |y: f64| mt + ph - (y.log10() - ya) / (yb - ya) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, ml + pw / 2.0, esc(title));
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in xa as i32..=xb as i32 {
        let x = ml + (k as f64 - xa) / (xb - xa) * pw;
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ccc"/>"##, mt, mt + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">1e{k}</text>"#, mt + ph + 16.0);
    }
    for k in ya as i32..=yb as i32 {
        let y = mt + ph - (k as f64 - ya) / (yb - ya) * ph;
        let _ = writeln!(s, r##"<line x1="{ml}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ccc"/>"##, ml + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">1e{k}</text>"#, ml - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, ml + pw / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        esc(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if ser.dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#, path.join(" "));
        if !ser.dashed {
            for p in &path {
                let (x, y) = p.split_once(',').unwrap();
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
            }
        }
        let ly = mt + 14.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, ml + pw + 10.0, ml + pw + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, ml + pw + 35.0, ly + 4.0, esc(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
