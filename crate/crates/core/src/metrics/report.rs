use std::fmt::Write as _;

use super::SweepRow;

pub const CSV_HEADER: &str = "rate,pck_mean,pck_std,infer_ms_mean,infer_ms_std,fps_infer,fps_total,params,flops,size_bytes";

pub(crate) fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.2},{:.6},{:.6},{:.4},{:.4},{:.3},{:.3},{},{},{}",
            r.rate,
            r.pck_mean,
            r.pck_std,
            r.infer_ms_mean,
            r.infer_ms_std,
            r.fps_infer,
            r.fps_total,
            r.params,
            r.flops,
            r.size_bytes
        );
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn polyline(out: &mut String, pts: &[(f64, f64)], colour: &str) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
        coords.join(" ")
    );
    for (x, y) in pts {
        let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="{colour}"/>"#);
    }
}

/// PCK and FPS (divided by the largest FPS in the sweep) against pruning
/// rate, both on a shared `[0, 1]` axis.
pub fn plot_svg(rows: &[SweepRow]) -> String {
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let max_fps = rows.iter().map(|r| r.fps_infer).fold(0.0, f64::max);
    let sx = |rate: f64| LEFT + rate * pw;
    let sy = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let (x, y) = (sx(v), sy(v));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            LEFT + pw
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, LEFT - 6.0, y + 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            i * 10
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">pruning rate (%)</text>"#,
        LEFT + pw / 2.0,
        H - 10.0
    );

    let pck: Vec<(f64, f64)> = rows.iter().map(|r| (sx(r.rate), sy(r.pck_mean))).collect();
    let fps: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (sx(r.rate), sy(if max_fps > 0.0 { r.fps_infer / max_fps } else { 0.0 })))
        .collect();
    polyline(&mut s, &pck, "#1f77b4");
    polyline(&mut s, &fps, "#ff7f0e");

    let lx = LEFT + pw + 15.0;
    for (i, (label, colour)) in [("PCK", "#1f77b4"), ("FPS / max FPS", "#ff7f0e")].iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, lx + 26.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rate: f64, pck: f64, fps: f64) -> SweepRow {
        SweepRow {
            rate,
            pck_mean: pck,
            pck_std: 0.0,
            infer_ms_mean: 1000.0 / fps,
            infer_ms_std: 0.0,
            fps_infer: fps,
            fps_total: fps,
            params: 10,
            flops: 20,
            size_bytes: 30,
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let csv = to_csv(&[row(0.0, 1.0, 10.0), row(0.7, 0.5, 40.0)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("0.00,1.000000,0.000000,100.0000,0.0000,10.000,10.000,10,20,30"));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn svg_has_two_series() {
        let svg = plot_svg(&[row(0.0, 1.0, 10.0), row(0.5, 0.8, 20.0)]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
