//! Minimal SVG output for density fields and loss logs. Output depends only
//! on the input data, so repeated renders are byte-identical.

use std::fmt::Write;

use crate::solver::Field;
use crate::training::EpochRecord;
use crate::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

// Viridis sampled at five points.
const STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];

/// Linear color scale on `[0, 1]`.
pub fn color(x: f64) -> String {
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let k = STOPS.iter().position(|s| s.0 >= x).unwrap_or(STOPS.len() - 1).max(1);
    let ((x0, c0), (x1, c1)) = (STOPS[k - 1], STOPS[k]);
    let w = (x - x0) / (x1 - x0);
    let mix = |j: usize| (c0[j] as f64 + w * (c1[j] as f64 - c0[j] as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(0), mix(1), mix(2))
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, x_label: &str, y_label: &str, x_ticks: &[(f64, String)], y_ticks: &[(f64, String)]) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0} {y1}V{y0}H{x1}" fill="none" stroke="black"/>"#
    );
    for (x, label) in x_ticks {
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#,
            y0 + 5.0,
            y0 + 18.0
        );
    }
    for (y, label) in y_ticks {
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn linear_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
}

fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Age-time heatmap: age on the horizontal axis, year on the vertical.
pub fn field_svg(field: &Field, title: &str) -> Result<String> {
    let vals = field.values();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("field to plot"));
    }
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    let scale = |v: f64| if range > 0.0 { (v - lo) / range } else { 0.0 };

    let grid = field.grid();
    let d = *field.domain();
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let (cw, ch) = (pw / grid.na as f64, ph / grid.nt as f64);
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r#"<g shape-rendering="crispEdges">"#);
    for n in 0..grid.nt {
        let y = TOP + ph - (n + 1) as f64 * ch;
        for i in 0..grid.na {
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                LEFT + i as f64 * cw,
                cw + 0.01,
                ch + 0.01,
                color(scale(field.get(i, n)))
            );
        }
    }
    let _ = writeln!(out, "</g>");

    let x_ticks: Vec<_> = linear_ticks(0.0, d.a0, 6)
        .into_iter()
        .map(|a| (LEFT + pw * a / d.a0, short(a)))
        .collect();
    let y_ticks: Vec<_> = linear_ticks(d.t_min, d.t_max, 4)
        .into_iter()
        .map(|t| (TOP + ph - ph * (t - d.t_min) / d.span(), short(t)))
        .collect();
    axes(&mut out, "Age (years)", "Year", &x_ticks, &y_ticks);

    let bar_x = WIDTH - RIGHT + 20.0;
    let steps = 50;
    for k in 0..steps {
        let v = k as f64 / (steps - 1) as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{bar_x}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            TOP + ph - (k + 1) as f64 * ph / steps as f64,
            ph / steps as f64 + 0.01,
            color(v)
        );
    }
    for (v, y) in [(lo, TOP + ph), (hi, TOP)] {
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}">{}</text>"#, bar_x + 20.0, y + 4.0, short(v));
    }
    let _ = writeln!(
        out,
        r#"<text transform="translate({} {:.2}) rotate(-90)" text-anchor="middle">Density</text>"#,
        WIDTH - 12.0,
        TOP + ph / 2.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

const SERIES: [(&str, &str); 4] = [
    ("total", "#000000"),
    ("pde", "#d62728"),
    ("ic", "#1f77b4"),
    ("bc", "#2ca02c"),
];

/// Log-scale loss curves: total and the three components.
pub fn loss_svg(records: &[EpochRecord], title: &str) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no loss records to plot".into()));
    }
    let series: Vec<Vec<(f64, f64)>> = (0..4)
        .map(|k| {
            records
                .iter()
                .map(|r| (r.epoch as f64, [r.total, r.pde, r.ic, r.bc][k]))
                .collect()
        })
        .collect();
    let positive = series.iter().flatten().map(|p| p.1).filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo_exp, hi_exp) = if lo.is_finite() {
        let (a, b) = (lo.log10().floor(), hi.log10().ceil());
        (a, if b > a { b } else { a + 1.0 })
    } else {
        (-1.0, 0.0)
    };
    let floor = 10f64.powf(lo_exp);
    let (e0, e1) = (records[0].epoch as f64, records[records.len() - 1].epoch as f64);
    let e_span = if e1 > e0 { e1 - e0 } else { 1.0 };
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |e: f64| LEFT + pw * (e - e0) / e_span;
    let py = |v: f64| {
        let v = if v > 0.0 && v.is_finite() { v } else { floor };
        TOP + ph - ph * (v.log10() - lo_exp) / (hi_exp - lo_exp)
    };

    let mut out = String::new();
    header(&mut out, title);
    for (k, (name, stroke)) in SERIES.iter().enumerate() {
        let mut points = String::new();
        for &(e, v) in &series[k] {
            let _ = write!(points, "{:.2},{:.2} ", px(e), py(v));
        }
        let _ = writeln!(
            out,
            r#"<polyline data-series="{name}" fill="none" stroke="{stroke}" stroke-width="1.2" points="{}"/>"#,
            points.trim_end()
        );
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{stroke}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0
        );
    }
    let x_ticks: Vec<_> = linear_ticks(e0, e0 + e_span, 5)
        .into_iter()
        .map(|e| (px(e), format!("{}", e.round())))
        .collect();
    let y_ticks: Vec<_> = (lo_exp as i32..=hi_exp as i32)
        .map(|p| (py(10f64.powi(p)), format!("1e{p}")))
        .collect();
    axes(&mut out, "Epoch", "Loss (log scale)", &x_ticks, &y_ticks);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::Domain;
    use crate::solver::GridSpec;

    fn fills(svg: &str) -> std::collections::BTreeSet<&str> {
        svg.lines()
            .filter(|l| l.starts_with("<rect x=") && !l.contains(r#"width="16""#))
            .filter_map(|l| l.split("fill=\"").nth(1).map(|s| &s[..7]))
            .collect()
    }

    #[test]
    fn constant_field_is_one_color() {
        let f = Field::from_fn(Domain::default(), GridSpec::new(6, 4).unwrap(), |_, _| 2.5);
        let svg = field_svg(&f, "constant").unwrap();
        assert_eq!(fills(&svg).len(), 1);
        assert!(svg.contains("Age (years)") && svg.contains("Year"));
    }

    #[test]
    fn varying_field_uses_the_scale_ends() {
        let f = Field::from_fn(Domain::default(), GridSpec::new(6, 4).unwrap(), |a, _| a);
        let svg = field_svg(&f, "ramp").unwrap();
        let f = fills(&svg);
        assert!(f.contains(color(0.0).as_str()) && f.contains(color(1.0).as_str()));
        assert_eq!(svg.matches("<rect x=").count(), 24 + 50);
    }

    #[test]
    fn color_scale_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(-3.0), color(0.0));
        assert_eq!(color(f64::NAN), color(0.0));
    }

    #[test]
    fn loss_chart_has_four_polylines() {
        let records: Vec<_> = (1..=20)
            .map(|e| {
                let x = 1.0 / e as f64;
                EpochRecord { epoch: e, total: 3.0 * x, pde: x, ic: x * x, bc: 0.0 }
            })
            .collect();
        let svg = loss_svg(&records, "loss").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg, loss_svg(&records, "loss").unwrap());
        assert!(loss_svg(&[], "loss").is_err());
    }

    #[test]
    fn non_finite_field_is_rejected() {
        let f = Field::from_fn(Domain::default(), GridSpec::new(3, 3).unwrap(), |_, _| f64::NAN);
        assert!(field_svg(&f, "nan").is_err());
    }
}
