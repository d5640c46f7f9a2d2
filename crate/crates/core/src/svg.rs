//! Minimal SVG line plots for the analysis dashboard.

use std::fmt::Write as _;

use crate::pipeline::TheoremReport;

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One polyline with its legend label.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

/// A plot panel drawn at `(x0, y0)` with size `(w, h)`.
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn bounds(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * (1.0 + lo.abs()) * 1e-3;
        Some((lo - pad, hi + pad))
    } else {
        Some((lo, hi))
    }
}

impl Panel {
    fn render(&self, out: &mut String, x0: f64, y0: f64, w: f64, h: f64) {
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.log10() } else { v };
        let ok = |p: &(f64, f64)| (!self.log_x || p.0 > 0.0) && (!self.log_y || p.1 > 0.0);
        let pts = || {
            self.series
                .iter()
                .flat_map(|s| s.points.iter().filter(|p| ok(p)))
        };
        let (m_l, m_r, m_t, m_b) = (60.0, 20.0, 30.0, 40.0);
        let (pw, ph) = (w - m_l - m_r, h - m_t - m_b);
        writeln!(out, r#"<g transform="translate({x0},{y0})">"#).unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            w / 2.0,
            escape(&self.title)
        )
        .unwrap();
        writeln!(
            out,
            r#"<rect x="{m_l}" y="{m_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            m_l + pw / 2.0,
            h - 6.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
            m_t + ph / 2.0,
            m_t + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();
        let (Some((xl, xh)), Some((yl, yh))) = (
            bounds(pts().map(|p| tx(p.0))),
            bounds(pts().map(|p| ty(p.1))),
        ) else {
            writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">no data</text></g>"#,
                m_l + pw / 2.0,
                m_t + ph / 2.0
            )
            .unwrap();
            return;
        };
        let sx = |v: f64| m_l + (tx(v) - xl) / (xh - xl) * pw;
        let sy = |v: f64| m_t + ph - (ty(v) - yl) / (yh - yl) * ph;
        let tick = |v: f64, log: bool| {
            if log {
                format!("1e{v:.1}")
            } else {
                format!("{v:.3}")
            }
        };
        for (i, v) in [xl, xh].into_iter().enumerate() {
            let anchor = if i == 0 { "start" } else { "end" };
            writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="10">{}</text>"#,
                m_l + i as f64 * pw,
                m_t + ph + 14.0,
                tick(v, self.log_x)
            )
            .unwrap();
        }
        for (i, v) in [yl, yh].into_iter().enumerate() {
            writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
                m_l - 4.0,
                m_t + ph - i as f64 * ph + 4.0,
                tick(v, self.log_y)
            )
            .unwrap();
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let path: Vec<String> = s
                .points
                .iter()
                .filter(|p| ok(p))
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if s.dashed {
                r#" stroke-dasharray="5,3""#
            } else {
                ""
            };
            writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                path.join(" ")
            )
            .unwrap();
            let ly = m_t + 14.0 + 14.0 * i as f64;
            writeln!(
                out,
                r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
                m_l + 8.0,
                escape(&s.label)
            )
            .unwrap();
        }
        writeln!(out, "</g>").unwrap();
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Stacks panels vertically into one document.
pub fn render(panels: &[Panel], width: f64, panel_height: f64) -> String {
    let total = panel_height * panels.len() as f64;
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total}" viewBox="0 0 {width} {total}">"#).unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, 0.0, i as f64 * panel_height, width, panel_height);
    }
    out.push_str("</svg>\n");
    out
}

/// Front intercept against the fitted planes, and residual against `eta`.
pub fn dashboard(report: &TheoremReport) -> String {
    let mut front = Vec::new();
    if let Some(fit) = report.fits.first() {
        front.push(Series {
            label: "front b(t)".into(),
            points: fit
                .times
                .iter()
                .copied()
                .zip(fit.b.iter().copied())
                .collect(),
            dashed: false,
        });
    }
    for fit in &report.fits {
        front.push(Series {
            label: format!("fitted b~, eta = {}", fit.eta),
            points: fit
                .times
                .iter()
                .copied()
                .zip(fit.b_tilde.iter().copied())
                .collect(),
            dashed: true,
        });
    }
    let rows: Vec<(f64, f64)> = report
        .eta_rows
        .iter()
        .filter(|r| r.residual.is_finite())
        .map(|r| (r.eta, r.residual))
        .collect();
    let mut residual = vec![Series {
        label: "residual / eta^(1+beta)".into(),
        points: rows.clone(),
        dashed: false,
    }];
    if let (Some(lo), Some(hi)) = (
        rows.iter().map(|r| r.0).reduce(f64::min),
        rows.iter().map(|r| r.0).reduce(f64::max),
    ) {
        residual.push(Series {
            label: "pass line".into(),
            points: vec![(lo, 1.0), (hi, 1.0)],
            dashed: true,
        });
    }
    let panels = [
        Panel {
            title: "Front intercept and trapping planes".into(),
            x_label: "t".into(),
            y_label: "x_n".into(),
            log_x: false,
            log_y: false,
            series: front,
        },
        Panel {
            title: "Trapping residual".into(),
            x_label: "eta".into(),
            y_label: "residual".into(),
            log_x: true,
            log_y: true,
            series: residual,
        },
    ];
    render(&panels, 720.0, 360.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_filled_panels_render() {
        let empty = Panel {
            title: "a<b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: true,
            series: vec![],
        };
        let line = Panel {
            title: "line".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: false,
            log_y: false,
            series: vec![Series {
                label: "s".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
                dashed: false,
            }],
        };
        let svg = render(&[empty, line], 400.0, 200.0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b") && svg.contains("no data"));
        assert!(svg.contains("<polyline"));
        assert_eq!(svg.matches("<g ").count(), 2);
    }
}
