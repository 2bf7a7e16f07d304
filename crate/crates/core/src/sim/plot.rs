//! Minimal SVG line charts of per-round metrics.

use std::fmt::Write;

use super::metrics::MetricsReport;

/// One named line on a panel; `None` values leave gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendSeries {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Stack one panel per `(title, series)` vertically.
pub fn trend_svg(panels: &[(String, Vec<TrendSeries>)]) -> String {
    let h = panels.len().max(1) as f64 * (PANEL_H + MARGIN) + MARGIN;
    let w = PANEL_W + 2.0 * MARGIN + 120.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (title, series)) in panels.iter().enumerate() {
        let top = MARGIN + i as f64 * (PANEL_H + MARGIN);
        panel(&mut s, MARGIN, top, title, series);
    }
    s.push_str("</svg>\n");
    s
}

fn panel(s: &mut String, left: f64, top: f64, title: &str, series: &[TrendSeries]) {
    let n = series
        .iter()
        .map(|t| t.values.len())
        .max()
        .unwrap_or(0)
        .max(2);
    let vals = series
        .iter()
        .flat_map(|t| t.values.iter().flatten().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0);
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let x = |k: usize| left + PANEL_W * k as f64 / (n - 1) as f64;
    let y = |v: f64| top + PANEL_H * (1.0 - (v - lo) / (hi - lo));

    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}" font-size="13">{}</text>"#,
        top - 8.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
    );
    for k in 0..n {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x(k),
            top + PANEL_H + 14.0,
            k + 1
        );
    }
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            y(v) + 4.0
        );
    }
    for (i, t) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for (k, v) in t.values.iter().enumerate() {
            match v.filter(|v| v.is_finite()) {
                Some(v) => {
                    let _ = write!(
                        d,
                        "{}{:.2},{:.2} ",
                        if pen_up { "M" } else { "L" },
                        x(k),
                        y(v)
                    );
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                        x(k),
                        y(v)
                    );
                    pen_up = false;
                }
                None => pen_up = true,
            }
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            left + PANEL_W + 10.0,
            escape(&t.label)
        );
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl TrendSeries {
    /// ADE, detour and minimum-distance panels for groups of reports (one
    /// group per predictor or run).
    pub fn standard_panels(
        groups: &[(String, Vec<MetricsReport>)],
    ) -> Vec<(String, Vec<TrendSeries>)> {
        let mut ade = Vec::new();
        let mut detour = Vec::new();
        let mut min_d = Vec::new();
        for (label, reports) in groups {
            let humans = reports.iter().map(|r| r.ade.len()).max().unwrap_or(0);
            for h in 0..humans {
                ade.push(TrendSeries {
                    label: format!("{label} human {}", h + 1),
                    values: reports.iter().map(|r| r.ade.get(h).copied()).collect(),
                });
            }
            if reports.iter().any(|r| r.ade_robot_by_human.is_some()) {
                ade.push(TrendSeries {
                    label: format!("{label} robot by human"),
                    values: reports.iter().map(|r| r.ade_robot_by_human).collect(),
                });
            }
            detour.push(TrendSeries {
                label: label.clone(),
                values: reports.iter().map(|r| Some(r.detour)).collect(),
            });
            min_d.push(TrendSeries {
                label: label.clone(),
                values: reports.iter().map(|r| Some(r.min_distance)).collect(),
            });
        }
        vec![
            ("ADE (m) per round".into(), ade),
            ("Detour (m) per round".into(), detour),
            ("Minimum distance (m) per round".into(), min_d),
        ]
    }
}
