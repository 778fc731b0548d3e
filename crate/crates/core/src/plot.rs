//! Minimal SVG line plots of the records written to CSV.

use std::fmt::Write;

use crate::analysis::{ResourcePoint, ScanRecord};
use crate::csv_io::format_number;
use crate::observables::ObservableSeries;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

impl Scale {
    fn map(self, v: f64) -> f64 {
        match self {
            Scale::Linear => v,
            Scale::Log => v.log10(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `series` as polylines with a legend and min/max tick labels.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_scale: Scale,
    y_scale: Scale,
    series: &[Series],
) -> String {
    let usable = |&(x, y): &(f64, f64)| {
        let ok = |v: f64, s: Scale| v.is_finite() && (s == Scale::Linear || v > 0.0);
        ok(x, x_scale) && ok(y, y_scale)
    };
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| usable(p));
    let bounds = |f: fn(&(f64, f64)) -> f64, scale: Scale| {
        let (lo, hi) = pts()
            .map(|p| scale.map(f(p)))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bounds(|p| p.0, x_scale);
    let (y0, y1) = bounds(|p| p.1, y_scale);
    let px = |x: f64| MARGIN + (x_scale.map(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y_scale.map(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let unmap = |v: f64, s: Scale| match s {
        Scale::Linear => v,
        Scale::Log => 10f64.powf(v),
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for (v, anchor, x) in [(x0, "start", l), (x1, "end", r)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="{anchor}">{}</text>"#,
            b + 16.0,
            format_number(unmap(v, x_scale))
        );
    }
    for (v, y) in [(y0, b), (y1, t + 10.0)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            l - 4.0,
            format_number(unmap(v, y_scale))
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|p| usable(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = t + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            r - 150.0,
            r - 130.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            r - 125.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Final fidelity against duration, one line per parameter value.
pub fn scan_plot(title: &str, records: &[ScanRecord]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in records {
        let label = format!("{}={}", r.parameter, format_number(r.value));
        let key = if r.parameter == crate::analysis::ScanParameter::Duration {
            "F_fin".to_string()
        } else {
            label
        };
        match series.iter_mut().find(|s| s.label == key) {
            Some(s) => s.points.push((r.duration, r.final_fidelity)),
            None => series.push(Series {
                label: key,
                points: vec![(r.duration, r.final_fidelity)],
            }),
        }
    }
    line_plot(title, "T", "final fidelity", Scale::Linear, Scale::Linear, &series)
}

/// Minimum duration against coupling, log-log, one line per protocol.
pub fn resource_plot(title: &str, points: &[ResourcePoint]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for p in points {
        let key = format!("{} ({})", p.protocol_label, p.axis.as_str());
        let pt = (p.coupling_axis_value, p.min_duration);
        match series.iter_mut().find(|s| s.label == key) {
            Some(s) => s.points.push(pt),
            None => series.push(Series {
                label: key,
                points: vec![pt],
            }),
        }
    }
    line_plot(title, "coupling", "T", Scale::Log, Scale::Log, &series)
}

pub fn series_plot(title: &str, series: &[&ObservableSeries]) -> String {
    let lines: Vec<Series> = series
        .iter()
        .map(|s| Series {
            label: s.kind.as_str().to_string(),
            points: s.taus.iter().copied().zip(s.values.iter().copied()).collect(),
        })
        .collect();
    line_plot(title, "tau", "probability", Scale::Linear, Scale::Linear, &lines)
}
