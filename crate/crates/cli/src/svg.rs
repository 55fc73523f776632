//! Minimal static SVG charts for metric reports.

use std::fmt::Write;

use dagtraj_core::MetricReport;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: [f64; 4] = [48.0, 24.0, 64.0, 64.0]; // top, right, bottom, left
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

type Series = (String, Vec<(f64, f64)>);

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round-ish upper bound for the y axis.
fn nice_max(v: f64) -> f64 {
    if v <= 0.0 || !v.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&m| m >= v)
        .unwrap_or(10.0 * mag)
}

struct Frame {
    x_range: (f64, f64),
    y_max: f64,
    out: String,
}

impl Frame {
    fn new(title: &str, y_label: &str, x_range: (f64, f64), y_max: f64) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let mut frame = Self { x_range, y_max, out };
        frame.axes(y_label);
        frame
    }

    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        MARGIN[3] + (x - lo) / span * (WIDTH - MARGIN[1] - MARGIN[3])
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN[2] - y / self.y_max * (HEIGHT - MARGIN[0] - MARGIN[2])
    }

    fn axes(&mut self, y_label: &str) {
        let (x0, x1, y0) = (MARGIN[3], WIDTH - MARGIN[1], HEIGHT - MARGIN[2]);
        for i in 0..=5 {
            let v = self.y_max * i as f64 / 5.0;
            let y = self.py(v);
            let _ = writeln!(
                self.out,
                r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#e0e0e0"/>"##
            );
            let _ = writeln!(
                self.out,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                y + 4.0,
                trim(v)
            );
        }
        let _ = writeln!(self.out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
        let _ = writeln!(
            self.out,
            r#"<line x1="{x0}" y1="{}" x2="{x0}" y2="{y0}" stroke="black"/>"#,
            MARGIN[0]
        );
        let _ = writeln!(
            self.out,
            r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            HEIGHT / 2.0,
            escape(y_label)
        );
    }

    fn legend(&mut self, labels: &[String]) {
        for (i, label) in labels.iter().enumerate() {
            let x = MARGIN[3] + 10.0 + 150.0 * i as f64;
            let y = HEIGHT - 18.0;
            let _ = writeln!(
                self.out,
                r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#,
                y - 10.0,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(self.out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(label));
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Grouped bars, one group per category and one bar per series.
fn bar_chart(title: &str, y_label: &str, categories: &[&str], series: &[(String, Vec<Option<f64>>)]) -> String {
    let max = series.iter().flat_map(|s| s.1.iter().flatten()).fold(0.0f64, |a, &b| a.max(b));
    let mut f = Frame::new(title, y_label, (0.0, categories.len() as f64), nice_max(max));
    let group = f.px(1.0) - f.px(0.0);
    let bar = group * 0.8 / series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let x0 = f.px(c as f64) + group * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            if let Some(v) = values[c] {
                let (top, base) = (f.py(v), f.py(0.0));
                let _ = writeln!(
                    f.out,
                    r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                    x0 + bar * s as f64,
                    bar * 0.95,
                    base - top,
                    PALETTE[s % PALETTE.len()],
                    escape(name)
                );
            }
        }
        let _ = writeln!(
            f.out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + group * 0.4,
            HEIGHT - MARGIN[2] + 16.0,
            escape(name)
        );
    }
    f.legend(&series.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    f.finish()
}

/// Points per series, joined by a polyline when `lines` is set.
fn xy_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], lines: bool) -> String {
    let xs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let max = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).fold(0.0f64, f64::max);
    let mut f = Frame::new(title, y_label, (lo, hi), nice_max(max));
    for i in 0..=4 {
        let x = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            f.out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            f.px(x),
            HEIGHT - MARGIN[2] + 16.0,
            trim(x)
        );
    }
    let _ = writeln!(
        f.out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - MARGIN[2] + 34.0,
        escape(x_label)
    );
    for (s, (_, points)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        if lines && points.len() > 1 {
            let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
            let _ = writeln!(
                f.out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in points {
            let _ = writeln!(
                f.out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#,
                f.px(x),
                f.py(y)
            );
        }
    }
    f.legend(&series.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    f.finish()
}

const DISTANCES: [&str; 4] = ["minFDE", "minADE", "iminFDE", "iminADE"];
const RATES: [&str; 4] = ["SMR", "SCR", "CrossCol", "CMR"];

fn pick(report: &MetricReport, names: &[&str]) -> Vec<Option<f64>> {
    let rows = report.rows();
    names.iter().map(|n| rows.iter().find(|r| r.0 == *n).and_then(|r| r.1)).collect()
}

/// `(file name, svg)` for every chart of the reports.
pub fn charts(reports: &[MetricReport]) -> Vec<(String, String)> {
    let bars = |names: &[&str]| -> Vec<(String, Vec<Option<f64>>)> { reports.iter().map(|r| (r.label.clone(), pick(r, names))).collect() };
    let per_scene: Vec<Series> = reports
        .iter()
        .map(|r| {
            (
                r.label.clone(),
                r.per_scene.iter().enumerate().map(|(i, s)| (i as f64, s.min_fde)).collect(),
            )
        })
        .collect();
    let filtered: Vec<Series> = reports
        .iter()
        .map(|r| {
            let values = [r.imin_fde, r.imin_fde_3, r.imin_fde_5];
            let points = [0.0, 3.0, 5.0].iter().zip(values).filter_map(|(&d, v)| v.map(|v| (d, v))).collect();
            (r.label.clone(), points)
        })
        .collect();
    vec![
        (
            "distances.svg".into(),
            bar_chart("Displacement errors", "meters", &DISTANCES, &bars(&DISTANCES)),
        ),
        (
            "rates.svg".into(),
            bar_chart("Miss and collision rates", "rate", &RATES, &bars(&RATES)),
        ),
        (
            "per_scene_minFDE.svg".into(),
            xy_chart("Per-scene minFDE", "scene", "meters", &per_scene, false),
        ),
        (
            "interactive_filters.svg".into(),
            xy_chart(
                "iminFDE by constant-velocity filter",
                "filter distance (m)",
                "meters",
                &filtered,
                true,
            ),
        ),
    ]
}
