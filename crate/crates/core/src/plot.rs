//! Static SVG line plots. Output depends only on the data, so files can be
//! compared byte for byte.

use std::fmt::Write as _;

use crate::analysis::{SweepTable, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::simulator::Trace;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 140.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
/// Series longer than this are thinned by taking every n-th point.
const MAX_POINTS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ErrorVsT,
    LogErrorVsT,
    SweepLogLog,
    LoopWVsU,
}

impl PlotKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "error_vs_t" => Ok(Self::ErrorVsT),
            "log_error_vs_t" => Ok(Self::LogErrorVsT),
            "sweep_loglog" => Ok(Self::SweepLogLog),
            "loop_w_vs_u" => Ok(Self::LoopWVsU),
            other => Err(Error::InvalidArgument(format!("unknown plot kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Axes whose data are already base-10 logarithms; ticks read `1e{k}`.
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn axis_range(values: impl Iterator<Item = f64>, log: bool) -> (f64, f64, f64) {
    let (mut lo, mut hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        (lo, hi) = (lo - pad, hi + pad);
    }
    let step = if log { nice_step(hi - lo).max(1.0).round() } else { nice_step(hi - lo) };
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.round() as i64)
    } else {
        let s = format!("{v:.6}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.into() }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn to_svg(&self) -> String {
        let (x0, x1, xs) = axis_range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), self.x_log);
        let (y0, y1, ys) = axis_range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), self.y_log);
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| MARGIN_TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, MARGIN_LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
        );

        let ticks = |lo: f64, hi: f64, step: f64| {
            let n = ((hi - lo) / step).round() as i64;
            (0..=n).map(move |k| lo + k as f64 * step)
        };
        for x in ticks(x0, x1, xs) {
            let _ = writeln!(s, r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#333"/>"##, px(x), MARGIN_TOP + ph, MARGIN_TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(x), MARGIN_TOP + ph + 19.0, tick_label(x, self.x_log));
        }
        for y in ticks(y0, y1, ys) {
            let _ = writeln!(s, r##"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="#333"/>"##, MARGIN_LEFT - 5.0, py(y), MARGIN_LEFT);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN_LEFT - 8.0, py(y) + 4.0, tick_label(y, self.y_log));
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MARGIN_LEFT + pw / 2.0, HEIGHT - 15.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="20" y="{0:.2}" text-anchor="middle" transform="rotate(-90 20 {0:.2})">{1}</text>"#,
            MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<&(f64, f64)> = series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            if !pts.is_empty() {
                let every = pts.len().div_ceil(MAX_POINTS).max(1);
                let mut d = String::new();
                for (k, p) in pts.iter().enumerate().filter(|(k, _)| k % every == 0 || *k == pts.len() - 1) {
                    let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, px(p.0), py(p.1));
                }
                let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
            }
            let ly = MARGIN_TOP + 16.0 + 18.0 * i as f64;
            let lx = WIDTH - MARGIN_RIGHT + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Plot of one or more traces. `SweepLogLog` needs a table; see [`sweep_plot`].
pub fn trace_plot(traces: &[(String, &Trace)], kind: PlotKind) -> Result<Plot> {
    let (title, x_label, y_label, y_log) = match kind {
        PlotKind::ErrorVsT => ("Control error", "t [s]", "e", false),
        PlotKind::LogErrorVsT => ("Logarithmic convergence", "t [s]", "|e|", true),
        PlotKind::LoopWVsU => ("Hysteresis loop", "u", "w = H(u)", false),
        PlotKind::SweepLogLog => {
            return Err(Error::InvalidArgument("sweep_loglog needs sweep table columns, not a trace".into()));
        }
    };
    let series = traces
        .iter()
        .map(|(label, tr)| {
            let points = match kind {
                PlotKind::ErrorVsT => tr.t.iter().copied().zip(tr.e.iter().copied()).collect(),
                PlotKind::LogErrorVsT => {
                    tr.t.iter().zip(&tr.e).filter(|(_, e)| e.abs() > LOG_FLOOR).map(|(&t, e)| (t, e.abs().log10())).collect()
                }
                _ => tr.u.iter().copied().zip(tr.w.iter().copied()).collect(),
            };
            Series { label: label.clone(), points }
        })
        .collect();
    Ok(Plot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), x_log: false, y_log, series })
}

/// Steady-state error against the frequency label, one line per gain, log-log.
pub fn sweep_plot(table: &SweepTable) -> Plot {
    let series = table
        .gains()
        .into_iter()
        .map(|k| Series {
            label: format!("K = {k}"),
            points: table
                .for_gain(k)
                .into_iter()
                .filter(|r| r.max_abs_e > 0.0 && r.max_abs_e.is_finite())
                .map(|r| (r.freq_label().log10(), r.max_abs_e.log10()))
                .collect(),
        })
        .collect();
    Plot {
        title: "Steady-state error vs frequency".into(),
        x_label: "frequency [Hz]".into(),
        y_label: "max |e|".into(),
        x_log: true,
        y_log: true,
        series,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::SweepRow;
    use crate::simulator::TraceMeta;

    fn trace(points: &[(f64, f64, f64)]) -> Trace {
        let mut tr = Trace::new(TraceMeta { gain: 1.0, dt: 1.0, record_stride: 1, ..Default::default() });
        for &(t, u, w) in points {
            tr.t.push(t);
            tr.u.push(u);
            tr.w.push(w);
            tr.r.push(1.0);
            tr.e.push(1.0 - w);
        }
        tr
    }

    #[test]
    fn empty_trace_has_axes_only() {
        let tr = trace(&[]);
        let svg = trace_plot(&[("K = 10".into(), &tr)], PlotKind::ErrorVsT).unwrap().to_svg();
        assert!(!svg.contains("<path"));
        assert!(svg.contains("<line"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn loop_is_a_single_polyline() {
        let pts: Vec<(f64, f64, f64)> = (0..40).map(|k| {
            let u = if k < 20 { k as f64 * 0.1 } else { (40 - k) as f64 * 0.1 };
            (k as f64, u, u.min(1.5))
        }).collect();
        let svg = trace_plot(&[("loop".into(), &trace(&pts))], PlotKind::LoopWVsU).unwrap().to_svg();
        assert_eq!(svg.matches("<path").count(), 1);
    }

    #[test]
    fn sweep_plot_has_one_line_per_gain() {
        let rows = [10.0, 50.0]
            .iter()
            .flat_map(|&k| (0..4).map(move |i| SweepRow {
                omega: 10f64.powi(i) * 0.01,
                gain: k,
                max_abs_e: 0.01 * (i + 1) as f64 / k,
                periods_discarded: 1,
                error: None,
            }))
            .collect();
        let svg = sweep_plot(&SweepTable { rows }).to_svg();
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains("K = 10") && svg.contains("K = 50"));
        assert_eq!(svg.matches(" L").count(), 6);
    }

    #[test]
    fn trace_cannot_make_sweep_plot() {
        assert!(trace_plot(&[], PlotKind::SweepLogLog).is_err());
        assert!(PlotKind::parse("bogus").is_err());
        assert_eq!(PlotKind::parse("loop_w_vs_u").unwrap(), PlotKind::LoopWVsU);
    }

    #[test]
    fn output_is_deterministic() {
        let tr = trace(&[(0.0, 0.0, 0.0), (1.0, 1.0, 0.5), (2.0, 0.0, 0.5)]);
        let a = trace_plot(&[("a".into(), &tr)], PlotKind::LogErrorVsT).unwrap().to_svg();
        let b = trace_plot(&[("a".into(), &tr)], PlotKind::LogErrorVsT).unwrap().to_svg();
        assert_eq!(a, b);
    }
}
