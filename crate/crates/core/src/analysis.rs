//! Post-processing of simulated traces: error bounds, equilibria, decay
//! rates, steady-state errors and frequency sweeps.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::curves::Preimage;
use crate::error::{Error, Result};
use crate::kp_model::KpModel;
use crate::signals::{frequency_label, SignalSpec};
use crate::simulator::{find_periodic, period_grid, record_periods, Integrator, SimConfig, Trace};

/// `|e|` values at or below this are dropped before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-14;
/// Fraction of a trace treated as its tail by [`omega_limit_check`].
pub const TAIL_FRACTION: f64 = 0.1;

/// `R_inf + H_max`, the a priori bound on `|e|`.
pub fn error_bound(r_inf: f64, h_max: f64) -> Result<f64> {
    if !(r_inf > 0.0 && r_inf < h_max) || !h_max.is_finite() {
        return Err(Error::InvalidArgument(format!("error bound needs 0 < R_inf < H_max, got R_inf = {r_inf}, H_max = {h_max}")));
    }
    Ok(r_inf + h_max)
}

/// Equilibria of `du/dt = K (R - H(u))` on the aggregate envelopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPair {
    pub level: f64,
    /// Largest `u` with `Γ_l(u) = R`.
    pub u1: Option<Preimage>,
    /// Smallest `u` with `Γ_r(u) = R`.
    pub u2: Option<Preimage>,
}

impl EquilibriumPair {
    pub fn u1(&self) -> Option<f64> {
        self.u1.map(|p| p.x)
    }

    pub fn u2(&self) -> Option<f64> {
        self.u2.map(|p| p.x)
    }
}

pub fn equilibria(model: &KpModel, level: f64) -> EquilibriumPair {
    let (gamma_l, gamma_r) = model.aggregate_envelopes();
    EquilibriumPair { level, u1: gamma_l.preimage_max(level), u2: gamma_r.preimage_min(level) }
}

/// Least-squares fit of `ln|e|` against `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// Slope in 1/s, negative for decay.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub samples: usize,
}

pub fn convergence_rate(trace: &Trace, window: (f64, f64)) -> Result<RateFit> {
    let (a, b) = window;
    if trace.is_empty() {
        return Err(Error::Estimation("empty trace".into()));
    }
    let (first, last) = (trace.t[0], trace.t[trace.len() - 1]);
    if !(a < b) || a < first || b > last {
        return Err(Error::Estimation(format!("window [{a}, {b}] not inside trace span [{first}, {last}]")));
    }
    let (ts, ys): (Vec<f64>, Vec<f64>) = trace
        .t
        .iter()
        .zip(&trace.e)
        .filter(|(&t, &e)| t >= a && t <= b && e.abs() > LOG_FLOOR)
        .map(|(&t, &e)| (t, e.abs().ln()))
        .unzip();
    if ts.len() < 3 {
        return Err(Error::Estimation(format!("only {} samples above the 1e-14 floor in [{a}, {b}]", ts.len())));
    }
    let n = ts.len() as f64;
    let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in ts.iter().zip(&ys) {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    if stt == 0.0 {
        return Err(Error::Estimation("window holds a single time value".into()));
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Ok(RateFit { slope, intercept: my - slope * mt, r_squared, samples: ts.len() })
}

/// Span from the last time `|e|` is above `upper` to the first later time it
/// drops below `lower`, the usual window for [`convergence_rate`].
pub fn decay_window(trace: &Trace, upper: f64, lower: f64) -> Result<(f64, f64)> {
    let start = trace
        .e
        .iter()
        .rposition(|e| e.abs() > upper)
        .ok_or_else(|| Error::Estimation(format!("|e| never exceeds {upper}")))?;
    let end = (start..trace.len())
        .find(|&i| trace.e[i].abs() < lower)
        .ok_or_else(|| Error::Estimation(format!("|e| never drops below {lower}")))?;
    Ok((trace.t[start + 1], trace.t[end]))
}

/// Number of recorded rows per period, checking the period is a whole number of rows.
fn rows_per_period(trace: &Trace, period: f64) -> Result<usize> {
    let spacing = trace.row_spacing();
    if !(period > 0.0) || !(spacing > 0.0) {
        return Err(Error::InvalidArgument("period and row spacing must be positive".into()));
    }
    let rows = (period / spacing).round();
    if rows < 1.0 || ((rows * spacing - period) / period).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("period {period} is not a whole number of rows of spacing {spacing}")));
    }
    Ok(rows as usize)
}

/// Max `|e|` over the final `n_periods` periods, after checking that `u`
/// repeats itself from one period to the next within `tol` there.
pub fn steady_state_max_error(trace: &Trace, period: f64, n_periods: usize, tol: f64) -> Result<f64> {
    let p = rows_per_period(trace, period)?;
    let span = n_periods.max(1) * p;
    if trace.len() < span + p + 1 {
        return Err(Error::InvalidArgument(format!(
            "trace of {} rows is shorter than {} periods of {p} rows",
            trace.len(),
            n_periods + 1
        )));
    }
    let start = trace.len() - 1 - span;
    let residual = (start..trace.len()).fold(0.0, |m: f64, i| m.max((trace.u[i] - trace.u[i - p]).abs()));
    if residual > tol {
        return Err(Error::NotSteady { residual, tolerance: tol });
    }
    Ok(trace.e[start..].iter().fold(0.0, |m, e| m.max(e.abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitClass {
    ConvergedToU1,
    ConvergedToU2,
    Between,
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaLimitReport {
    pub class: LimitClass,
    pub tail_mean: f64,
    /// `max u - min u` over the tail.
    pub tail_variation: f64,
}

/// Classifies where `u` settles relative to the equilibrium pair.
///
/// The tail is the last tenth of the trace's time span.
pub fn omega_limit_check(trace: &Trace, eq: &EquilibriumPair, tol: f64) -> OmegaLimitReport {
    if trace.len() < 2 {
        return OmegaLimitReport { class: LimitClass::NotConverged, tail_mean: f64::NAN, tail_variation: f64::NAN };
    }
    let (first, last) = (trace.t[0], trace.t[trace.len() - 1]);
    let cut = last - TAIL_FRACTION * (last - first);
    let start = trace.t.partition_point(|&t| t < cut).min(trace.len() - 2);
    let tail = &trace.u[start..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &u| (a.min(u), b.max(u)));
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let variation = hi - lo;
    let near = |x: Option<f64>| x.is_some_and(|x| (mean - x).abs() <= tol);
    let class = if variation > tol {
        LimitClass::NotConverged
    } else if near(eq.u1()) {
        LimitClass::ConvergedToU1
    } else if near(eq.u2()) {
        LimitClass::ConvergedToU2
    } else if mean >= eq.u1().unwrap_or(f64::NEG_INFINITY) - tol && mean <= eq.u2().unwrap_or(f64::INFINITY) + tol {
        LimitClass::Between
    } else {
        LimitClass::NotConverged
    };
    OmegaLimitReport { class, tail_mean: mean, tail_variation: variation }
}

/// Steady-state detection rule for sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyRule {
    /// Period-to-period sup-difference of `u` allowed, relative to `|A0| + |A|`.
    pub rel_tol: f64,
    /// Cap on transient periods discarded.
    pub max_periods: usize,
    /// Periods the steady error is measured over.
    pub eval_periods: usize,
}

impl Default for SteadyRule {
    fn default() -> Self {
        Self { rel_tol: 1e-6, max_periods: 50, eval_periods: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub omega: f64,
    pub gain: f64,
    /// NaN when the cell failed.
    pub max_abs_e: f64,
    pub periods_discarded: usize,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn freq_label(&self) -> f64 {
        frequency_label(self.omega)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn gains(&self) -> Vec<f64> {
        let mut ks: Vec<f64> = self.rows.iter().map(|r| r.gain).collect();
        ks.sort_by(f64::total_cmp);
        ks.dedup();
        ks
    }

    /// Rows for one gain, in increasing `omega`.
    pub fn for_gain(&self, gain: f64) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.gain == gain).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "omega_rad_s,freq_label_hz,K,max_abs_e,periods_discarded")?;
        for r in &self.rows {
            writeln!(out, "{:?},{:?},{:?},{:?},{}", r.omega, r.freq_label(), r.gain, r.max_abs_e, r.periods_discarded)?;
        }
        out.flush()
    }
}

fn sweep_cell(base: &SimConfig, omega: f64, gain: f64, rule: SteadyRule) -> Result<(f64, usize)> {
    let SignalSpec::Sinusoid { offset, amplitude, phase, .. } = base.signal else {
        return Err(Error::InvalidArgument("frequency sweep needs a sinusoidal base signal".into()));
    };
    let config = SimConfig { gain, signal: SignalSpec::Sinusoid { offset, amplitude, omega, phase }, ..base.clone() };
    let tol = rule.rel_tol * (offset.abs() + amplitude.abs());
    let period = config.signal.period().expect("sinusoid is periodic");
    let found = find_periodic(&config, tol, rule.max_periods)?;
    // the periodic orbit is re-recorded at a modest density for the sup check
    let stride = (found.trace.len() / 20_000).max(1);
    let trace = record_periods(&config, &found.model, found.u_star, period, rule.eval_periods as u64 + 1, stride)?;
    steady_state_max_error(&trace, period, rule.eval_periods, tol)?;
    // the sup itself is taken over every step, not just the recorded rows
    let (steps, dt) = period_grid(period, config.dt, 1);
    let mut integrator = Integrator::new(&config, found.model, found.u_star, 0.0)?.with_dt(dt);
    let mut max_e: f64 = 0.0;
    for _ in 0..steps * rule.eval_periods.max(1) as u64 {
        max_e = max_e.max(integrator.step()?.e.abs());
    }
    Ok((max_e, found.iterations))
}

/// Steady-state max `|e|` for every `(omega, K)` cell, run concurrently.
pub fn frequency_sweep(base: &SimConfig, omegas: &[f64], gains: &[f64], rule: SteadyRule) -> Result<SweepTable> {
    if !matches!(base.signal, SignalSpec::Sinusoid { .. }) {
        return Err(Error::InvalidArgument("frequency sweep needs a sinusoidal base signal".into()));
    }
    let mut cells: Vec<(f64, f64)> = omegas.iter().flat_map(|&w| gains.iter().map(move |&k| (w, k))).collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let rows = cells
        .par_iter()
        .map(|&(omega, gain)| match sweep_cell(base, omega, gain, rule) {
            Ok((max_abs_e, periods_discarded)) => SweepRow { omega, gain, max_abs_e, periods_discarded, error: None },
            Err(e) => {
                let periods = if let Error::NonConvergence { iterations, .. } = e { iterations } else { 0 };
                SweepRow { omega, gain, max_abs_e: f64::NAN, periods_discarded: periods, error: Some(e.to_string()) }
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kp_model::{make_saturated_play, PlayElement};
    use crate::simulator::{simulate, TraceMeta};
    use approx::assert_relative_eq;

    fn clamp_play(rho: f64) -> KpModel {
        let p = make_saturated_play(rho, 0.0, 4.0, 1.0).unwrap();
        KpModel::new(vec![PlayElement::new(1.0, p).unwrap()], 0.0).unwrap()
    }

    fn synthetic(ts: impl Iterator<Item = f64>, e: impl Fn(f64) -> f64, dt: f64) -> Trace {
        let mut tr = Trace::new(TraceMeta { gain: 1.0, dt, record_stride: 1, ..Default::default() });
        for t in ts {
            tr.t.push(t);
            tr.r.push(0.0);
            tr.u.push(0.0);
            tr.w.push(-e(t));
            tr.e.push(e(t));
        }
        tr
    }

    #[test]
    fn error_bound_examples() {
        assert_eq!(error_bound(2.0, 4.0).unwrap(), 6.0);
        assert_eq!(error_bound(0.1, 4.0).unwrap(), 4.1);
        assert!(error_bound(4.0, 4.0).is_err());
        assert!(error_bound(0.0, 4.0).is_err());
    }

    #[test]
    fn equilibria_of_single_clamped_play() {
        let eq = equilibria(&clamp_play(1.0), 2.0);
        assert_eq!(eq.u1(), Some(1.0));
        assert_eq!(eq.u2(), Some(3.0));
    }

    #[test]
    fn equilibria_boundary_and_outside() {
        let eq = equilibria(&clamp_play(1.0), 0.0);
        assert!(eq.u1.unwrap().unbounded || eq.u2.unwrap().unbounded);
        let eq = equilibria(&clamp_play(1.0), 5.0);
        assert_eq!((eq.u1, eq.u2), (None, None));
    }

    #[test]
    fn equilibria_of_default_triple() {
        let model = KpModel::default_triple();
        let eq = equilibria(&model, 2.0);
        // Γ_r = 3u - 2.25 on [1.25, 1.75]; Γ_l(u) = 2 first reached at u = 0
        assert_relative_eq!(eq.u2().unwrap(), 4.25 / 3.0, epsilon = 1e-12);
        let (gl, gr) = model.aggregate_envelopes();
        assert_relative_eq!(gl.eval(eq.u1().unwrap()), 2.0, epsilon = 1e-9);
        assert_relative_eq!(gr.eval(eq.u2().unwrap()), 2.0, epsilon = 1e-9);
        assert!(eq.u1().unwrap() <= eq.u2().unwrap());
    }

    #[test]
    fn rate_of_exact_exponential() {
        let dt = 1e-3;
        let tr = synthetic((0..2000).map(|k| k as f64 * dt), |t| 0.7 * (-3.5 * t).exp(), dt);
        let fit = convergence_rate(&tr, (0.1, 1.9)).unwrap();
        assert_relative_eq!(fit.slope, -3.5, max_relative = 1e-6);
        assert!(fit.r_squared > 0.999999);
    }

    #[test]
    fn rate_estimation_failures() {
        let dt = 1e-3;
        let zero = synthetic((0..100).map(|k| k as f64 * dt), |_| 0.0, dt);
        assert!(matches!(convergence_rate(&zero, (0.0, 0.05)), Err(Error::Estimation(_))));
        assert!(matches!(convergence_rate(&zero, (-1.0, 0.05)), Err(Error::Estimation(_))));
        assert!(matches!(convergence_rate(&zero, (0.05, 0.01)), Err(Error::Estimation(_))));
    }

    #[test]
    fn single_branch_rate_is_minus_k() {
        // unit-slope branch: e' = -K e once u rides gamma_r
        for k in [10.0, 50.0] {
            let sig = SignalSpec::Table { points: vec![[0.0, 2.0]] };
            let config = SimConfig::new(clamp_play(1.0), sig, k, 4.0).with_dt(1e-5).with_u0(1.5);
            let trace = simulate(&config).unwrap();
            let window = decay_window(&trace, 1e-2, 1e-9).unwrap();
            let fit = convergence_rate(&trace, window).unwrap();
            assert_relative_eq!(fit.slope, -k, max_relative = 2e-3);
        }
    }

    #[test]
    fn steady_state_of_constant_input() {
        let sig = SignalSpec::Sinusoid { offset: 2.0, amplitude: 0.0, omega: 1.0, phase: 0.0 };
        let config = SimConfig::new(clamp_play(1.0), sig, 20.0, 1.0).with_dt(1e-3).with_u0(2.0);
        let period = config.signal.period().unwrap();
        let model = config.initial_model(2.0).unwrap();
        let mut trace = record_periods(&config, &model, 2.0, period, 4, 1).unwrap();
        let e = steady_state_max_error(&trace, period, 2, 1e-9).unwrap();
        assert!(e <= 1e-12);
        // a drift in u is reported as not steady
        let n = trace.len();
        trace.u[n - 1] += 1e-3;
        assert!(matches!(steady_state_max_error(&trace, period, 2, 1e-9), Err(Error::NotSteady { .. })));
        assert!(steady_state_max_error(&trace, period, 10, 1e-9).is_err());
    }

    #[test]
    fn omega_limit_side_depends_on_approach() {
        let model = clamp_play(1.0);
        let eq = equilibria(&model, 2.0);
        let sig = SignalSpec::Table { points: vec![[0.0, 2.0]] };
        let rising = SimConfig::new(model.clone(), sig.clone(), 10.0, 5.0).with_dt(1e-4).with_u0(-1.0);
        let report = omega_limit_check(&simulate(&rising).unwrap(), &eq, 1e-4);
        assert_eq!(report.class, LimitClass::ConvergedToU2);
        let falling = SimConfig::new(model, sig, 10.0, 5.0).with_dt(1e-4).with_u0(5.0);
        let report = omega_limit_check(&simulate(&falling).unwrap(), &eq, 1e-4);
        assert_eq!(report.class, LimitClass::ConvergedToU1);
    }

    #[test]
    fn omega_limit_ignores_stride() {
        let model = KpModel::default_triple();
        let eq = equilibria(&model, 2.0);
        let classes: Vec<_> = [1, 7, 100]
            .iter()
            .map(|&s| {
                let c = SimConfig::new(model.clone(), SignalSpec::step_case(), 10.0, 3.0).with_dt(1e-4).with_stride(s);
                omega_limit_check(&simulate(&c).unwrap(), &eq, 1e-4).class
            })
            .collect();
        assert!(classes.iter().all(|c| *c == classes[0]));
    }

    #[test]
    fn omega_limit_moving_tail() {
        let dt = 1e-3;
        let mut tr = synthetic((0..1000).map(|k| k as f64 * dt), |_| 0.1, dt);
        tr.u = tr.t.iter().map(|t| t.sin()).collect();
        let eq = equilibria(&clamp_play(1.0), 2.0);
        assert_eq!(omega_limit_check(&tr, &eq, 1e-4).class, LimitClass::NotConverged);
    }

    #[test]
    fn small_sweep_has_one_row_per_cell() {
        let base = SimConfig::new(KpModel::default_triple(), SignalSpec::periodic_case(1.0), 10.0, 1.0).with_dt(1e-3);
        let omegas = [1.0 / (2.0 * std::f64::consts::PI), 10.0 / (2.0 * std::f64::consts::PI)];
        let table = frequency_sweep(&base, &omegas, &[50.0, 10.0], SteadyRule::default()).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.gains(), vec![10.0, 50.0]);
        assert!(table.rows.iter().all(|r| r.error.is_none()));
        assert_eq!(table.rows[0].gain, 10.0);
        assert!(table.rows[0].omega < table.rows[2].omega);
        for k in table.gains() {
            let rows = table.for_gain(k);
            assert!(rows[0].max_abs_e <= rows[1].max_abs_e);
        }
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn sweep_rejects_non_sinusoid() {
        let base = SimConfig::new(KpModel::default_triple(), SignalSpec::step_case(), 10.0, 1.0);
        assert!(frequency_sweep(&base, &[1.0], &[10.0], SteadyRule::default()).is_err());
    }
}
