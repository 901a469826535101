//! Forward Euler integration of the compensation loop
//!
//! ```text
//! du/dt = K (r(t) - H(u))
//! ```
//!
//! Each step evaluates the hysteresis at the current `u_k` and then advances
//! `u_{k+1} = u_k + dt K (r(t_k) - H(u_k))`.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::kp_model::{InitialMemory, KpModel};
use crate::signals::SignalSpec;

/// Step size used when none is configured.
pub const DEFAULT_DT: f64 = 1e-6;
/// Recorded rows are kept below this count when the stride is chosen automatically.
pub const MAX_DEFAULT_ROWS: usize = 1_000_000;
/// `|u|` beyond this multiple of the model's equilibrium scale aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub gain: f64,
    pub dt: f64,
    pub t_end: f64,
    pub u0: f64,
    pub memory: InitialMemory,
    /// Template model; runs clone it before initializing.
    pub model: KpModel,
    pub signal: SignalSpec,
    /// Record every `record_stride`-th step; `None` picks a stride that keeps
    /// the trace under [`MAX_DEFAULT_ROWS`] rows.
    pub record_stride: Option<usize>,
}

impl SimConfig {
    pub fn new(model: KpModel, signal: SignalSpec, gain: f64, t_end: f64) -> Self {
        Self {
            gain,
            dt: DEFAULT_DT,
            t_end,
            u0: 0.0,
            memory: InitialMemory::Virgin,
            model,
            signal,
            record_stride: None,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_u0(mut self, u0: f64) -> Self {
        self.u0 = u0;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = Some(stride);
        self
    }

    pub fn with_memory(mut self, memory: InitialMemory) -> Self {
        self.memory = memory;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return Err(Error::InvalidArgument(format!("gain K must be positive, got {}", self.gain)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidArgument(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !self.u0.is_finite() {
            return Err(Error::InvalidArgument(format!("u0 must be finite, got {}", self.u0)));
        }
        if self.record_stride == Some(0) {
            return Err(Error::InvalidArgument("record_stride must be >= 1".into()));
        }
        if let InitialMemory::Explicit(ws) = &self.memory {
            if ws.len() != self.model.elements().len() {
                return Err(Error::InvalidArgument(format!(
                    "expected {} initial memories, got {}",
                    self.model.elements().len(),
                    ws.len()
                )));
            }
        }
        self.signal.validate()
    }

    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt).round().max(1.0) as u64
    }

    pub fn stride(&self) -> usize {
        self.record_stride
            .unwrap_or_else(|| (self.steps() as usize + 1).div_ceil(MAX_DEFAULT_ROWS).max(1))
    }

    /// Fresh model initialized at `u0`.
    pub fn initial_model(&self, u0: f64) -> Result<KpModel> {
        let mut model = self.model.clone();
        model.init_with(u0, &self.memory)?;
        Ok(model)
    }

    fn divergence_limit(&self) -> f64 {
        let (l, r) = self.model.aggregate_envelopes();
        let scale = l
            .breakpoints()
            .iter()
            .chain(r.breakpoints())
            .fold(self.u0.abs().max(1.0), |m, x| m.max(x.abs()));
        DIVERGENCE_FACTOR * scale
    }
}

/// One evaluated step: `(t, r, u, w, e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub r: f64,
    pub u: f64,
    pub w: f64,
    pub e: f64,
}

/// Stepwise integrator owning its model state.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    signal: &'a SignalSpec,
    gain: f64,
    dt: f64,
    t0: f64,
    step: u64,
    u: f64,
    model: KpModel,
    limit: f64,
}

impl<'a> Integrator<'a> {
    /// Starts at `(t0, u)` with an initialized `model`.
    pub fn new(config: &'a SimConfig, model: KpModel, u: f64, t0: f64) -> Result<Self> {
        if !model.is_initialized() {
            return Err(Error::Uninitialized);
        }
        Ok(Self {
            signal: &config.signal,
            gain: config.gain,
            dt: config.dt,
            t0,
            step: 0,
            u,
            limit: config.divergence_limit(),
            model,
        })
    }

    /// Overrides the step size (used to fit a whole number of steps into a period).
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn model(&self) -> &KpModel {
        &self.model
    }

    pub fn into_state(self) -> (f64, KpModel) {
        (self.u, self.model)
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.step as f64 * self.dt
    }

    /// Evaluates the loop at the current state without advancing `u`.
    #[inline]
    pub fn sample(&mut self) -> Result<Sample> {
        let t = self.time();
        let w = self.model.h_update(self.u)?;
        let r = self.signal.value(t);
        Ok(Sample { t, r, u: self.u, w, e: r - w })
    }

    /// Euler update from an already evaluated sample.
    #[inline]
    pub fn advance(&mut self, sample: &Sample) -> Result<()> {
        let next = self.u + self.dt * self.gain * sample.e;
        self.step += 1;
        if !next.is_finite() || next.abs() > self.limit {
            return Err(Error::Divergence { step: self.step, value: next });
        }
        self.u = next;
        Ok(())
    }

    #[inline]
    pub fn step(&mut self) -> Result<Sample> {
        let s = self.sample()?;
        self.advance(&s)?;
        Ok(s)
    }

    /// Runs `steps` Euler steps, recording every `stride`-th sample including
    /// both end points when they fall on the stride.
    pub fn run(&mut self, steps: u64, stride: usize, trace: &mut Trace) -> Result<()> {
        let stride = stride as u64;
        for k in 0..=steps {
            let s = self.sample()?;
            if k % stride == 0 {
                trace.push(&s);
            }
            if k < steps {
                self.advance(&s)?;
            }
        }
        Ok(())
    }
}

/// Column-oriented record of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub e: Vec<f64>,
    pub meta: TraceMeta,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMeta {
    pub gain: f64,
    /// Integration step actually used.
    pub dt: f64,
    pub record_stride: usize,
    /// `|P(u) - u|` at the last fixed-point iteration, for periodic traces.
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Self { meta, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Spacing between recorded rows.
    pub fn row_spacing(&self) -> f64 {
        self.meta.dt * self.meta.record_stride as f64
    }

    pub fn push(&mut self, s: &Sample) {
        self.t.push(s.t);
        self.r.push(s.r);
        self.u.push(s.u);
        self.w.push(s.w);
        self.e.push(s.e);
    }

    pub fn max_abs_error(&self) -> f64 {
        self.e.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// CSV with header `t,r,u,w,e`; values use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,r,u,w,e")?;
        for i in 0..self.len() {
            writeln!(out, "{:?},{:?},{:?},{:?},{:?}", self.t[i], self.r[i], self.u[i], self.w[i], self.e[i])?;
        }
        out.flush()
    }
}

/// Integrates `config` from `t = 0` to `t_end`.
pub fn simulate(config: &SimConfig) -> Result<Trace> {
    simulate_with_state(config).map(|(trace, _, _)| trace)
}

/// Like [`simulate`], also returning the final `u` and model for chaining.
pub fn simulate_with_state(config: &SimConfig) -> Result<(Trace, f64, KpModel)> {
    config.validate()?;
    let model = config.initial_model(config.u0)?;
    let stride = config.stride();
    let mut trace = Trace::new(TraceMeta { gain: config.gain, dt: config.dt, record_stride: stride, ..Default::default() });
    let mut integrator = Integrator::new(config, model, config.u0, 0.0)?;
    integrator.run(config.steps(), stride, &mut trace)?;
    let (u, model) = integrator.into_state();
    Ok((trace, u, model))
}

/// Steps per period and the adjusted step size: the period is split into a
/// whole number of steps, itself a multiple of `stride`, no coarser than `dt`.
pub fn period_grid(period: f64, dt: f64, stride: usize) -> (u64, f64) {
    let stride = stride as u64;
    let raw = (period / dt * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    let steps = raw.div_ceil(stride) * stride;
    (steps, period / steps as f64)
}

fn require_period(config: &SimConfig, period: f64) -> Result<()> {
    let Some(own) = config.signal.period() else {
        return Err(Error::InvalidArgument("Poincare map needs a periodic signal".into()));
    };
    if ((period - own) / own).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("period {period} does not match the signal period {own}")));
    }
    Ok(())
}

/// One period of the loop starting at phase zero from `(u_start, model)`.
///
/// Returns `u(T)` and the evolved hysteresis state.
pub fn poincare_map(config: &SimConfig, model: KpModel, u_start: f64, period: f64) -> Result<(f64, KpModel)> {
    config.validate()?;
    require_period(config, period)?;
    let (steps, dt) = period_grid(period, config.dt, 1);
    let mut integrator = Integrator::new(config, model, u_start, 0.0)?.with_dt(dt);
    for _ in 0..steps {
        integrator.step()?;
    }
    Ok(integrator.into_state())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSolution {
    /// Fixed point of the Poincare map.
    pub u_star: f64,
    /// Hysteresis state at the start of the periodic orbit.
    pub model: KpModel,
    pub residual: f64,
    pub iterations: usize,
    /// One steady-state period, both end points included.
    pub trace: Trace,
}

/// Iterates the Poincare map (carrying the hysteresis memory along) until
/// `|P(u) - u| < tol`, then records one period of the orbit.
pub fn find_periodic(config: &SimConfig, tol: f64, max_iter: usize) -> Result<PeriodicSolution> {
    config.validate()?;
    let period = config
        .signal
        .period()
        .ok_or_else(|| Error::InvalidArgument("periodic search needs a periodic signal".into()))?;
    let mut model = config.initial_model(config.u0)?;
    let mut u = config.u0;
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let (next, evolved) = poincare_map(config, model, u, period)?;
        residual = (next - u).abs();
        u = next;
        model = evolved;
        if residual < tol {
            let trace = record_periods(config, &model, u, period, 1, config.record_stride.unwrap_or(1))?;
            let mut trace = trace;
            trace.meta.residual = Some(residual);
            trace.meta.iterations = Some(iteration);
            return Ok(PeriodicSolution { u_star: u, model, residual, iterations: iteration, trace });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual })
}

/// Records `periods` whole periods from phase zero on the period grid.
pub fn record_periods(
    config: &SimConfig,
    model: &KpModel,
    u_start: f64,
    period: f64,
    periods: u64,
    stride: usize,
) -> Result<Trace> {
    require_period(config, period)?;
    let (steps, dt) = period_grid(period, config.dt, stride);
    let mut trace = Trace::new(TraceMeta { gain: config.gain, dt, record_stride: stride, ..Default::default() });
    let mut integrator = Integrator::new(config, model.clone(), u_start, 0.0)?.with_dt(dt);
    integrator.run(steps * periods, stride, &mut trace)?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kp_model::{make_saturated_play, PlayElement};
    use approx::assert_relative_eq;

    fn constant(level: f64) -> SignalSpec {
        SignalSpec::Table { points: vec![[0.0, level]] }
    }

    fn single_play(rho: f64) -> KpModel {
        let p = make_saturated_play(rho, 0.0, 4.0, 1.0).unwrap();
        KpModel::new(vec![PlayElement::new(1.0, p).unwrap()], 0.0).unwrap()
    }

    #[test]
    fn first_euler_step() {
        let config = SimConfig::new(KpModel::default_triple(), constant(2.0), 10.0, 1e-6).with_stride(1);
        let trace = simulate(&config).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace.u[0], 0.0);
        assert_eq!(trace.w[0], 0.0);
        assert_eq!(trace.e[0], 2.0);
        assert_relative_eq!(trace.u[1], 2e-5, epsilon = 1e-20);
    }

    #[test]
    fn interior_equilibrium_is_stationary() {
        // virgin memories at u0 = 1 give H = 0.75 + 0.25 = 1.0
        let config = SimConfig::new(KpModel::default_triple(), constant(1.0), 50.0, 0.5).with_dt(1e-4).with_u0(1.0);
        let trace = simulate(&config).unwrap();
        assert!(trace.u.iter().all(|&u| u == 1.0));
        assert!(trace.e.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn rows_are_uniform_and_consistent() {
        let config = SimConfig::new(KpModel::default_triple(), SignalSpec::step_case(), 10.0, 0.2).with_dt(1e-5).with_stride(7);
        let trace = simulate(&config).unwrap();
        assert_eq!(trace.len(), 20_000 / 7 + 1);
        for i in 0..trace.len() {
            assert_eq!(trace.e[i], trace.r[i] - trace.w[i]);
            assert_relative_eq!(trace.t[i], i as f64 * 7e-5, epsilon = 1e-12);
        }
    }

    #[test]
    fn automatic_stride_caps_rows() {
        let config = SimConfig::new(KpModel::default_triple(), constant(1.0), 10.0, 3.0);
        assert_eq!(config.stride(), 4);
        assert!(config.steps() as usize / config.stride() < MAX_DEFAULT_ROWS);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SimConfig::new(KpModel::default_triple(), constant(1.0), 10.0, 1.0);
        assert!(simulate(&SimConfig { gain: 0.0, ..base.clone() }).is_err());
        assert!(simulate(&SimConfig { dt: -1.0, ..base.clone() }).is_err());
        assert!(simulate(&SimConfig { t_end: 0.0, ..base.clone() }).is_err());
        assert!(simulate(&base.clone().with_stride(0)).is_err());
        assert!(simulate(&base.with_memory(InitialMemory::Explicit(vec![0.0]))).is_err());
    }

    #[test]
    fn negative_gain_is_caught_as_divergence() {
        let p = make_saturated_play(0.5, f64::NEG_INFINITY, f64::INFINITY, 1.0).unwrap();
        let model = KpModel::new(vec![PlayElement::new(1.0, p).unwrap()], 0.0).unwrap();
        let config = SimConfig::new(model, constant(1.0), 10.0, 100.0).with_dt(1e-2);
        config.validate().unwrap();
        // bypass validation to exercise the runtime guard
        let model = config.initial_model(0.0).unwrap();
        let mut integrator = Integrator::new(&config, model, 0.0, 0.0).unwrap();
        integrator.gain = -10.0;
        let err = (0..100_000).try_for_each(|_| integrator.step().map(|_| ())).unwrap_err();
        assert!(matches!(err, Error::Divergence { step, .. } if step > 1));
    }

    #[test]
    fn constant_input_converges_on_the_rising_branch() {
        // single play, rho = 1: rising approach ends on gamma_r(u) = u - 1 = 2
        let config = SimConfig::new(single_play(1.0), constant(2.0), 20.0, 2.0).with_dt(1e-4);
        let trace = simulate(&config).unwrap();
        assert_relative_eq!(*trace.u.last().unwrap(), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn halving_dt_barely_moves_the_endpoint() {
        let run = |dt: f64| {
            let c = SimConfig::new(KpModel::default_triple(), SignalSpec::hill_gauss_case(), 10.0, 1.0).with_dt(dt);
            *simulate(&c).unwrap().u.last().unwrap()
        };
        let (coarse, fine, finer) = (run(2e-5), run(1e-5), run(5e-6));
        assert!((coarse - fine).abs() < 1e-4);
        // first order: the gap roughly halves
        let ratio = (coarse - fine).abs() / (fine - finer).abs();
        assert!(ratio > 1.5 && ratio < 2.5, "ratio {ratio}");
    }

    #[test]
    fn period_grid_is_whole() {
        let (steps, dt) = period_grid(39.47841760435743, 1e-4, 10);
        assert_eq!(steps % 10, 0);
        assert!(dt <= 1e-4);
        assert_relative_eq!(steps as f64 * dt, 39.47841760435743, max_relative = 1e-14);
        assert_eq!(period_grid(1.0, 0.1, 1).0, 10);
    }

    #[test]
    fn poincare_requires_periodic_signal() {
        let config = SimConfig::new(KpModel::default_triple(), constant(1.0), 10.0, 1.0);
        let model = config.initial_model(0.0).unwrap();
        assert!(matches!(poincare_map(&config, model, 0.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_amplitude_fixed_point() {
        let signal = SignalSpec::Sinusoid { offset: 1.0, amplitude: 0.0, omega: 2.0, phase: 0.0 };
        let config = SimConfig::new(KpModel::default_triple(), signal, 10.0, 1.0).with_dt(1e-3).with_u0(1.0);
        let period = config.signal.period().unwrap();
        let model = config.initial_model(1.0).unwrap();
        let (u, _) = poincare_map(&config, model, 1.0, period).unwrap();
        assert_eq!(u, 1.0);

        let found = find_periodic(&config.clone().with_u0(0.2), 1e-9, 10).unwrap();
        assert!(found.iterations <= 2);
        assert!(found.residual < 1e-9);
    }

    #[test]
    fn poincare_map_does_not_expand() {
        let config = SimConfig::new(KpModel::default_triple(), SignalSpec::periodic_case(2.0), 10.0, 1.0).with_dt(1e-3);
        let period = config.signal.period().unwrap();
        for (a, b) in [(0.0, 0.3), (-1.0, 2.0), (1.2, 1.25)] {
            let (pa, _) = poincare_map(&config, config.initial_model(a).unwrap(), a, period).unwrap();
            let (pb, _) = poincare_map(&config, config.initial_model(b).unwrap(), b, period).unwrap();
            assert!((pa - pb).abs() <= (a - b).abs() + 1e-10);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let config = SimConfig::new(KpModel::default_triple(), SignalSpec::periodic_case(1.0), 1.0, 1.0).with_dt(1e-2).with_u0(3.0);
        assert!(matches!(find_periodic(&config, 0.0, 2), Err(Error::NonConvergence { iterations: 2, .. })));
    }

    #[test]
    fn csv_round_trips_values() {
        let config = SimConfig::new(KpModel::default_triple(), SignalSpec::step_case(), 10.0, 0.2).with_dt(1e-4).with_stride(50);
        let trace = simulate(&config).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,r,u,w,e"));
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(vals, vec![trace.t[i], trace.r[i], trace.u[i], trace.w[i], trace.e[i]]);
        }
    }
}
