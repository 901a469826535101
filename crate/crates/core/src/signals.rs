//! Reference inputs `r(t)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid step used when no closed-form Lipschitz bound is available.
pub const LIPSCHITZ_GRID_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    /// `level_before` for `t < t_on`, `level` afterwards.
    Step { t_on: f64, level_before: f64, level: f64 },
    /// Hill ramp towards `hill_level` plus a Gaussian-windowed sine burst:
    ///
    /// `a1 t^n / (h^n + t^n) + a2 / sqrt(2 pi sigma^2) exp(-(t - mu)^2 / (2 sigma^2)) sin(omega t)`
    HillGauss {
        hill_level: f64,
        hill_exponent: f64,
        hill_half: f64,
        burst_amplitude: f64,
        burst_width: f64,
        burst_center: f64,
        omega: f64,
    },
    /// `offset + amplitude * sin(omega t + phase)`, `omega` in rad/s.
    Sinusoid { offset: f64, amplitude: f64, omega: f64, phase: f64 },
    /// Linear interpolation through `(t, r)` points, held constant outside.
    Table { points: Vec<[f64; 2]> },
}

impl SignalSpec {
    /// Sinusoid with `A0 = 1.1`, `A = 1`, `phi = -pi/2`.
    pub fn periodic_case(omega: f64) -> Self {
        SignalSpec::Sinusoid { offset: 1.1, amplitude: 1.0, omega, phase: -PI / 2.0 }
    }

    /// Hill ramp to 2 with the decaying burst at 100 rad/s.
    pub fn hill_gauss_case() -> Self {
        SignalSpec::HillGauss {
            hill_level: 2.0,
            hill_exponent: 4.0,
            hill_half: 0.2,
            burst_amplitude: 0.1,
            burst_width: 0.1,
            burst_center: 0.3,
            omega: 100.0,
        }
    }

    /// Level 2 switched on at 0.1 s.
    pub fn step_case() -> Self {
        SignalSpec::Step { t_on: 0.1, level_before: 0.0, level: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("signal parameter {name} must be finite, got {v}")))
            }
        };
        match self {
            SignalSpec::Step { t_on, level_before, level } => {
                finite("t_on", *t_on)?;
                finite("level_before", *level_before)?;
                finite("level", *level)
            }
            SignalSpec::HillGauss { hill_level, hill_exponent, hill_half, burst_amplitude, burst_width, burst_center, omega } => {
                for (n, v) in [
                    ("hill_level", hill_level),
                    ("burst_amplitude", burst_amplitude),
                    ("burst_center", burst_center),
                    ("omega", omega),
                ] {
                    finite(n, *v)?;
                }
                for (n, v) in [("hill_exponent", hill_exponent), ("hill_half", hill_half), ("burst_width", burst_width)] {
                    if !(*v > 0.0) || !v.is_finite() {
                        return Err(Error::InvalidArgument(format!("signal parameter {n} must be positive, got {v}")));
                    }
                }
                Ok(())
            }
            SignalSpec::Sinusoid { offset, amplitude, omega, phase } => {
                finite("offset", *offset)?;
                finite("amplitude", *amplitude)?;
                finite("phase", *phase)?;
                if !(*omega > 0.0) || !omega.is_finite() {
                    return Err(Error::InvalidArgument(format!("omega must be positive, got {omega}")));
                }
                Ok(())
            }
            SignalSpec::Table { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidArgument("signal table is empty".into()));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("signal table has non-finite entries".into()));
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::InvalidArgument("signal table times must be strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    /// `r(t)`; rejects negative times.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("signal evaluated at negative time {t}")));
        }
        Ok(self.value(t))
    }

    /// Unchecked evaluation for the integration loop.
    #[inline]
    pub(crate) fn value(&self, t: f64) -> f64 {
        match *self {
            SignalSpec::Step { t_on, level_before, level } => {
                if t < t_on {
                    level_before
                } else {
                    level
                }
            }
            SignalSpec::HillGauss { hill_level, hill_exponent, hill_half, burst_amplitude, burst_width, burst_center, omega } => {
                let tn = t.powf(hill_exponent);
                let hill = hill_level * tn / (hill_half.powf(hill_exponent) + tn);
                let z = (t - burst_center) / burst_width;
                let norm = burst_amplitude / (2.0 * PI * burst_width * burst_width).sqrt();
                hill + norm * (-0.5 * z * z).exp() * (omega * t).sin()
            }
            SignalSpec::Sinusoid { offset, amplitude, omega, phase } => offset + amplitude * (omega * t + phase).sin(),
            SignalSpec::Table { ref points } => table_value(points, t),
        }
    }

    /// `dr/dt` where it exists (the step's jump is ignored).
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            SignalSpec::Step { .. } => 0.0,
            SignalSpec::HillGauss { hill_level, hill_exponent, hill_half, burst_amplitude, burst_width, burst_center, omega } => {
                let hn = hill_half.powf(hill_exponent);
                let tn = t.powf(hill_exponent);
                let hill = if t > 0.0 {
                    hill_level * hill_exponent * hn * tn / t / ((hn + tn) * (hn + tn))
                } else {
                    0.0
                };
                let z = (t - burst_center) / burst_width;
                let norm = burst_amplitude / (2.0 * PI * burst_width * burst_width).sqrt();
                let env = norm * (-0.5 * z * z).exp();
                hill + env * (omega * (omega * t).cos() - z / burst_width * (omega * t).sin())
            }
            SignalSpec::Sinusoid { amplitude, omega, phase, .. } => amplitude * omega * (omega * t + phase).cos(),
            SignalSpec::Table { ref points } => {
                let i = points.partition_point(|p| p[0] <= t);
                if i == 0 || i == points.len() {
                    0.0
                } else {
                    (points[i][1] - points[i - 1][1]) / (points[i][0] - points[i - 1][0])
                }
            }
        }
    }

    /// Upper bound on `|dr/dt|` over `[0, horizon]`.
    ///
    /// Closed form for sinusoids and tables, infinite for a step, and the
    /// maximum of the analytic derivative on a `1e-5 s` grid for the Hill
    /// burst.
    pub fn lipschitz_bound(&self, horizon: f64) -> Result<f64> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        Ok(match self {
            SignalSpec::Step { level_before, level, t_on } => {
                if level_before == level || *t_on > horizon {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            SignalSpec::Sinusoid { amplitude, omega, .. } => amplitude.abs() * omega,
            SignalSpec::Table { points } => points
                .windows(2)
                .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
                .fold(0.0, f64::max),
            SignalSpec::HillGauss { .. } => {
                let n = (horizon / LIPSCHITZ_GRID_STEP).ceil() as usize;
                (0..=n)
                    .map(|k| self.derivative((k as f64 * LIPSCHITZ_GRID_STEP).min(horizon)).abs())
                    .fold(0.0, f64::max)
            }
        })
    }

    /// `2 pi / omega` for sinusoids.
    pub fn period(&self) -> Option<f64> {
        match self {
            SignalSpec::Sinusoid { omega, .. } => Some(2.0 * PI / omega),
            _ => None,
        }
    }

    /// Value approached as `t -> inf`, when the signal has one.
    pub fn limit(&self) -> Option<f64> {
        match self {
            SignalSpec::Step { level, .. } => Some(*level),
            SignalSpec::HillGauss { hill_level, .. } => Some(*hill_level),
            SignalSpec::Sinusoid { amplitude, offset, .. } => (*amplitude == 0.0).then_some(*offset),
            SignalSpec::Table { points } => points.last().map(|p| p[1]),
        }
    }

    /// `(min, max)` of `r` over `[0, horizon]`.
    pub fn bounds(&self, horizon: f64) -> (f64, f64) {
        match self {
            SignalSpec::Step { t_on, level_before, level } => {
                if *t_on > horizon {
                    (*level_before, *level_before)
                } else if *t_on <= 0.0 {
                    (*level, *level)
                } else {
                    (level_before.min(*level), level_before.max(*level))
                }
            }
            SignalSpec::Sinusoid { offset, amplitude, .. } => (offset - amplitude.abs(), offset + amplitude.abs()),
            SignalSpec::Table { points } => {
                let mut lo = table_value(points, 0.0);
                let mut hi = lo;
                for y in points.iter().filter(|p| p[0] > 0.0 && p[0] < horizon).map(|p| p[1]).chain([table_value(points, horizon)]) {
                    lo = lo.min(y);
                    hi = hi.max(y);
                }
                (lo, hi)
            }
            SignalSpec::HillGauss { .. } => {
                let n = (horizon / LIPSCHITZ_GRID_STEP).ceil() as usize;
                (0..=n)
                    .map(|k| self.value((k as f64 * LIPSCHITZ_GRID_STEP).min(horizon)))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            }
        }
    }
}

fn table_value(points: &[[f64; 2]], t: f64) -> f64 {
    let i = points.partition_point(|p| p[0] <= t);
    if i == 0 {
        return points[0][1];
    }
    if i == points.len() {
        return points[i - 1][1];
    }
    let ([t0, y0], [t1, y1]) = (points[i - 1], points[i]);
    y0 + (y1 - y0) * (t - t0) / (t1 - t0)
}

/// Frequency label for a sweep row: `2 pi omega`.
pub fn frequency_label(omega: f64) -> f64 {
    2.0 * PI * omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        assert_relative_eq!(SignalSpec::periodic_case(1.0).eval(0.0).unwrap(), 0.1, epsilon = 1e-15);
        let hg = SignalSpec::hill_gauss_case();
        assert!((hg.eval(50.0).unwrap() - 2.0).abs() < 1e-6);
        assert_eq!(SignalSpec::step_case().eval(0.05).unwrap(), 0.0);
        assert_eq!(SignalSpec::step_case().eval(0.1).unwrap(), 2.0);
        assert!(SignalSpec::step_case().eval(-1e-3).is_err());
    }

    #[test]
    fn table_interpolates_and_holds() {
        let s = SignalSpec::Table { points: vec![[0.0, 0.0], [1.0, 2.0], [2.0, 2.0]] };
        assert_eq!(s.eval(0.5).unwrap(), 1.0);
        assert_eq!(s.eval(5.0).unwrap(), 2.0);
        assert_eq!(s.lipschitz_bound(3.0).unwrap(), 2.0);
        assert_eq!(s.bounds(3.0), (0.0, 2.0));
    }

    #[test]
    fn lipschitz_examples() {
        let s = SignalSpec::Sinusoid { offset: 0.0, amplitude: 1.0, omega: 1.0, phase: 0.0 };
        assert_eq!(s.lipschitz_bound(10.0).unwrap(), 1.0);
        let t = SignalSpec::Table { points: vec![[0.0, 0.0], [1.0, 2.0]] };
        assert_eq!(t.lipschitz_bound(1.0).unwrap(), 2.0);
        assert_eq!(SignalSpec::step_case().lipschitz_bound(1.0).unwrap(), f64::INFINITY);
        assert!(s.lipschitz_bound(0.0).is_err());
    }

    #[test]
    fn hill_gauss_lipschitz_matches_finite_differences() {
        let s = SignalSpec::hill_gauss_case();
        let h = LIPSCHITZ_GRID_STEP;
        let horizon = 2.0;
        let n = (horizon / h) as usize;
        let fd = (0..n)
            .map(|k| {
                let t = k as f64 * h;
                ((s.value(t + h) - s.value(t)) / h).abs()
            })
            .fold(0.0, f64::max);
        let bound = s.lipschitz_bound(horizon).unwrap();
        assert_relative_eq!(bound, fd, max_relative = 1e-3);
        // dominated by the burst: omega * a2 / sqrt(2 pi sigma^2) ~ 39.9
        assert!(bound > 35.0 && bound < 45.0);
    }

    #[test]
    fn analytic_derivative_agrees_with_central_differences() {
        let h = 1e-6;
        for s in [SignalSpec::hill_gauss_case(), SignalSpec::periodic_case(0.7)] {
            for k in 1..200 {
                let t = k as f64 * 0.01;
                let fd = (s.value(t + h) - s.value(t - h)) / (2.0 * h);
                assert_relative_eq!(s.derivative(t), fd, epsilon = 1e-5, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(SignalSpec::Table { points: vec![[0.0, 0.0], [0.0, 1.0]] }.validate().is_err());
        assert!(SignalSpec::Sinusoid { offset: 1.0, amplitude: 1.0, omega: 0.0, phase: 0.0 }.validate().is_err());
        assert!(SignalSpec::hill_gauss_case().validate().is_ok());
    }

    #[test]
    fn hill_gauss_settles_to_its_limit() {
        let s = SignalSpec::hill_gauss_case();
        // Hill tail is 2 h^4 / (h^4 + t^4) and the burst is negligible past 1.2 s
        for (eps, t) in [(1e-2, 1.0), (1e-3, 1.6), (1e-5, 5.1)] {
            for k in 0..100 {
                assert!((s.value(t + k as f64 * 0.1) - 2.0).abs() < eps);
            }
        }
    }

    proptest! {
        #[test]
        fn sinusoid_is_periodic(omega in 0.001f64..20.0, t in 0.0f64..100.0) {
            let s = SignalSpec::periodic_case(omega);
            let period = s.period().unwrap();
            let a = s.value(t);
            let b = s.value(t + period);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0) * (1.0 + omega * t));
        }
    }
}
