//! Piecewise-linear, non-decreasing boundary curves.
//!
//! A [`PiecewiseLinearCurve`] interpolates linearly between its breakpoints
//! and continues past the outermost breakpoints either as a constant
//! (saturation) or along the slope of the adjacent end segment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Behaviour of a curve beyond its outermost breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    /// Hold the end value.
    Constant,
    /// Continue along the end segment.
    Linear,
}

/// Result of inverting a curve at a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preimage {
    pub x: f64,
    /// The level set runs off to infinity through a flat extension, so `x` is
    /// the outermost breakpoint rather than a true extremum.
    pub unbounded: bool,
}

/// Non-decreasing, continuous piecewise-linear function.
///
/// Validated once at construction and immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    left: Extension,
    right: Extension,
}

impl PiecewiseLinearCurve {
    pub fn new(points: &[(f64, f64)], left: Extension, right: Extension) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidCurve(format!(
                "need at least two breakpoints, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidCurve(format!("non-finite breakpoint ({}, {})", p.0, p.1)));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidCurve(format!(
                    "x-coordinates must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidCurve(format!(
                    "curve must be non-decreasing (y drops from {} to {} at x = {})",
                    w[0].1, w[1].1, w[1].0
                )));
            }
        }
        Ok(Self {
            xs: points.iter().map(|p| p.0).collect(),
            ys: points.iter().map(|p| p.1).collect(),
            left,
            right,
        })
    }

    /// The identity map `y = x` on the whole line.
    pub fn identity() -> Self {
        Self::affine(1.0, 0.0)
    }

    /// `y = slope * x + intercept` with `slope >= 0`, extended linearly.
    pub fn affine(slope: f64, intercept: f64) -> Self {
        assert!(slope >= 0.0 && slope.is_finite(), "slope must be finite and nonnegative");
        Self {
            xs: vec![0.0, 1.0],
            ys: vec![intercept, intercept + slope],
            left: Extension::Linear,
            right: Extension::Linear,
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn left_extension(&self) -> Extension {
        self.left
    }

    pub fn right_extension(&self) -> Extension {
        self.right
    }

    fn last(&self) -> usize {
        self.xs.len() - 1
    }

    fn segment_slope(&self, i: usize) -> f64 {
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    /// Slope of the curve for `x` below the first breakpoint.
    pub fn left_slope(&self) -> f64 {
        match self.left {
            Extension::Constant => 0.0,
            Extension::Linear => self.segment_slope(0),
        }
    }

    /// Slope of the curve for `x` beyond the last breakpoint.
    pub fn right_slope(&self) -> f64 {
        match self.right {
            Extension::Constant => 0.0,
            Extension::Linear => self.segment_slope(self.last() - 1),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.last();
        if x <= self.xs[0] {
            return self.ys[0] + self.left_slope() * (x - self.xs[0]);
        }
        if x >= self.xs[n] {
            return self.ys[n] + self.right_slope() * (x - self.xs[n]);
        }
        // first index with xs[i] > x; x lies on segment (i - 1, i)
        let i = self.xs.partition_point(|&b| b <= x);
        let (x0, x1, y0, y1) = (self.xs[i - 1], self.xs[i], self.ys[i - 1], self.ys[i]);
        y0 + (y1 - y0) * ((x - x0) / (x1 - x0))
    }

    pub fn lipschitz_constant(&self) -> f64 {
        (0..self.last())
            .map(|i| self.segment_slope(i))
            .fold(self.left_slope().max(self.right_slope()), f64::max)
    }

    /// `(inf, sup)` of the curve over the real line; infinite on linear,
    /// non-flat extensions.
    pub fn range(&self) -> (f64, f64) {
        let lo = if self.left_slope() > 0.0 { f64::NEG_INFINITY } else { self.ys[0] };
        let hi = if self.right_slope() > 0.0 { f64::INFINITY } else { self.ys[self.last()] };
        (lo, hi)
    }

    /// Local modulus of continuity: the supremum of `|f(y1) - f(y2)|` over
    /// `y1, y2` in `[-m, m]` with `|y1 - y2| <= h`.
    ///
    /// The curve is non-decreasing, so the supremum is attained by a window of
    /// width exactly `h`. The window increment is piecewise linear in its left
    /// anchor with kinks where either edge crosses a breakpoint, so scanning
    /// those anchors plus the interval ends is exact.
    pub fn modulus_of_continuity(&self, m: f64, h: f64) -> Result<f64> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("modulus radius must be positive, got {m}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("modulus width must be positive, got {h}")));
        }
        if h >= 2.0 * m {
            return Ok(self.eval(m) - self.eval(-m));
        }
        let (lo, hi) = (-m, m - h);
        let anchors = self
            .xs
            .iter()
            .flat_map(|&b| [b, b - h])
            .filter(|&a| a > lo && a < hi)
            .chain([lo, hi]);
        Ok(anchors.map(|a| self.eval(a + h) - self.eval(a)).fold(0.0, f64::max))
    }

    /// Largest `x` with `eval(x) == y`, or `None` when `y` is outside the range.
    ///
    /// A flat level set inside the breakpoint hull yields its right endpoint.
    /// When `y` equals a constant right-hand saturation value the level set is
    /// unbounded; the last breakpoint is returned and flagged.
    pub fn preimage_max(&self, y: f64) -> Option<Preimage> {
        let n = self.last();
        let (y_first, y_last) = (self.ys[0], self.ys[n]);
        let bounded = |x| Some(Preimage { x, unbounded: false });
        if y > y_last {
            let s = self.right_slope();
            return if s > 0.0 { bounded(self.xs[n] + (y - y_last) / s) } else { None };
        }
        if y == y_last && self.right_slope() == 0.0 {
            return Some(Preimage { x: self.xs[n], unbounded: true });
        }
        if y < y_first {
            let s = self.left_slope();
            return if s > 0.0 { bounded(self.xs[0] - (y_first - y) / s) } else { None };
        }
        // ys[i] <= y < ys[i + 1] on the rightmost such segment
        let i = self.ys.partition_point(|&v| v <= y) - 1;
        if i == n {
            return bounded(self.xs[n]);
        }
        let t = (y - self.ys[i]) / (self.ys[i + 1] - self.ys[i]);
        bounded(self.xs[i] + t * (self.xs[i + 1] - self.xs[i]))
    }

    /// Smallest `x` with `eval(x) == y`; mirror image of [`Self::preimage_max`].
    pub fn preimage_min(&self, y: f64) -> Option<Preimage> {
        let n = self.last();
        let (y_first, y_last) = (self.ys[0], self.ys[n]);
        let bounded = |x| Some(Preimage { x, unbounded: false });
        if y < y_first {
            let s = self.left_slope();
            return if s > 0.0 { bounded(self.xs[0] - (y_first - y) / s) } else { None };
        }
        if y == y_first && self.left_slope() == 0.0 {
            return Some(Preimage { x: self.xs[0], unbounded: true });
        }
        if y > y_last {
            let s = self.right_slope();
            return if s > 0.0 { bounded(self.xs[n] + (y - y_last) / s) } else { None };
        }
        // ys[i - 1] < y <= ys[i] on the leftmost such segment
        let i = self.ys.partition_point(|&v| v < y);
        if i == 0 {
            return bounded(self.xs[0]);
        }
        let t = (y - self.ys[i - 1]) / (self.ys[i] - self.ys[i - 1]);
        bounded(self.xs[i - 1] + t * (self.xs[i] - self.xs[i - 1]))
    }
}

/// `scale * clamp(x + shift, lo, hi)` as a curve; `lo`/`hi` may be infinite
/// to disable saturation on that side.
pub(crate) fn shifted_clamp(shift: f64, lo: f64, hi: f64, scale: f64) -> PiecewiseLinearCurve {
    debug_assert!(lo < hi && scale > 0.0);
    let (xs, ys, left, right) = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (vec![lo - shift, hi - shift], vec![lo, hi], Extension::Constant, Extension::Constant),
        (true, false) => (vec![lo - shift, lo - shift + 1.0], vec![lo, lo + 1.0], Extension::Constant, Extension::Linear),
        (false, true) => (vec![hi - shift - 1.0, hi - shift], vec![hi - 1.0, hi], Extension::Linear, Extension::Constant),
        (false, false) => (vec![-shift, 1.0 - shift], vec![0.0, 1.0], Extension::Linear, Extension::Linear),
    };
    PiecewiseLinearCurve {
        xs,
        ys: ys.into_iter().map(|y| scale * y).collect(),
        left,
        right,
    }
}

/// Weighted sum `offset + Σ weight_i * curve_i` on the union of breakpoints.
pub(crate) fn weighted_sum(terms: &[(f64, &PiecewiseLinearCurve)], offset: f64) -> PiecewiseLinearCurve {
    let mut xs: Vec<f64> = terms.iter().flat_map(|(_, c)| c.xs.iter().copied()).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let at = |x: f64| offset + terms.iter().map(|(a, c)| a * c.eval(x)).sum::<f64>();
    let left_slope: f64 = terms.iter().map(|(a, c)| a * c.left_slope()).sum();
    let right_slope: f64 = terms.iter().map(|(a, c)| a * c.right_slope()).sum();

    // Past the union hull every term sits in its extension, so the aggregate
    // slope there is known exactly. A sentinel breakpoint one unit out pins a
    // linear extension to that slope when the end segment disagrees.
    if xs.len() == 1 {
        xs.push(xs[0] + 1.0);
    }
    let mut points: Vec<(f64, f64)> = xs.iter().map(|&x| (x, at(x))).collect();
    let n = points.len();
    let end_slope = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) / (b.0 - a.0);
    if right_slope > 0.0 && end_slope(points[n - 2], points[n - 1]) != right_slope {
        let (x, y) = points[n - 1];
        points.push((x + 1.0, y + right_slope));
    }
    if left_slope > 0.0 && end_slope(points[0], points[1]) != left_slope {
        let (x, y) = points[0];
        points.insert(0, (x - 1.0, y - left_slope));
    }
    let ext = |s: f64| if s > 0.0 { Extension::Linear } else { Extension::Constant };
    PiecewiseLinearCurve {
        xs: points.iter().map(|p| p.0).collect(),
        ys: points.iter().map(|p| p.1).collect(),
        left: ext(left_slope),
        right: ext(right_slope),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_ramp() -> PiecewiseLinearCurve {
        PiecewiseLinearCurve::new(&[(0.0, 0.0), (1.0, 1.0)], Extension::Constant, Extension::Constant).unwrap()
    }

    fn kinked() -> PiecewiseLinearCurve {
        PiecewiseLinearCurve::new(&[(-1.0, 0.0), (0.0, 0.0), (2.0, 4.0)], Extension::Constant, Extension::Constant)
            .unwrap()
    }

    fn plateau() -> PiecewiseLinearCurve {
        PiecewiseLinearCurve::new(
            &[(0.0, 0.0), (1.0, 2.0), (3.0, 2.0), (4.0, 5.0)],
            Extension::Constant,
            Extension::Constant,
        )
        .unwrap()
    }

    /// Independent evaluation by dense sampling along each segment.
    fn dense_sample_oracle(points: &[(f64, f64)], x: f64) -> f64 {
        for w in points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            let steps = 10_000;
            for k in 0..steps {
                let a = x0 + (x1 - x0) * k as f64 / steps as f64;
                let b = x0 + (x1 - x0) * (k + 1) as f64 / steps as f64;
                if x >= a && x <= b {
                    let ya = y0 + (y1 - y0) * (a - x0) / (x1 - x0);
                    let yb = y0 + (y1 - y0) * (b - x0) / (x1 - x0);
                    return ya + (yb - ya) * (x - a) / (b - a);
                }
            }
        }
        f64::NAN
    }

    #[test]
    fn eval_examples() {
        assert_eq!(unit_ramp().eval(0.5), 0.5);
        assert_eq!(unit_ramp().eval(3.0), 1.0);
        assert_eq!(unit_ramp().eval(-2.0), 0.0);
        let oracle = dense_sample_oracle(&[(-1.0, 0.0), (0.0, 0.0), (2.0, 4.0)], 1.0);
        assert_relative_eq!(oracle, 2.0, epsilon = 1e-12);
        assert_eq!(kinked().eval(1.0), 2.0);
    }

    #[test]
    fn linear_extensions_follow_end_segments() {
        let c = PiecewiseLinearCurve::new(&[(0.0, 1.0), (1.0, 3.0), (2.0, 3.5)], Extension::Linear, Extension::Linear)
            .unwrap();
        assert_eq!(c.eval(-1.0), -1.0);
        assert_eq!(c.eval(4.0), 4.5);
        assert_eq!(c.range(), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn construction_rejects_bad_curves() {
        let c = Extension::Constant;
        assert!(PiecewiseLinearCurve::new(&[(0.0, 0.0)], c, c).is_err());
        assert!(PiecewiseLinearCurve::new(&[(0.0, 0.0), (0.0, 1.0)], c, c).is_err());
        assert!(PiecewiseLinearCurve::new(&[(0.0, 1.0), (1.0, 0.0)], c, c).is_err());
        assert!(PiecewiseLinearCurve::new(&[(0.0, 0.0), (f64::NAN, 1.0)], c, c).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(unit_ramp().lipschitz_constant(), 1.0);
        let flat = PiecewiseLinearCurve::new(&[(0.0, 0.0), (1.0, 0.0)], Extension::Constant, Extension::Constant)
            .unwrap();
        assert_eq!(flat.lipschitz_constant(), 0.0);
        assert_eq!(kinked().lipschitz_constant(), 2.0);
    }

    /// Brute-force modulus over a grid of (y1, y2) pairs.
    fn grid_modulus(c: &PiecewiseLinearCurve, m: f64, h: f64) -> f64 {
        let n = 800;
        let mut best = 0.0f64;
        for i in 0..=n {
            let y1 = -m + 2.0 * m * i as f64 / n as f64;
            for j in 0..=n {
                let y2 = -m + 2.0 * m * j as f64 / n as f64;
                if (y1 - y2).abs() <= h + 1e-12 {
                    best = best.max((c.eval(y1) - c.eval(y2)).abs());
                }
            }
        }
        best
    }

    #[test]
    fn modulus_examples() {
        let id = PiecewiseLinearCurve::identity();
        assert_relative_eq!(id.modulus_of_continuity(2.0, 0.5).unwrap(), 0.5, epsilon = 1e-12);
        let flat = PiecewiseLinearCurve::new(&[(0.0, 1.0), (1.0, 1.0)], Extension::Constant, Extension::Constant)
            .unwrap();
        assert_eq!(flat.modulus_of_continuity(2.0, 0.5).unwrap(), 0.0);
        let exact = kinked().modulus_of_continuity(2.0, 0.5).unwrap();
        assert_relative_eq!(exact, 1.0, epsilon = 1e-12);
        assert_relative_eq!(grid_modulus(&kinked(), 2.0, 0.5), exact, epsilon = 1e-9);
    }

    #[test]
    fn modulus_window_clipped_by_radius() {
        // steepest segment [0, 2] only partly inside [-0.5, 0.5]
        let c = kinked();
        let exact = c.modulus_of_continuity(0.5, 0.75).unwrap();
        assert_relative_eq!(exact, grid_modulus(&c, 0.5, 0.75), epsilon = 1e-9);
        assert_relative_eq!(c.modulus_of_continuity(0.5, 5.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn modulus_rejects_nonpositive_arguments() {
        assert!(kinked().modulus_of_continuity(0.0, 0.5).is_err());
        assert!(kinked().modulus_of_continuity(1.0, 0.0).is_err());
        assert!(kinked().modulus_of_continuity(1.0, -1.0).is_err());
    }

    #[test]
    fn preimage_examples() {
        let id = PiecewiseLinearCurve::identity();
        assert_eq!(id.preimage_max(0.3).unwrap().x, 0.3);
        assert_eq!(id.preimage_min(0.3).unwrap().x, 0.3);

        // dense scan for the plateau level set {x : f(x) = 2} = [1, 3]
        let p = plateau();
        let scan: Vec<f64> = (0..=40_000).map(|k| k as f64 * 1e-4).filter(|&x| p.eval(x) == 2.0).collect();
        assert_relative_eq!(*scan.first().unwrap(), 1.0, epsilon = 1e-4);
        assert_relative_eq!(*scan.last().unwrap(), 3.0, epsilon = 1e-4);
        assert_eq!(p.preimage_max(2.0), Some(Preimage { x: 3.0, unbounded: false }));
        assert_eq!(p.preimage_min(2.0), Some(Preimage { x: 1.0, unbounded: false }));

        assert_eq!(unit_ramp().preimage_max(7.0), None);
        assert_eq!(unit_ramp().preimage_min(-0.5), None);
    }

    #[test]
    fn preimage_at_saturation_is_flagged() {
        let r = unit_ramp();
        assert_eq!(r.preimage_max(1.0), Some(Preimage { x: 1.0, unbounded: true }));
        assert_eq!(r.preimage_min(0.0), Some(Preimage { x: 0.0, unbounded: true }));
        // the opposite ends are genuine extrema
        assert_eq!(r.preimage_max(0.0), Some(Preimage { x: 0.0, unbounded: false }));
        assert_eq!(r.preimage_min(1.0), Some(Preimage { x: 1.0, unbounded: false }));
    }

    #[test]
    fn preimage_through_linear_extensions() {
        let c = PiecewiseLinearCurve::affine(2.0, 1.0);
        assert_relative_eq!(c.preimage_max(11.0).unwrap().x, 5.0);
        assert_relative_eq!(c.preimage_min(-9.0).unwrap().x, -5.0);
    }

    #[test]
    fn shifted_clamp_shapes() {
        let c = shifted_clamp(0.5, 0.0, 1.0, 2.0);
        assert_eq!(c.eval(-3.0), 0.0);
        assert_eq!(c.eval(0.0), 1.0);
        assert_eq!(c.eval(9.0), 2.0);
        let open = shifted_clamp(0.25, f64::NEG_INFINITY, f64::INFINITY, 1.0);
        assert_eq!(open.eval(-10.0), -9.75);
        let half = shifted_clamp(0.0, 0.0, f64::INFINITY, 1.0);
        assert_eq!((half.eval(-1.0), half.eval(5.0)), (0.0, 5.0));
    }

    #[test]
    fn weighted_sum_matches_direct_summation() {
        let a = shifted_clamp(0.25, 0.0, 1.5, 1.0);
        let b = shifted_clamp(-1.25, 0.0, 1.0, 1.0);
        let lin = PiecewiseLinearCurve::affine(0.5, 0.0);
        let sum = weighted_sum(&[(2.0, &a), (1.0, &b), (1.0, &lin)], 0.5);
        for k in -400..=400 {
            let x = k as f64 * 0.01;
            let direct = 0.5 + 2.0 * a.eval(x) + b.eval(x) + lin.eval(x);
            assert_relative_eq!(sum.eval(x), direct, epsilon = 1e-12);
        }
        assert_eq!(sum.right_extension(), Extension::Linear);
        assert_relative_eq!(sum.right_slope(), 0.5);
    }

    fn arb_curve() -> impl Strategy<Value = PiecewiseLinearCurve> {
        (prop::collection::vec((0.01f64..2.0, 0.0f64..3.0), 1..8), -5.0f64..5.0, any::<bool>(), any::<bool>())
            .prop_map(|(steps, x0, l, r)| {
                let mut pts = vec![(x0, 0.0)];
                for (dx, dy) in steps {
                    let (x, y) = *pts.last().unwrap();
                    pts.push((x + dx, y + dy));
                }
                let ext = |b: bool| if b { Extension::Linear } else { Extension::Constant };
                PiecewiseLinearCurve::new(&pts, ext(l), ext(r)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn eval_is_monotone(c in arb_curve(), a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.eval(lo) <= c.eval(hi));
        }

        #[test]
        fn eval_respects_lipschitz_bound(c in arb_curve(), a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let bound = c.lipschitz_constant() * (a - b).abs();
            prop_assert!((c.eval(a) - c.eval(b)).abs() <= bound * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn modulus_below_lipschitz_times_width(c in arb_curve(), m in 0.1f64..8.0, h in 0.01f64..4.0) {
            let w = c.modulus_of_continuity(m, h).unwrap();
            prop_assert!(w <= c.lipschitz_constant() * h * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn preimages_invert_eval(c in arb_curve(), x in -10.0f64..10.0) {
            let y = c.eval(x);
            let hi = c.preimage_max(y).unwrap();
            let lo = c.preimage_min(y).unwrap();
            prop_assert!((c.eval(hi.x) - y).abs() <= 1e-12 * (1.0 + y.abs()));
            prop_assert!((c.eval(lo.x) - y).abs() <= 1e-12 * (1.0 + y.abs()));
            prop_assert!(lo.x <= hi.x);
            if !hi.unbounded { prop_assert!(hi.x >= x - 1e-9); }
            if !lo.unbounded { prop_assert!(lo.x <= x + 1e-9); }
        }
    }
}
