//! Generalized play operator.
//!
//! The operator keeps one memory value `w` and, for each new input `u`,
//! clamps the previous memory into the band `[gamma_r(u), gamma_l(u)]`:
//!
//! ```text
//! w_new = min(gamma_l(u), max(gamma_r(u), w_old))
//! ```
//!
//! Applied sample to sample this is exact for inputs that are linear between
//! consecutive samples.

use std::sync::Arc;

use crate::curves::PiecewiseLinearCurve;
use crate::error::{Error, Result};

/// Checks `gamma_r <= gamma_l` on the whole real line.
///
/// Both curves are linear between consecutive points of the union of their
/// breakpoints, so checking there and comparing extension slopes suffices.
fn check_ordering(gamma_l: &PiecewiseLinearCurve, gamma_r: &PiecewiseLinearCurve) -> Result<()> {
    let mut xs: Vec<f64> = gamma_l.breakpoints().iter().chain(gamma_r.breakpoints()).copied().collect();
    xs.sort_by(f64::total_cmp);
    for &x in &xs {
        let (left, right) = (gamma_l.eval(x), gamma_r.eval(x));
        if right > left {
            return Err(Error::CurveOrdering { x, left, right });
        }
    }
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    // slopes come from differences of stored points, so allow rounding noise
    let exceeds = |a: f64, b: f64| a - b > 1e-12 * a.abs().max(b.abs()).max(1.0);
    if exceeds(gamma_r.right_slope(), gamma_l.right_slope()) {
        return Err(Error::InvalidCurve(format!(
            "gamma_r overtakes gamma_l beyond x = {hi} (extension slopes {} > {})",
            gamma_r.right_slope(),
            gamma_l.right_slope()
        )));
    }
    if exceeds(gamma_l.left_slope(), gamma_r.left_slope()) {
        return Err(Error::InvalidCurve(format!(
            "gamma_r overtakes gamma_l below x = {lo} (extension slopes {} < {})",
            gamma_r.left_slope(),
            gamma_l.left_slope()
        )));
    }
    Ok(())
}

/// Generalized play with boundary curves `gamma_l` (upper) and `gamma_r`
/// (lower) and a single memory value.
///
/// Cloning shares the immutable curves and copies the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPlay {
    gamma_l: Arc<PiecewiseLinearCurve>,
    gamma_r: Arc<PiecewiseLinearCurve>,
    memory: Option<f64>,
}

impl GeneralizedPlay {
    /// Builds an uninitialized operator. Fails unless `gamma_r <= gamma_l`.
    pub fn new(gamma_l: PiecewiseLinearCurve, gamma_r: PiecewiseLinearCurve) -> Result<Self> {
        check_ordering(&gamma_l, &gamma_r)?;
        Ok(Self {
            gamma_l: Arc::new(gamma_l),
            gamma_r: Arc::new(gamma_r),
            memory: None,
        })
    }

    /// Builds and initializes in one go.
    pub fn with_initial(
        gamma_l: PiecewiseLinearCurve,
        gamma_r: PiecewiseLinearCurve,
        u0: f64,
        w0: f64,
    ) -> Result<Self> {
        let mut play = Self::new(gamma_l, gamma_r)?;
        play.init(u0, w0);
        Ok(play)
    }

    pub fn gamma_l(&self) -> &PiecewiseLinearCurve {
        &self.gamma_l
    }

    pub fn gamma_r(&self) -> &PiecewiseLinearCurve {
        &self.gamma_r
    }

    /// Current memory, `None` before [`Self::init`].
    pub fn memory(&self) -> Option<f64> {
        self.memory
    }

    /// Sets the initial memory, clipping `w0` into the band at `u0`.
    pub fn init(&mut self, u0: f64, w0: f64) -> f64 {
        let w = self.clamp(u0, w0);
        self.memory = Some(w);
        w
    }

    /// `min(gamma_l(u), max(gamma_r(u), w))` without touching the state.
    #[inline]
    pub fn clamp(&self, u: f64, w: f64) -> f64 {
        self.gamma_l.eval(u).min(self.gamma_r.eval(u).max(w))
    }

    #[inline]
    pub fn update(&mut self, u: f64) -> Result<f64> {
        let old = self.memory.ok_or(Error::Uninitialized)?;
        let w = self.clamp(u, old);
        self.memory = Some(w);
        Ok(w)
    }

    /// Streams `inputs` through the operator, mutating the memory.
    pub fn process(&mut self, inputs: &[f64]) -> Result<Vec<f64>> {
        inputs.iter().map(|&u| self.update(u)).collect()
    }

    /// Same as [`Self::process`] on a copy of the state.
    pub fn replay(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.clone().process(inputs)
    }
}
