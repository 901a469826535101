//! KP-type hysteresis map: a weighted parallel sum of play elements.
//!
//! `H(u) = offset + Σ a_i w_i` where each `w_i` is the memory of a
//! generalized play. Nonnegative weights keep the aggregate order-preserving.

use crate::curves::{shifted_clamp, weighted_sum, PiecewiseLinearCurve};
use crate::error::{Error, Result};
use crate::play::GeneralizedPlay;

/// Play whose boundary curves are `scale * clamp(u ± rho, lo, hi)`.
///
/// `lo = -inf` or `hi = +inf` disables saturation on that side.
pub fn make_saturated_play(rho: f64, lo: f64, hi: f64, scale: f64) -> Result<GeneralizedPlay> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("half-width must be finite and >= 0, got {rho}")));
    }
    if lo.is_nan() || hi.is_nan() || !(lo < hi) || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(format!("saturation limits must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite and > 0, got {scale}")));
    }
    GeneralizedPlay::new(shifted_clamp(rho, lo, hi, scale), shifted_clamp(-rho, lo, hi, scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayElement {
    weight: f64,
    play: GeneralizedPlay,
}

impl PlayElement {
    pub fn new(weight: f64, play: GeneralizedPlay) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::InvalidArgument(format!("element weight must be finite and >= 0, got {weight}")));
        }
        Ok(Self { weight, play })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn play(&self) -> &GeneralizedPlay {
        &self.play
    }
}

/// How element memories are seeded at `u0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMemory {
    /// Clip zero into each element's band.
    Virgin,
    /// One requested memory per element, each clipped into its band.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpModel {
    elements: Vec<PlayElement>,
    offset: f64,
}

impl KpModel {
    pub fn new(elements: Vec<PlayElement>, offset: f64) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one element".into()));
        }
        if !offset.is_finite() {
            return Err(Error::InvalidArgument(format!("offset must be finite, got {offset}")));
        }
        Ok(Self { elements, offset })
    }

    /// Three saturated plays with output range `[0, 4]`:
    /// `(a, rho, sat) = (1, 0.25, [0, 1.5]), (1, 0.75, [0, 1.5]), (1, 1.25, [0, 1])`.
    pub fn default_triple() -> Self {
        let elements = [(0.25, 1.5), (0.75, 1.5), (1.25, 1.0)]
            .into_iter()
            .map(|(rho, hi)| PlayElement::new(1.0, make_saturated_play(rho, 0.0, hi, 1.0).unwrap()).unwrap())
            .collect();
        Self::new(elements, 0.0).unwrap()
    }

    pub fn elements(&self) -> &[PlayElement] {
        &self.elements
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_initialized(&self) -> bool {
        self.elements.iter().all(|e| e.play.memory().is_some())
    }

    /// Current aggregate output, if initialized.
    pub fn output(&self) -> Option<f64> {
        self.elements
            .iter()
            .try_fold(self.offset, |acc, e| e.play.memory().map(|w| acc + e.weight * w))
    }

    /// Element memories, if initialized.
    pub fn memories(&self) -> Option<Vec<f64>> {
        self.elements.iter().map(|e| e.play.memory()).collect()
    }

    /// Initializes each element at `u0` from its requested memory and returns
    /// the aggregate `H(u)(0)`.
    pub fn h_init(&mut self, u0: f64, memories: &[f64]) -> Result<f64> {
        if memories.len() != self.elements.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} initial memories, got {}",
                self.elements.len(),
                memories.len()
            )));
        }
        let mut total = self.offset;
        for (e, &w0) in self.elements.iter_mut().zip(memories) {
            total += e.weight * e.play.init(u0, w0);
        }
        Ok(total)
    }

    pub fn init_with(&mut self, u0: f64, memory: &InitialMemory) -> Result<f64> {
        match memory {
            InitialMemory::Virgin => {
                let zeros = vec![0.0; self.elements.len()];
                self.h_init(u0, &zeros)
            }
            InitialMemory::Explicit(ws) => self.h_init(u0, ws),
        }
    }

    #[inline]
    pub fn h_update(&mut self, u: f64) -> Result<f64> {
        let mut total = self.offset;
        for e in &mut self.elements {
            total += e.weight * e.play.update(u)?;
        }
        Ok(total)
    }

    /// Aggregate boundary curves `(Γ_l, Γ_r)`.
    pub fn aggregate_envelopes(&self) -> (PiecewiseLinearCurve, PiecewiseLinearCurve) {
        let left: Vec<_> = self.elements.iter().map(|e| (e.weight, e.play.gamma_l())).collect();
        let right: Vec<_> = self.elements.iter().map(|e| (e.weight, e.play.gamma_r())).collect();
        (weighted_sum(&left, self.offset), weighted_sum(&right, self.offset))
    }

    /// Bounds `(floor, cap)` on the aggregate output over every trajectory.
    pub fn output_range(&self) -> Result<(f64, f64)> {
        let mut lo = self.offset;
        let mut hi = self.offset;
        for (i, e) in self.elements.iter().enumerate() {
            let (l_lo, l_hi) = e.play.gamma_l().range();
            let (r_lo, r_hi) = e.play.gamma_r().range();
            let (min, max) = (l_lo.min(r_lo), l_hi.max(r_hi));
            if !min.is_finite() || !max.is_finite() {
                return Err(Error::UnboundedRange(format!("element {i} does not saturate on both sides")));
            }
            lo += e.weight * min;
            hi += e.weight * max;
        }
        Ok((lo, hi))
    }

    /// Largest Lipschitz constant of the two aggregate envelopes.
    pub fn lipschitz_constant(&self) -> f64 {
        let (l, r) = self.aggregate_envelopes();
        l.lipschitz_constant().max(r.lipschitz_constant())
    }
}
