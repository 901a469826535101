//! Oracles and randomized property campaigns for the play operator and the
//! compensation loop.
//!
//! The oracle here deliberately avoids the streaming code path: curves are
//! evaluated by a linear scan and segments are refined before applying the
//! recurrence.

use std::fmt::Write as _;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curves::{Extension, PiecewiseLinearCurve};
use crate::error::{Error, Result};
use crate::play::GeneralizedPlay;
use crate::simulator::{period_grid, Integrator, SimConfig};

/// Tolerance for identities that hold exactly up to rounding.
pub const EXACT_TOL: f64 = 1e-12;
/// Tolerance for quantities accumulated by the integrator.
pub const INTEGRATED_TOL: f64 = 1e-10;

/// Input that is linear between breakpoints `(t, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearInput {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinearInput {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("input needs at least one breakpoint".into()));
        }
        if points.iter().any(|(t, u)| !t.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("input breakpoints must be finite".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("input times must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// Linear interpolation, holding the end values outside the span.
    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        let i = p.partition_point(|q| q.0 < t);
        if i == p.len() {
            return p[p.len() - 1].1;
        }
        let ((t0, u0), (t1, u1)) = (p[i - 1], p[i]);
        if t == t1 {
            return u1;
        }
        u0 + (u1 - u0) * (t - t0) / (t1 - t0)
    }
}

/// Curve evaluation by linear scan, independent of the binary search used by
/// [`PiecewiseLinearCurve::eval`].
fn scan_eval(curve: &PiecewiseLinearCurve, x: f64) -> f64 {
    let pts: Vec<(f64, f64)> = curve.points().collect();
    let n = pts.len() - 1;
    let slope = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) / (b.0 - a.0);
    if x < pts[0].0 {
        return match curve.left_extension() {
            Extension::Constant => pts[0].1,
            Extension::Linear => pts[0].1 + slope(pts[0], pts[1]) * (x - pts[0].0),
        };
    }
    for k in 0..n {
        let (a, b) = (pts[k], pts[k + 1]);
        if x <= b.0 {
            return a.1 + slope(a, b) * (x - a.0);
        }
    }
    match curve.right_extension() {
        Extension::Constant => pts[n].1,
        Extension::Linear => pts[n].1 + slope(pts[n - 1], pts[n]) * (x - pts[n].0),
    }
}

/// Reference play: the recurrence on a partition refined `refinement` times
/// per segment, reported at the original breakpoints.
pub fn oracle_play(
    input: &PiecewiseLinearInput,
    gamma_l: &PiecewiseLinearCurve,
    gamma_r: &PiecewiseLinearCurve,
    w0: f64,
    refinement: usize,
) -> Vec<f64> {
    let refinement = refinement.max(1);
    let clamp = |u: f64, w: f64| scan_eval(gamma_l, u).min(scan_eval(gamma_r, u).max(w));
    let pts = input.points();
    let mut w = clamp(pts[0].1, w0);
    let mut out = vec![w];
    for seg in pts.windows(2) {
        let (u0, u1) = (seg[0].1, seg[1].1);
        for j in 1..=refinement {
            let u = if j == refinement { u1 } else { u0 + (u1 - u0) * j as f64 / refinement as f64 };
            w = clamp(u, w);
        }
        out.push(w);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisintinReport {
    /// `max |ε1 - ε2|` over `[t1, t2]`.
    pub lhs: f64,
    /// `max(|ε1(t1) - ε2(t1)|, m_M(max |u1 - u2| over [t1, t2]))`.
    pub rhs: f64,
    pub m: f64,
    pub input_gap: f64,
}

impl VisintinReport {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + EXACT_TOL
    }
}

fn merged_times(inputs: &[&PiecewiseLinearInput], extra: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = inputs.iter().flat_map(|i| i.times()).chain(extra.iter().copied()).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

fn refine(ts: &[f64], refinement: usize) -> Vec<f64> {
    let mut out = vec![ts[0]];
    for w in ts.windows(2) {
        for j in 1..refinement {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / refinement as f64);
        }
        out.push(w[1]);
    }
    out
}

/// Both sides of the continuity estimate for two inputs driving the same play.
#[allow(clippy::too_many_arguments)]
pub fn check_visintin_inequality(
    input1: &PiecewiseLinearInput,
    input2: &PiecewiseLinearInput,
    gamma_l: &PiecewiseLinearCurve,
    gamma_r: &PiecewiseLinearCurve,
    w01: f64,
    w02: f64,
    t1: f64,
    t2: f64,
) -> Result<VisintinReport> {
    let (start, end) = input1.span();
    if input2.span() != (start, end) {
        return Err(Error::InvalidArgument("inputs must share their time hull".into()));
    }
    if !(start <= t1 && t1 <= t2 && t2 <= end) {
        return Err(Error::InvalidArgument(format!("[{t1}, {t2}] not inside [{start}, {end}]")));
    }
    let play = GeneralizedPlay::new(gamma_l.clone(), gamma_r.clone())?;
    let grid = refine(&merged_times(&[input1, input2], &[t1, t2]), 8);
    let run = |input: &PiecewiseLinearInput, w0: f64| {
        let us: Vec<f64> = grid.iter().map(|&t| input.eval(t)).collect();
        let mut p = play.clone();
        p.init(us[0], w0);
        p.process(&us)
    };
    let (e1, e2) = (run(input1, w01)?, run(input2, w02)?);
    let m = input1.points().iter().chain(input2.points()).fold(0.0, |m: f64, p| m.max(p.1.abs()));

    let inside = |t: f64| t >= t1 && t <= t2;
    let first = grid.iter().position(|&t| t == t1).expect("t1 is on the grid");
    let lhs = grid.iter().zip(e1.iter().zip(&e2)).filter(|(&t, _)| inside(t)).fold(0.0, |acc: f64, (_, (a, b))| acc.max((a - b).abs()));
    // the input difference is linear between merged breakpoints
    let input_gap = merged_times(&[input1, input2], &[t1, t2])
        .into_iter()
        .filter(|&t| inside(t))
        .fold(0.0, |acc: f64, t| acc.max((input1.eval(t) - input2.eval(t)).abs()));
    let modulus = if input_gap == 0.0 || m == 0.0 {
        0.0
    } else {
        gamma_l.modulus_of_continuity(m, input_gap)?.max(gamma_r.modulus_of_continuity(m, input_gap)?)
    };
    let rhs = (e1[first] - e2[first]).abs().max(modulus);
    Ok(VisintinReport { lhs, rhs, m, input_gap })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateIndependenceReport {
    pub max_deviation: f64,
}

impl RateIndependenceReport {
    pub fn holds(&self) -> bool {
        self.max_deviation <= EXACT_TOL
    }
}

/// Compares play outputs for `input` and for `input ∘ φ`, where the warp `φ`
/// is the piecewise-linear map through `warp = [(s, φ(s))]`.
pub fn check_rate_independence(
    play: &GeneralizedPlay,
    w0: f64,
    input: &PiecewiseLinearInput,
    warp: &[(f64, f64)],
) -> Result<RateIndependenceReport> {
    if warp.len() < 2 || warp.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
        return Err(Error::InvalidArgument("time warp must be strictly increasing with at least two knots".into()));
    }
    let (start, end) = input.span();
    let (s0, sn) = (warp[0], warp[warp.len() - 1]);
    if s0.0 != start || s0.1 != start || sn.0 != end || sn.1 != end {
        return Err(Error::InvalidArgument("time warp must fix the input's end points".into()));
    }
    // φ^{-1} through the swapped table
    let inverse = PiecewiseLinearInput::new(warp.iter().map(|&(s, t)| (t, s)).collect())?;

    // warped breakpoints: images of original breakpoints plus warp knots
    let mut grid: Vec<(f64, f64, Option<usize>)> = input
        .points()
        .iter()
        .enumerate()
        .map(|(i, &(t, u))| (inverse.eval(t), u, Some(i)))
        .collect();
    for &(s, t) in &warp[1..warp.len() - 1] {
        if !input.times().any(|ti| ti == t) {
            grid.push((s, input.eval(t), None));
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));

    let original = {
        let mut p = play.clone();
        p.init(input.points()[0].1, w0);
        p.process(&input.values())?
    };
    let warped = {
        let us: Vec<f64> = grid.iter().map(|g| g.1).collect();
        let mut p = play.clone();
        p.init(us[0], w0);
        p.process(&us)?
    };
    let max_deviation = grid
        .iter()
        .zip(&warped)
        .filter_map(|(g, w)| g.2.map(|i| (original[i] - w).abs()))
        .fold(0.0, f64::max);
    Ok(RateIndependenceReport { max_deviation })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    pub u_a: f64,
    pub u_b: f64,
    pub initial_gap: f64,
    /// `|P(u_a) - P(u_b)|`.
    pub period_gap: f64,
    /// Largest step-to-step increase of `|u_a(t) - u_b(t)|` over the period.
    pub max_gap_increase: f64,
}

impl PairOutcome {
    pub fn period_ok(&self) -> bool {
        self.period_gap <= self.initial_gap + INTEGRATED_TOL
    }

    pub fn pointwise_ok(&self) -> bool {
        self.max_gap_increase <= INTEGRATED_TOL
    }
}

/// Runs one period from each start of every pair, each with its own memory
/// built by the configured rule, and tracks the gap along recorded steps.
pub fn check_poincare_nonexpansive(config: &SimConfig, pairs: &[(f64, f64)]) -> Result<Vec<PairOutcome>> {
    config.validate()?;
    let period = config
        .signal
        .period()
        .ok_or_else(|| Error::InvalidArgument("non-expansion check needs a periodic signal".into()))?;
    let stride = config.record_stride.unwrap_or(1) as u64;
    let (steps, dt) = period_grid(period, config.dt, 1);
    pairs
        .par_iter()
        .map(|&(u_a, u_b)| {
            let mut a = Integrator::new(config, config.initial_model(u_a)?, u_a, 0.0)?.with_dt(dt);
            let mut b = Integrator::new(config, config.initial_model(u_b)?, u_b, 0.0)?.with_dt(dt);
            let mut gap = (u_a - u_b).abs();
            let mut max_gap_increase = f64::NEG_INFINITY;
            for k in 1..=steps {
                a.step()?;
                b.step()?;
                if k % stride == 0 || k == steps {
                    let next = (a.u() - b.u()).abs();
                    max_gap_increase = max_gap_increase.max(next - gap);
                    gap = next;
                }
            }
            Ok(PairOutcome { u_a, u_b, initial_gap: (u_a - u_b).abs(), period_gap: gap, max_gap_increase })
        })
        .collect()
}

/// One case of a randomized campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseResult {
    pub index: usize,
    /// Quantity that must stay below `bound`.
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub name: String,
    pub seed: u64,
    pub cases: Vec<CaseResult>,
}

impl CampaignReport {
    pub fn violations(&self) -> usize {
        self.cases.iter().filter(|c| !c.passed).count()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }

    /// Largest `value - bound` over the cases.
    pub fn worst_margin(&self) -> f64 {
        self.cases.iter().map(|c| c.value - c.bound).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} cases, {} violations, worst margin {:e} (seed {})",
            self.name,
            self.cases.len(),
            self.violations(),
            self.worst_margin(),
            self.seed
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.summary());
        for c in self.cases.iter().filter(|c| !c.passed) {
            let _ = writeln!(s, "  case {}: value {:e} exceeds bound {:e}", c.index, c.value, c.bound);
        }
        s
    }

    /// Rows `campaign,seed,case,value,bound,passed`; the header is written by the caller.
    pub fn write_csv_rows<W: Write>(&self, mut out: W) -> io::Result<()> {
        for c in &self.cases {
            writeln!(out, "{},{},{},{:?},{:?},{}", self.name, self.seed, c.index, c.value, c.bound, c.passed)?;
        }
        Ok(())
    }
}

pub const CASES_CSV_HEADER: &str = "campaign,seed,case,value,bound,passed";

/// Independent generator for case `index` of a campaign.
fn case_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn random_curve<R: Rng>(rng: &mut R) -> Vec<(f64, f64)> {
    let n = rng.random_range(2..8);
    let mut x = rng.random_range(-3.0..0.0);
    let mut y = rng.random_range(-2.0..2.0);
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push((x, y));
        x += rng.random_range(0.05..1.5);
        // flat stretches exercise the degenerate branches
        if !rng.random_bool(0.25) {
            y += rng.random_range(0.0..2.0);
        }
    }
    pts
}

fn random_extension<R: Rng>(rng: &mut R) -> Extension {
    if rng.random_bool(0.5) {
        Extension::Linear
    } else {
        Extension::Constant
    }
}

/// Random ordered curve pair `gamma_r <= gamma_l`.
pub fn random_curve_pair<R: Rng>(rng: &mut R) -> (PiecewiseLinearCurve, PiecewiseLinearCurve) {
    let right_pts = random_curve(rng);
    let left_raw = random_curve(rng);
    let exts = [random_extension(rng), random_extension(rng), random_extension(rng), random_extension(rng)];
    let gap = rng.random_range(0.0..1.0);
    let build = |exts: [Extension; 4]| {
        let gamma_r = PiecewiseLinearCurve::new(&right_pts, exts[0], exts[1]).expect("generated curve is valid");
        let raw = PiecewiseLinearCurve::new(&left_raw, exts[2], exts[3]).expect("generated curve is valid");
        // lift gamma_l above gamma_r at every breakpoint of either curve
        let lift = right_pts
            .iter()
            .chain(&left_raw)
            .map(|&(x, _)| gamma_r.eval(x) - raw.eval(x))
            .fold(0.0, f64::max)
            + gap;
        let left_pts: Vec<(f64, f64)> = left_raw.iter().map(|&(x, y)| (x, y + lift)).collect();
        let gamma_l = PiecewiseLinearCurve::new(&left_pts, exts[2], exts[3]).expect("generated curve is valid");
        GeneralizedPlay::new(gamma_l.clone(), gamma_r.clone()).ok().map(|_| (gamma_l, gamma_r))
    };
    // far-field slopes may cross; flat extensions always keep the order
    build(exts).unwrap_or_else(|| build([Extension::Constant; 4]).expect("flat extensions are ordered"))
}

/// Random input on `[t0, t1]` with `interior` extra breakpoints.
pub fn random_input<R: Rng>(rng: &mut R, t0: f64, t1: f64, interior: usize) -> PiecewiseLinearInput {
    let mut ts: Vec<f64> = (0..interior).map(|_| rng.random_range(t0..t1)).collect();
    ts.push(t0);
    ts.push(t1);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut u = rng.random_range(-4.0..4.0);
    let points = ts
        .into_iter()
        .map(|t| {
            if !rng.random_bool(0.1) {
                u = rng.random_range(-4.0..4.0);
            }
            (t, u)
        })
        .collect();
    PiecewiseLinearInput::new(points).expect("generated input is valid")
}

fn random_memory<R: Rng>(rng: &mut R, play: &GeneralizedPlay, u0: f64) -> f64 {
    let (lo, hi) = (play.gamma_r().eval(u0), play.gamma_l().eval(u0));
    rng.random_range(lo - 1.0..hi + 1.0)
}

/// Streaming play against [`oracle_play`] at random refinements.
pub fn oracle_campaign(seed: u64, cases: usize) -> CampaignReport {
    let results = (0..cases)
        .into_par_iter()
        .map(|index| {
            let mut rng = case_rng(seed, index);
            let (gl, gr) = random_curve_pair(&mut rng);
            let n = rng.random_range(0..40);
            let input = random_input(&mut rng, 0.0, 10.0, n);
            let refinement = rng.random_range(1..50);
            let mut play = GeneralizedPlay::new(gl.clone(), gr.clone()).expect("ordered pair");
            let w0 = random_memory(&mut rng, &play, input.points()[0].1);
            let expected = oracle_play(&input, &gl, &gr, w0, refinement);
            play.init(input.points()[0].1, w0);
            let got = play.process(&input.values()).expect("initialized");
            let value = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            CaseResult { index, value, bound: EXACT_TOL, passed: value <= EXACT_TOL }
        })
        .collect();
    CampaignReport { name: "oracle_equivalence".into(), seed, cases: results }
}

/// Random input pairs checked against the continuity estimate.
pub fn visintin_campaign(seed: u64, cases: usize) -> CampaignReport {
    let results = (0..cases)
        .into_par_iter()
        .map(|index| {
            let mut rng = case_rng(seed, index);
            let (gl, gr) = random_curve_pair(&mut rng);
            let (n1, n2) = (rng.random_range(0..25), rng.random_range(0..25));
            let a = random_input(&mut rng, 0.0, 5.0, n1);
            let b = random_input(&mut rng, 0.0, 5.0, n2);
            let play = GeneralizedPlay::new(gl.clone(), gr.clone()).expect("ordered pair");
            let w1 = random_memory(&mut rng, &play, a.points()[0].1);
            let w2 = random_memory(&mut rng, &play, b.points()[0].1);
            let mut ts = [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
            ts.sort_by(f64::total_cmp);
            let report = check_visintin_inequality(&a, &b, &gl, &gr, w1, w2, ts[0], ts[1]).expect("valid case");
            CaseResult { index, value: report.lhs, bound: report.rhs, passed: report.holds() }
        })
        .collect();
    CampaignReport { name: "visintin_inequality".into(), seed, cases: results }
}

/// Random strictly increasing warp of `[t0, t1]` onto itself.
pub fn random_warp<R: Rng>(rng: &mut R, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let knots = rng.random_range(0..8);
    let mut ss: Vec<f64> = (0..knots).map(|_| rng.random_range(t0..t1)).collect();
    let mut ts: Vec<f64> = (0..knots).map(|_| rng.random_range(t0..t1)).collect();
    ss.sort_by(f64::total_cmp);
    ts.sort_by(f64::total_cmp);
    let mut warp = vec![(t0, t0)];
    for (s, t) in ss.into_iter().zip(ts) {
        let last = warp[warp.len() - 1];
        if s > last.0 && t > last.1 && s < t1 && t < t1 {
            warp.push((s, t));
        }
    }
    warp.push((t1, t1));
    warp
}

pub fn rate_independence_campaign(seed: u64, cases: usize) -> CampaignReport {
    let results = (0..cases)
        .into_par_iter()
        .map(|index| {
            let mut rng = case_rng(seed, index);
            let (gl, gr) = random_curve_pair(&mut rng);
            let n = rng.random_range(0..30);
            let input = random_input(&mut rng, 0.0, 10.0, n);
            let play = GeneralizedPlay::new(gl, gr).expect("ordered pair");
            let w0 = random_memory(&mut rng, &play, input.points()[0].1);
            let warp = random_warp(&mut rng, 0.0, 10.0);
            let report = check_rate_independence(&play, w0, &input, &warp).expect("valid warp");
            CaseResult { index, value: report.max_deviation, bound: EXACT_TOL, passed: report.holds() }
        })
        .collect();
    CampaignReport { name: "rate_independence".into(), seed, cases: results }
}

/// Seeded start pairs drawn from `range`.
pub fn random_pairs(seed: u64, count: usize, range: (f64, f64)) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (rng.random_range(range.0..range.1), rng.random_range(range.0..range.1))).collect()
}

/// Non-expansion over seeded pairs, split into the period-level and the
/// step-level statements.
pub fn nonexpansive_campaign(config: &SimConfig, seed: u64, count: usize, range: (f64, f64)) -> Result<[CampaignReport; 2]> {
    let outcomes = check_poincare_nonexpansive(config, &random_pairs(seed, count, range))?;
    let period = outcomes
        .iter()
        .enumerate()
        .map(|(index, o)| CaseResult { index, value: o.period_gap, bound: o.initial_gap + INTEGRATED_TOL, passed: o.period_ok() })
        .collect();
    let pointwise = outcomes
        .iter()
        .enumerate()
        .map(|(index, o)| CaseResult { index, value: o.max_gap_increase, bound: INTEGRATED_TOL, passed: o.pointwise_ok() })
        .collect();
    Ok([
        CampaignReport { name: "poincare_period_nonexpansive".into(), seed, cases: period },
        CampaignReport { name: "poincare_pointwise_nonincrease".into(), seed, cases: pointwise },
    ])
}
