//! Experiment files in TOML.
//!
//! ```toml
//! [model]
//! offset = 0.0
//! [[model.elements]]
//! weight = 1.0
//! rho = 0.25
//! sat_lo = 0.0
//! sat_hi = 1.5
//!
//! [signal]
//! kind = "step"
//! t_on = 0.1
//! level_before = 0.0
//! level = 2.0
//!
//! [solver]
//! gains = [10.0, 50.0]
//! dt = 1e-6
//! t_end = 2.0
//! ```
//!
//! Elements either give `rho` with optional `sat_lo`/`sat_hi`/`scale`
//! (saturated play) or explicit `gamma_l`/`gamma_r` curve tables.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curves::{Extension, PiecewiseLinearCurve};
use crate::error::{Error, Result};
use crate::kp_model::{make_saturated_play, InitialMemory, KpModel, PlayElement};
use crate::play::GeneralizedPlay;
use crate::signals::SignalSpec;
use crate::simulator::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub signal: SignalSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub offset: f64,
    pub elements: Vec<ElementConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementConfig {
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_l: Option<CurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_r: Option<CurveConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub points: Vec<[f64; 2]>,
    #[serde(default = "constant")]
    pub left: Extension,
    #[serde(default = "constant")]
    pub right: Extension,
}

fn constant() -> Extension {
    Extension::Constant
}

impl CurveConfig {
    fn build(&self) -> Result<PiecewiseLinearCurve> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p[0], p[1])).collect();
        PiecewiseLinearCurve::new(&pts, self.left, self.right)
    }
}

impl ElementConfig {
    pub fn saturated(weight: f64, rho: f64, sat_lo: f64, sat_hi: f64) -> Self {
        Self { weight, rho: Some(rho), sat_lo: Some(sat_lo), sat_hi: Some(sat_hi), scale: None, gamma_l: None, gamma_r: None }
    }

    fn build(&self) -> Result<PlayElement> {
        let saturated = self.rho.is_some() || self.sat_lo.is_some() || self.sat_hi.is_some() || self.scale.is_some();
        let play = match (&self.gamma_l, &self.gamma_r) {
            (Some(l), Some(r)) if !saturated => GeneralizedPlay::new(l.build()?, r.build()?)?,
            (None, None) => {
                let rho = self.rho.ok_or_else(|| Error::Config("element needs `rho` or a `gamma_l`/`gamma_r` pair".into()))?;
                make_saturated_play(
                    rho,
                    self.sat_lo.unwrap_or(f64::NEG_INFINITY),
                    self.sat_hi.unwrap_or(f64::INFINITY),
                    self.scale.unwrap_or(1.0),
                )?
            }
            _ => return Err(Error::Config("element mixes curve tables with saturated-play fields, or gives only one curve".into())),
        };
        PlayElement::new(self.weight, play)
    }
}

/// `"virgin"` or one memory per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MemoryConfig {
    Rule(String),
    Explicit(Vec<f64>),
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig::Rule("virgin".into())
    }
}

impl MemoryConfig {
    fn build(&self) -> Result<InitialMemory> {
        match self {
            MemoryConfig::Rule(r) if r == "virgin" => Ok(InitialMemory::Virgin),
            MemoryConfig::Rule(r) => Err(Error::Config(format!("solver.memory: unknown rule {r:?}, expected \"virgin\" or a list"))),
            MemoryConfig::Explicit(ws) => Ok(InitialMemory::Explicit(ws.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub gains: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub u0: f64,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
}

fn default_dt() -> f64 {
    crate::simulator::DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Fit window for the decay rate; found from `|e|` thresholds when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_window: Option<[f64; 2]>,
    pub omega_limit_tol: f64,
    /// Levels for `equilibria`; defaults to the signal's limit or extremes.
    pub levels: Vec<f64>,
    pub periodic_tol: f64,
    pub periodic_max_iter: usize,
    /// Angular frequencies for `sweep`; the signal's own when empty.
    pub sweep_omegas: Vec<f64>,
    pub steady_rel_tol: f64,
    pub steady_max_periods: usize,
    pub steady_eval_periods: usize,
    pub seed: u64,
    pub oracle_cases: usize,
    pub visintin_cases: usize,
    pub warp_cases: usize,
    pub pair_count: usize,
    pub pair_range: [f64; 2],
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            rate_window: None,
            omega_limit_tol: 1e-4,
            levels: Vec::new(),
            periodic_tol: 1e-9,
            periodic_max_iter: 50,
            sweep_omegas: Vec::new(),
            steady_rel_tol: 1e-6,
            steady_max_periods: 50,
            steady_eval_periods: 1,
            seed: 42,
            oracle_cases: 1000,
            visintin_cases: 1000,
            warp_cases: 100,
            pair_count: 10,
            pair_range: [-2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), plots: true }
    }
}

fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {item:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let dotted = path.join(".");
    let missing = || Error::Config(format!("override key `{dotted}` does not exist"));
    let (leaf, parents) = path.split_last().ok_or_else(missing)?;
    let mut node: &mut toml::Value = root.get_mut(&parents.first().cloned().unwrap_or_else(|| leaf.clone())).ok_or_else(missing)?;
    if parents.is_empty() {
        *node = value;
        return Ok(());
    }
    for part in parents.iter().skip(1).chain(std::iter::once(leaf)) {
        node = match node {
            toml::Value::Table(t) => t.get_mut(part).ok_or_else(missing)?,
            toml::Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| missing())?;
                a.get_mut(i).ok_or_else(missing)?
            }
            _ => return Err(missing()),
        };
    }
    *node = value;
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses, applies dotted `key=value` overrides and validates.
    ///
    /// Overrides address keys of the fully defaulted config, so optional
    /// blocks left out of the file can still be overridden.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !overrides.is_empty() {
            let mut table: toml::Table = toml::Table::try_from(&config).map_err(|e| Error::Config(e.to_string()))?;
            for item in overrides {
                let (path, value) = parse_override(item)?;
                apply_override(&mut table, &path, value)?;
            }
            config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.build_model()?;
        if self.solver.gains.is_empty() {
            return Err(Error::Config("solver.gains must not be empty".into()));
        }
        for &k in &self.solver.gains {
            self.sim_config_with(&model, k)
                .validate()
                .map_err(|e| Error::Config(format!("solver: {e}")))?;
        }
        self.solver.memory.build()?;
        let a = &self.analysis;
        if let Some([lo, hi]) = a.rate_window {
            if !(lo < hi) {
                return Err(Error::Config(format!("analysis.rate_window: {lo} is not below {hi}")));
            }
        }
        if !(a.pair_range[0] < a.pair_range[1]) {
            return Err(Error::Config("analysis.pair_range must be increasing".into()));
        }
        for (name, v) in [("omega_limit_tol", a.omega_limit_tol), ("periodic_tol", a.periodic_tol), ("steady_rel_tol", a.steady_rel_tol)] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("analysis.{name} must be positive, got {v}")));
            }
        }
        if a.sweep_omegas.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Config("analysis.sweep_omegas must be positive".into()));
        }
        if a.periodic_max_iter == 0 || a.steady_max_periods == 0 || a.steady_eval_periods == 0 {
            return Err(Error::Config("analysis iteration and period counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<KpModel> {
        let elements = self
            .model
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| e.build().map_err(|err| Error::Config(format!("model.elements[{i}]: {err}"))))
            .collect::<Result<Vec<_>>>()?;
        KpModel::new(elements, self.model.offset).map_err(|e| Error::Config(format!("model: {e}")))
    }

    fn sim_config_with(&self, model: &KpModel, gain: f64) -> SimConfig {
        let s = &self.solver;
        SimConfig {
            gain,
            dt: s.dt,
            t_end: s.t_end,
            u0: s.u0,
            memory: s.memory.build().unwrap_or(InitialMemory::Virgin),
            model: model.clone(),
            signal: self.signal.clone(),
            record_stride: s.record_stride,
        }
    }

    /// Simulation setup for one gain.
    pub fn sim_config(&self, gain: f64) -> Result<SimConfig> {
        Ok(self.sim_config_with(&self.build_model()?, gain))
    }
}
