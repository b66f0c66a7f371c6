//! Declarative scenario files (TOML).
//!
//! ```toml
//! name = "s5_linear"
//!
//! [[population.types]]          # one table per heater type
//! c_a = 0.57                    # thermal mass, kWh/°C
//! u_a = 0.27                    # conductance, kW/°C
//! x_out = -10.0                 # ambient, °C
//! sigma = 0.15                  # volatility, °C/√h
//! weight = 1.0                  # population share; shares sum to 1
//!
//! [initial]                     # Gaussian initial temperatures
//! mean = 21.0
//! std = 1.0
//!
//! [comfort]
//! l = 17.0
//! h = 25.0
//!
//! [target]
//! y = 20.0
//! direction = "release"         # or "absorb"; picks z = l or z = h
//!
//! [costs]
//! delta = 0.001
//! q_x0 = 200.0
//! r = 10.0
//! q_lq = 200.0                  # baseline tracker weight
//!
//! [g]
//! kind = "linear"               # or "exp"
//! mu = "auto"                   # a number, or "auto" to run the gain search
//! beta = 3.0                    # exp only
//!
//! [grid]
//! dt = 0.001                    # h
//! t_max = 6.0                   # h
//!
//! [sim]
//! n = 200
//! t = 3.0                       # h
//! seed = 20240501
//!
//! [algo1]                       # all keys optional
//! n1 = 1.05
//! n2 = 1.3
//! t0 = 0.4
//!
//! [picard]                      # optional
//! [robustness]                  # optional: true model and switch rule
//! [[segments]]                  # optional: y and duration per segment
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lqg::CostParams;
use crate::near_fp::Algo1Params;
use crate::operators::PicardParams;
use crate::population::{
    derive_rates, ComfortBand, Direction, GFunction, HeaterType, InitialDistribution, TypeDistribution,
};
use crate::scenario::Scenario;
use crate::sim::SwitchRule;

const S5_LINEAR: &str = include_str!("../configs/s5_linear.toml");
const S5_EXP: &str = include_str!("../configs/s5_exp.toml");
const S5_SEGMENTS: &str = include_str!("../configs/s5_segments.toml");

/// Names of the configurations shipped with the crate.
pub const BUNDLED: [&str; 3] = ["s5_linear", "s5_exp", "s5_segments"];

pub fn bundled_source(name: &str) -> Option<&'static str> {
    match name {
        "s5_linear" => Some(S5_LINEAR),
        "s5_exp" => Some(S5_EXP),
        "s5_segments" => Some(S5_SEGMENTS),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    pub c_a: f64,
    pub u_a: f64,
    pub x_out: f64,
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub types: Vec<TypeConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComfortConfig {
    pub l: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub y: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GKind {
    Linear,
    Exp,
}

/// A fixed gain or the word `"auto"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuSetting {
    Value(f64),
    Word(String),
}

impl MuSetting {
    pub fn is_auto(&self) -> bool {
        matches!(self, MuSetting::Word(w) if w == "auto")
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MuSetting::Value(v) => Some(*v),
            MuSetting::Word(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GConfig {
    pub kind: GKind,
    pub mu: MuSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub n: usize,
    pub t: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Algo1Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_init: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

/// The model the controllers are designed on differs from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub true_mean: f64,
    pub true_x_out: f64,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_range")]
    pub range: f64,
}

fn default_window() -> f64 {
    SwitchRule::default().window
}

fn default_range() -> f64 {
    SwitchRule::default().range
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub y: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub population: PopulationConfig,
    pub initial: InitialConfig,
    pub comfort: ComfortConfig,
    pub target: TargetConfig,
    pub costs: CostParams,
    pub g: GConfig,
    pub grid: GridConfig,
    pub sim: SimSettings,
    #[serde(default)]
    pub algo1: Algo1Config,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SegmentConfig>,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ScenarioConfig {
    /// Parses and validates; every violated invariant is reported.
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let types = &self.population.types;
        if types.is_empty() {
            v.push("population: at least one heater type is required".into());
        }
        for (i, t) in types.iter().enumerate() {
            if let Err(e) = derive_rates(t.c_a, t.u_a, t.x_out, t.sigma) {
                v.push(format!("population.types[{i}]: {e}"));
            }
            if !(t.sigma >= 0.0) {
                v.push(format!("population.types[{i}]: sigma must be nonnegative"));
            }
            if !(t.weight > 0.0) {
                v.push(format!("population.types[{i}]: weight must be positive, got {}", t.weight));
            }
        }
        let total: f64 = types.iter().map(|t| t.weight).sum();
        if !types.is_empty() && (total - 1.0).abs() > 1e-12 {
            v.push(format!("population: type weights sum to {total}, expected 1"));
        }
        if !(self.initial.std >= 0.0) {
            v.push(format!("initial: std must be nonnegative, got {}", self.initial.std));
        }
        let (l, h, x0, y) = (self.comfort.l, self.comfort.h, self.initial.mean, self.target.y);
        if !(l < h) {
            v.push(format!("comfort: need l < h (got l={l}, h={h})"));
        } else {
            if !(l <= x0 && x0 <= h) {
                v.push(format!("initial: mean {x0} outside comfort band [{l}, {h}]"));
            }
            let z = match self.target.direction {
                Direction::Release => l,
                Direction::Absorb => h,
            };
            let ordered = match self.target.direction {
                Direction::Release => z <= y && y <= x0,
                Direction::Absorb => x0 <= y && y <= z,
            };
            if !ordered {
                v.push(format!("target: y={y} must lie between z={z} and the initial mean {x0}"));
            }
            if y == z {
                v.push(format!("target: y coincides with the boundary target z={z}"));
            }
        }
        v.extend(self.costs.violations().into_iter().map(|m| format!("costs: {m}")));
        match &self.g.mu {
            MuSetting::Value(m) if !(*m > 0.0) => v.push(format!("g: mu must be positive, got {m}")),
            MuSetting::Word(w) if w != "auto" => v.push(format!("g: mu must be a number or \"auto\", got \"{w}\"")),
            _ => {}
        }
        match (self.g.kind, self.g.beta) {
            (GKind::Exp, None) => v.push("g: exp kind requires beta".into()),
            (GKind::Exp, Some(b)) if !(b > 0.0) => v.push(format!("g: beta must be positive, got {b}")),
            _ => {}
        }
        if self.g.mu.is_auto() && types.len() > 1 {
            v.push("g: mu = \"auto\" needs a single heater type".into());
        }
        if !(self.grid.dt > 0.0) || !(self.grid.t_max > self.grid.dt) {
            v.push(format!("grid: need 0 < dt < t_max (got dt={}, t_max={})", self.grid.dt, self.grid.t_max));
        }
        if self.sim.n == 0 {
            v.push("sim: n must be at least 1".into());
        }
        if !(self.sim.t > 0.0 && self.sim.t <= self.grid.t_max + 1e-12) {
            v.push(format!("sim: t must lie in (0, t_max], got {}", self.sim.t));
        }
        v.extend(self.algo1_params().violations().into_iter().map(|m| format!("algo1: {m}")));
        let p = self.picard_params();
        if !(p.damping > 0.0 && p.damping <= 1.0) {
            v.push(format!("picard: damping must lie in (0, 1], got {}", p.damping));
        }
        if let Some(r) = &self.robustness {
            if !(r.window > 0.0 && r.range > 0.0) {
                v.push("robustness: window and range must be positive".into());
            }
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0) {
                v.push(format!("segments[{i}]: duration must be positive"));
            }
            if !(l <= s.y && s.y <= h) {
                v.push(format!("segments[{i}]: y={} outside comfort band", s.y));
            }
        }
        v
    }

    pub fn heater_types(&self) -> Result<Vec<HeaterType>> {
        self.population
            .types
            .iter()
            .map(|t| derive_rates(t.c_a, t.u_a, t.x_out, t.sigma))
            .collect()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let dist = TypeDistribution::new(
            self.heater_types()?,
            self.population.types.iter().map(|t| t.weight).collect(),
        )?;
        let init = InitialDistribution::new(self.initial.mean, self.initial.std)?;
        let band = ComfortBand::new(
            self.comfort.l,
            self.comfort.h,
            self.target.y,
            self.initial.mean,
            self.target.direction,
        )?;
        let cost = CostParams::new(self.costs.delta, self.costs.q_x0, self.costs.r, self.costs.q_lq)?;
        let grid = TimeGrid::with_horizon(self.grid.dt, self.grid.t_max)?;
        Scenario::new(dist, init, band, cost, grid)
    }

    /// Pressure function with gain `mu`; the clamp interval comes from the
    /// configured scenario.
    pub fn g_with_mu(&self, mu: f64) -> Result<GFunction> {
        match self.g.kind {
            GKind::Linear => GFunction::linear(mu),
            GKind::Exp => {
                let z = match self.target.direction {
                    Direction::Release => self.comfort.l,
                    Direction::Absorb => self.comfort.h,
                };
                GFunction::exp_clamped(mu, self.g.beta.unwrap_or(f64::NAN), z, self.target.y, self.initial.mean)
            }
        }
    }

    pub fn algo1_params(&self) -> Algo1Params {
        let d = Algo1Params::default();
        let a = &self.algo1;
        Algo1Params {
            n1: a.n1.unwrap_or(d.n1),
            n2: a.n2.unwrap_or(d.n2),
            t0: a.t0.unwrap_or(d.t0),
            d_mu: a.d_mu.unwrap_or(d.d_mu),
            e1: a.e1.unwrap_or(d.e1),
            e2: a.e2.unwrap_or(d.e2),
            gamma: a.gamma.unwrap_or(d.gamma),
            mu_init: a.mu_init,
            max_iter: d.max_iter,
        }
    }

    pub fn picard_params(&self) -> PicardParams {
        let d = PicardParams::default();
        PicardParams {
            tol: self.picard.tol.unwrap_or(d.tol),
            max_iter: self.picard.max_iter.unwrap_or(d.max_iter),
            damping: self.picard.damping.unwrap_or(d.damping),
        }
    }

    pub fn switch_rule(&self) -> SwitchRule {
        self.robustness.map_or_else(SwitchRule::default, |r| SwitchRule {
            window: r.window,
            range: r.range,
        })
    }

    /// The true model of a robustness run: shifted initial mean and
    /// ambient, everything else shared.
    pub fn true_scenario(&self) -> Result<Option<Scenario>> {
        let Some(r) = self.robustness else {
            return Ok(None);
        };
        let mut truth = self.clone();
        truth.initial.mean = r.true_mean;
        for t in &mut truth.population.types {
            t.x_out = r.true_x_out;
        }
        let s = truth.scenario()?;
        Ok(Some(s))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml(&src)
}

/// A bundled name or a path to a TOML file.
pub fn load_named(name_or_path: &str) -> Result<ScenarioConfig> {
    match bundled_source(name_or_path) {
        Some(src) => ScenarioConfig::from_toml(src),
        None => load_config(name_or_path),
    }
}

/// Derives an independent seed for a named sub-task from the config seed:
/// FNV-1a of the label, mixed into the seed by one SplitMix64 round.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
