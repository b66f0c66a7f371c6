//! Heater physics, agent types, initial conditions and the pressure function.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First-order thermal model of one dwelling: decay rate `a` (1/h), control
/// gain `b` (°C per kWh), ambient temperature and noise volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeaterType {
    pub a: f64,
    pub b: f64,
    pub x_out: f64,
    pub sigma: f64,
}

impl HeaterType {
    pub fn new(a: f64, b: f64, x_out: f64, sigma: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) || !(sigma >= 0.0) || !x_out.is_finite() {
            return Err(Error::invalid(format!(
                "heater type needs a > 0, b > 0, sigma >= 0 (got a={a}, b={b}, sigma={sigma})"
            )));
        }
        Ok(Self { a, b, x_out, sigma })
    }

    /// `b^2 / r`, the factor that appears in every closed-loop expression.
    pub fn gain_sq_over(&self, r: f64) -> f64 {
        self.b * self.b / r
    }
}

/// Builds a [`HeaterType`] from the thermal mass `c_a` (kWh/°C) and wall
/// conductance `u_a` (kW/°C).
pub fn derive_rates(c_a: f64, u_a: f64, x_out: f64, sigma: f64) -> Result<HeaterType> {
    if !(c_a > 0.0) {
        return Err(Error::invalid(format!("thermal mass C_a must be positive, got {c_a}")));
    }
    if !(u_a > 0.0) {
        return Err(Error::invalid(format!("conductance U_a must be positive, got {u_a}")));
    }
    HeaterType::new(u_a / c_a, 1.0 / c_a, x_out, sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    types: Vec<HeaterType>,
    weights: Vec<f64>,
}

impl TypeDistribution {
    pub fn new(types: Vec<HeaterType>, weights: Vec<f64>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::invalid("population needs at least one heater type"));
        }
        if types.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} heater types but {} weights",
                types.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::invalid(format!("type weights must be positive, got {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("type weights sum to {total}, expected 1")));
        }
        Ok(Self { types, weights })
    }

    pub fn uniform(ty: HeaterType) -> Self {
        Self {
            types: vec![ty],
            weights: vec![1.0],
        }
    }

    pub fn types(&self) -> &[HeaterType] {
        &self.types
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HeaterType, f64)> {
        self.types.iter().zip(self.weights.iter().copied())
    }

    pub fn min_a(&self) -> f64 {
        self.types.iter().map(|t| t.a).fold(f64::INFINITY, f64::min)
    }

    /// Same weights, every type replaced through `f`.
    pub fn map_types(&self, f: impl Fn(&HeaterType) -> HeaterType) -> Self {
        Self {
            types: self.types.iter().map(f).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Gaussian law of initial temperatures. Samples are not truncated to the
/// comfort band; only the mean is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution {
    pub mean: f64,
    pub std: f64,
}

impl InitialDistribution {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !(std >= 0.0) {
            return Err(Error::invalid(format!(
                "initial distribution needs finite mean and std >= 0 (got {mean}, {std})"
            )));
        }
        Ok(Self { mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Collective temperature decrease; the boundary target is `l`.
    Release,
    /// Collective temperature increase; the boundary target is `h`.
    Absorb,
}

impl Direction {
    /// Direction implied by moving the mean from `x0_bar` to `y`.
    pub fn between(x0_bar: f64, y: f64) -> Self {
        if y <= x0_bar {
            Direction::Release
        } else {
            Direction::Absorb
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBand {
    pub l: f64,
    pub h: f64,
    pub z: f64,
    pub y: f64,
}

impl ComfortBand {
    /// Checks `l < h`, `l <= y <= h` and `l <= x0_bar <= h`, and picks `z`
    /// from the direction. The target must lie between `z` and `x0_bar`.
    pub fn new(l: f64, h: f64, y: f64, x0_bar: f64, direction: Direction) -> Result<Self> {
        if !(l < h) {
            return Err(Error::invalid(format!("comfort band needs l < h (got l={l}, h={h})")));
        }
        if !(l <= x0_bar && x0_bar <= h) {
            return Err(Error::invalid(format!(
                "initial mean {x0_bar} outside comfort band [{l}, {h}]"
            )));
        }
        let z = match direction {
            Direction::Release => l,
            Direction::Absorb => h,
        };
        let ordered = match direction {
            Direction::Release => z <= y && y <= x0_bar,
            Direction::Absorb => x0_bar <= y && y <= z,
        };
        if !ordered {
            return Err(Error::invalid(format!(
                "target y={y} must lie between z={z} and the initial mean {x0_bar}"
            )));
        }
        Ok(Self { l, h, z, y })
    }
}

/// Pressure function `g` driving the integral cost coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GFunction {
    Linear { mu: f64 },
    /// `mu (exp(beta x) - 1)` on `[lo, hi]`, frozen at the end values outside.
    ExpClamped { mu: f64, beta: f64, lo: f64, hi: f64 },
}

impl GFunction {
    pub fn linear(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("g gain mu must be positive, got {mu}")));
        }
        Ok(GFunction::Linear { mu })
    }

    /// Clamp interval is fixed once from the scenario: the span between
    /// `z - y` and `x0_bar - y`.
    pub fn exp_clamped(mu: f64, beta: f64, z: f64, y: f64, x0_bar: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("g gain mu must be positive, got {mu}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("g exponent beta must be positive, got {beta}")));
        }
        let (a, b) = (z - y, x0_bar - y);
        Ok(GFunction::ExpClamped {
            mu,
            beta,
            lo: a.min(b),
            hi: a.max(b),
        })
    }

    pub fn mu(&self) -> f64 {
        match *self {
            GFunction::Linear { mu } | GFunction::ExpClamped { mu, .. } => mu,
        }
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        match *self {
            GFunction::Linear { .. } => GFunction::Linear { mu },
            GFunction::ExpClamped { beta, lo, hi, .. } => GFunction::ExpClamped { mu, beta, lo, hi },
        }
    }

    /// Same shape with unit gain.
    pub fn unit(&self) -> Self {
        self.with_mu(1.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            GFunction::Linear { mu } => mu * x,
            GFunction::ExpClamped { mu, beta, lo, hi } => mu * ((beta * x.clamp(lo, hi)).exp() - 1.0),
        }
    }

    /// Lipschitz constant on the scenario interval.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            GFunction::Linear { mu } => mu,
            GFunction::ExpClamped { mu, beta, hi, .. } => mu * beta * (beta * hi).exp(),
        }
    }

    /// A constant `C` with `|g(x)| <= C (1 + |x|)` for every real `x`.
    pub fn growth_constant(&self) -> f64 {
        match *self {
            GFunction::Linear { mu } => mu,
            GFunction::ExpClamped { mu, beta, lo, hi } => {
                let edge = self.eval(lo).abs().max(self.eval(hi).abs());
                mu.max(edge) + mu * 1f64.max(beta * (beta * hi).exp())
            }
        }
    }

    /// `max |g(x)|` over `|x| <= d`.
    pub fn max_abs_on(&self, d: f64) -> f64 {
        let d = d.abs();
        match *self {
            GFunction::Linear { mu } => mu * d,
            GFunction::ExpClamped { lo, hi, .. } => {
                // monotone, so the extremes sit at the (clamped) ends
                let left = (-d).max(lo).min(hi);
                let right = d.min(hi).max(lo);
                self.eval(left).abs().max(self.eval(right).abs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub type_index: usize,
    pub x0: f64,
    pub x: f64,
}

impl Agent {
    pub fn new(type_index: usize, x0: f64) -> Self {
        Self {
            type_index,
            x0,
            x: x0,
        }
    }
}

/// Free power that holds the dwelling at its initial temperature.
pub fn u_free(agent: &Agent, ty: &HeaterType) -> f64 {
    ty.a * (agent.x0 - ty.x_out) / ty.b
}

/// Deterministic part of the temperature dynamics with free power included.
pub fn drift(x: f64, u: f64, agent: &Agent, ty: &HeaterType) -> f64 {
    -ty.a * (x - ty.x_out) + ty.b * (u + u_free(agent, ty))
}

/// Draws `n` agents: type from the weights, initial temperature Gaussian.
pub fn sample_population(
    dist: &TypeDistribution,
    init: &InitialDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<Agent>> {
    if n == 0 {
        return Err(Error::invalid("population size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = WeightedIndex::new(dist.weights()).map_err(|e| Error::invalid(e.to_string()))?;
    let normal = Normal::new(init.mean, init.std).map_err(|e| Error::invalid(e.to_string()))?;
    let single = dist.len() == 1;
    Ok((0..n)
        .map(|_| {
            let type_index = if single { 0 } else { types.sample(&mut rng) };
            let x0 = if init.std == 0.0 { init.mean } else { normal.sample(&mut rng) };
            Agent::new(type_index, x0)
        })
        .collect())
}

/// Noise-free population: type counts follow the weights (largest
/// remainder) and initial temperatures sit at the mid-point quantiles
/// `Φ⁻¹((i + ½)/n)` of each type's share, so the sample mean is the
/// distribution mean up to rounding.
pub fn stratified_population(dist: &TypeDistribution, init: &InitialDistribution, n: usize) -> Result<Vec<Agent>> {
    use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
    if n == 0 {
        return Err(Error::invalid("population size must be at least 1"));
    }
    let exact: Vec<f64> = dist.weights().iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    let unit = StdNormal::new(0.0, 1.0).expect("standard normal");
    let mut agents = Vec::with_capacity(n);
    for (type_index, &m) in counts.iter().enumerate() {
        for i in 0..m {
            let p = (i as f64 + 0.5) / m as f64;
            agents.push(Agent::new(type_index, init.mean + init.std * unit.inverse_cdf(p)));
        }
    }
    Ok(agents)
}
