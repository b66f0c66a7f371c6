//! The mean-field map and the quantities used to analyse it.
//!
//! `delta_op` turns a candidate mean into the pressure coefficient, `t_op`
//! turns a pressure coefficient into one type's closed-loop mean, and
//! `m_op` mixes the types. A fixed point of `m_op` is a mean-field
//! equilibrium.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cubic_at, TimeGrid, Trajectory};
use crate::lqg::{self, CostParams};
use crate::population::{GFunction, HeaterType};
use crate::scenario::Scenario;

/// Inputs this close to the band are clipped instead of rejected.
const CLIP_TOL: f64 = 1e-9;

/// `q_t = |∫_0^t g(x̄ - y)|` by the running trapezoid rule.
pub fn delta_op(x_bar: &Trajectory, g: &GFunction, y: f64) -> Trajectory {
    x_bar.map(|v| g.eval(v - y)).running_integral().map(f64::abs)
}

/// Riccati solution, offset and closed-loop mean of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSolution {
    pub pi: Trajectory,
    pub alpha: Trajectory,
    pub x_bar: Trajectory,
}

pub fn t_op_full(q: &Trajectory, ty: &HeaterType, cost: &CostParams, x0_bar: f64, z: f64) -> Result<TypeSolution> {
    let pi = lqg::solve_riccati(q, ty, cost)?;
    let alpha = lqg::solve_offset(&pi, x0_bar, ty, cost, z)?;
    let x_bar = lqg::forward_mean(&pi, &alpha, ty, cost, x0_bar, z)?;
    Ok(TypeSolution { pi, alpha, x_bar })
}

pub fn t_op(q: &Trajectory, ty: &HeaterType, cost: &CostParams, x0_bar: f64, z: f64) -> Result<Trajectory> {
    Ok(t_op_full(q, ty, cost, x0_bar, z)?.x_bar)
}

// 4-point Gauss-Legendre on [0, 1]
const GL_X: [f64; 4] = [0.069_431_844_202_973_71, 0.330_009_478_207_571_87, 0.669_990_521_792_428_1, 0.930_568_155_797_026_3];
const GL_W: [f64; 4] = [0.173_927_422_568_726_93, 0.326_072_577_431_273_07, 0.326_072_577_431_273_07, 0.173_927_422_568_726_93];

/// Quadratic through start, midpoint and end of one step; returns its
/// antiderivative (times `dt`) from 0 to `theta`.
#[derive(Clone, Copy)]
struct StepRate {
    c0: f64,
    c1: f64,
    c2: f64,
    dt: f64,
}

impl StepRate {
    fn new(a0: f64, am: f64, a1: f64, dt: f64) -> Self {
        Self {
            c0: a0,
            c1: -3.0 * a0 + 4.0 * am - a1,
            c2: 2.0 * a0 - 4.0 * am + 2.0 * a1,
            dt,
        }
    }

    fn integral(&self, theta: f64) -> f64 {
        self.dt * theta * (self.c0 + theta * (self.c1 / 2.0 + theta * self.c2 / 3.0))
    }
}

/// Closed-form kernel representation of `T ∘ Δ`: the mean is written as
/// `z + φ(t,0)(x̄0 - z) + C ∫_0^t φ(t,η) ∫_η^∞ ψ(τ,η) dτ dη`, with
/// `φ(t,η) = exp(-∫_η^t (a + Bπ))` and `ψ` the same with `δ` added.
/// The inner integral past the horizon uses the constant extension of π.
/// Shares only the Riccati solve with [`t_op`].
pub fn t_delta_explicit(
    x_bar: &Trajectory,
    ty: &HeaterType,
    g: &GFunction,
    y: f64,
    cost: &CostParams,
    x0_bar: f64,
    z: f64,
) -> Result<Trajectory> {
    let q = delta_op(x_bar, g, y);
    let pi = lqg::solve_riccati(&q, ty, cost)?;
    let n = pi.grid.n_steps;
    let dt = pi.dt();
    let bb = ty.gain_sq_over(cost.r);
    let d = cost.delta;
    let rate = |p: f64| ty.a + bb * p;
    let steps: Vec<StepRate> = (0..n)
        .map(|i| StepRate::new(rate(pi.values[i]), rate(pi.midpoint(i)), rate(pi.values[i + 1]), dt))
        .collect();
    let c = (bb * cost.q_x0 + ty.a * ty.a + ty.a * d) * (x0_bar - z);

    // I(η) = ∫_η^∞ ψ(τ,η) dτ, backward
    let mut inner = vec![0.0; n + 1];
    inner[n] = 1.0 / (rate(pi.last()) + d);
    for i in (0..n).rev() {
        let s = &steps[i];
        let full = s.integral(1.0) + d * dt;
        let step: f64 = GL_X
            .iter()
            .zip(GL_W)
            .map(|(&x, w)| w * (-(s.integral(x) + d * x * dt)).exp())
            .sum::<f64>()
            * dt;
        inner[i] = step + (-full).exp() * inner[i + 1];
    }

    // J(t) = ∫_0^t φ(t,η) I(η) dη, forward
    let mut out = vec![0.0; n + 1];
    out[0] = x0_bar;
    let mut j = 0.0;
    let mut phi0 = 0.0; // ∫_0^t A
    for i in 0..n {
        let s = &steps[i];
        let full = s.integral(1.0);
        let step: f64 = GL_X
            .iter()
            .zip(GL_W)
            .map(|(&x, w)| w * (-(full - s.integral(x))).exp() * cubic_at(&inner, i, x))
            .sum::<f64>()
            * dt;
        j = (-full).exp() * j + step;
        phi0 += full;
        out[i + 1] = z + (-phi0).exp() * (x0_bar - z) + c * j;
    }
    Trajectory::new(pi.grid, out)
}

/// Brings `x_bar` into `G`, tolerating float noise of [`CLIP_TOL`].
pub fn clip_to_g(x_bar: &Trajectory, scenario: &Scenario) -> Result<Trajectory> {
    let (lo, hi) = scenario.g_bounds();
    if let Some((i, v)) = x_bar
        .values
        .iter()
        .enumerate()
        .find(|(_, v)| **v < lo - CLIP_TOL || **v > hi + CLIP_TOL)
    {
        return Err(Error::Domain(format!(
            "mean {v} at t = {} outside [{lo}, {hi}]",
            x_bar.grid.time(i)
        )));
    }
    Ok(x_bar.map(|v| v.clamp(lo, hi)))
}

/// Output of one application of the mean-field map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MOutput {
    pub x_bar: Trajectory,
    pub q_y: Trajectory,
    pub per_type: Vec<TypeSolution>,
}

pub fn m_op_full(x_bar: &Trajectory, scenario: &Scenario, g: &GFunction) -> Result<MOutput> {
    let x = clip_to_g(x_bar, scenario)?;
    let q = delta_op(&x, g, scenario.y());
    let per_type: Vec<TypeSolution> = scenario
        .dist
        .types()
        .par_iter()
        .map(|ty| t_op_full(&q, ty, &scenario.cost, scenario.x0_bar(), scenario.z()))
        .collect::<Result<_>>()?;
    // fixed-order reduction keeps the sum reproducible
    let mut mean = vec![0.0; x.len()];
    for (sol, w) in per_type.iter().zip(scenario.dist.weights()) {
        for (m, v) in mean.iter_mut().zip(&sol.x_bar.values) {
            *m += w * v;
        }
    }
    Ok(MOutput {
        x_bar: Trajectory::new(x.grid, mean)?,
        q_y: q,
        per_type,
    })
}

/// `M = Σ_s n_s T^s ∘ Δ`.
pub fn m_op(x_bar: &Trajectory, scenario: &Scenario, g: &GFunction) -> Result<Trajectory> {
    Ok(m_op_full(x_bar, scenario, g)?.x_bar)
}

/// Exponential weight of the tail-suppressing sup-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormK {
    k: f64,
}

impl NormK {
    /// Requires `0 < k < min_s a^s + δ`.
    pub fn new(k: f64, scenario: &Scenario) -> Result<Self> {
        let cap = scenario.dist.min_a() + scenario.cost.delta;
        if !(k > 0.0 && k < cap) {
            return Err(Error::invalid(format!("norm weight k = {k} must lie in (0, {cap})")));
        }
        Ok(Self { k })
    }

    /// Midpoint of the admissible range.
    pub fn default_for(scenario: &Scenario) -> Self {
        Self {
            k: 0.5 * (scenario.dist.min_a() + scenario.cost.delta),
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

/// `sup_t e^{-kt} |x_t|` over the grid.
pub fn norm_k(x: &Trajectory, k: NormK) -> f64 {
    x.values
        .iter()
        .enumerate()
        .fold(0.0_f64, |m, (i, v)| m.max((-k.k * x.grid.time(i)).exp() * v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    pub x_bar: Trajectory,
    pub per_type: Vec<TypeSolution>,
    pub q_y: Trajectory,
    pub residual_k: f64,
    pub residual_l2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `‖x_n - M(x_n)‖_k` for every iterate evaluated.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardParams {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for PicardParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            damping: 0.5,
        }
    }
}

/// Damped fixed-point iteration `x <- (1-θ)x + θ M(x)`.
///
/// The returned solution is the best iterate seen, with its own `M` image
/// supplying the per-type laws and the pressure coefficient.
pub fn picard_iterate(
    x_init: &Trajectory,
    scenario: &Scenario,
    g: &GFunction,
    k: NormK,
    params: PicardParams,
) -> Result<MeanFieldSolution> {
    if !(params.damping > 0.0 && params.damping <= 1.0) {
        return Err(Error::invalid(format!("damping must lie in (0, 1], got {}", params.damping)));
    }
    let mut x = clip_to_g(x_init, scenario)?;
    let mut history = Vec::new();
    let mut best: Option<(f64, Trajectory, MOutput)> = None;
    let mut converged = false;
    for _ in 0..=params.max_iter {
        let out = m_op_full(&x, scenario, g)?;
        let res = norm_k(&x.sub(&out.x_bar), k);
        history.push(res);
        if best.as_ref().map_or(true, |(r, _, _)| res < *r) {
            best = Some((res, x.clone(), out.clone()));
        }
        if res < params.tol {
            converged = true;
            break;
        }
        let th = params.damping;
        x = clip_to_g(&x.zip_with(&out.x_bar, |a, b| (1.0 - th) * a + th * b), scenario)?;
    }
    let (residual_k, x_bar, out) = best.expect("at least one iterate");
    let residual_l2 = x_bar.sub(&out.x_bar).l2_norm();
    Ok(MeanFieldSolution {
        x_bar,
        per_type: out.per_type,
        q_y: out.q_y,
        residual_k,
        residual_l2,
        converged,
        iterations: history.len() - 1,
        history,
    })
}

/// The three closed-form constants of one type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzTerms {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

fn kernel_c(ty: &HeaterType, cost: &CostParams, x0_bar: f64, z: f64) -> f64 {
    let bb = ty.gain_sq_over(cost.r);
    (bb * cost.q_x0 + ty.a * ty.a + ty.a * cost.delta) * (x0_bar - z)
}

fn check_k(scenario: &Scenario, k: f64) -> Result<()> {
    let two_min = 2.0 * scenario.dist.min_a() + scenario.cost.delta;
    let per_type = scenario
        .dist
        .types()
        .iter()
        .map(|t| t.a + scenario.cost.delta)
        .fold(f64::INFINITY, f64::min);
    let cap = two_min.min(per_type);
    if !(k > 0.0 && k < cap) {
        return Err(Error::invalid(format!("k = {k} must lie in (0, {cap}) for the Lipschitz bound")));
    }
    Ok(())
}

pub fn lipschitz_terms(scenario: &Scenario, k: f64) -> Result<Vec<LipschitzTerms>> {
    check_k(scenario, k)?;
    let cost = &scenario.cost;
    let d0 = (scenario.x0_bar() - scenario.z()).abs();
    let two_min = 2.0 * scenario.dist.min_a() + cost.delta;
    Ok(scenario
        .dist
        .types()
        .iter()
        .map(|ty| {
            let bb = ty.gain_sq_over(cost.r);
            let c = kernel_c(ty, cost, scenario.x0_bar(), scenario.z()).abs();
            let c1 = d0 * bb / (k * k * (two_min - k));
            let l = bb * c / (k * (two_min - k) * (ty.a + cost.delta));
            let c2 = l / ((ty.a + cost.delta - k) * (ty.a + k));
            let c3 = l / ty.a;
            LipschitzTerms { c1, c2, c3 }
        })
        .collect())
}

/// `R_k = Σ_s n_s (c1 + c2 + c3)`; `λ R_k` bounds the Lipschitz constant
/// of `M` in `‖·‖_k`, `λ` being that of `g`.
pub fn lipschitz_bound_rk(scenario: &Scenario, k: f64) -> Result<f64> {
    let terms = lipschitz_terms(scenario, k)?;
    Ok(terms
        .iter()
        .zip(scenario.dist.weights())
        .map(|(t, w)| w * (t.c1 + t.c2 + t.c3))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBounds {
    /// `q_t <= k0 t`
    pub k0: f64,
    /// `π_t <= k1 t + k2`
    pub k1: f64,
    pub k2: f64,
    /// `‖π - π'‖_k <= k3 ‖x̄ - x̄'‖_k`
    pub k3: f64,
}

pub fn growth_bounds(g: &GFunction, scenario: &Scenario, k: f64) -> Result<GrowthBounds> {
    check_k(scenario, k)?;
    let min_a = scenario.dist.min_a();
    let k0 = g.max_abs_on(scenario.x0_bar() - scenario.z());
    Ok(GrowthBounds {
        k0,
        k1: k0 / (2.0 * min_a),
        k2: k0 / (4.0 * min_a * min_a) + scenario.cost.q_x0 / (2.0 * min_a),
        k3: g.lipschitz() / (k * (2.0 * min_a + scenario.cost.delta - k)),
    })
}

/// Uniform bound on `|d/dt M(x̄)|` over all `x̄ ∈ G`.
///
/// Splits the closed-form mean into the free decay, the direct kernel term
/// and the convolution term, bounding each with the growth constants.
pub fn derivative_bound(g: &GFunction, scenario: &Scenario) -> f64 {
    let cost = &scenario.cost;
    let min_a = scenario.dist.min_a();
    let d0 = (scenario.x0_bar() - scenario.z()).abs();
    let k0 = g.max_abs_on(d0);
    let k1 = k0 / (2.0 * min_a);
    let k2 = k0 / (4.0 * min_a * min_a) + cost.q_x0 / (2.0 * min_a);
    scenario
        .dist
        .iter()
        .map(|(ty, w)| {
            let bb = ty.gain_sq_over(cost.r);
            let a = ty.a;
            let c = kernel_c(ty, cost, scenario.x0_bar(), scenario.z()).abs();
            let m = a + bb * k2 + bb * k1 / a;
            let k_1 = m * d0;
            let k_2 = c / a;
            let m1 = 2.0 + bb * k0 / (2.0 * a) / (a * a);
            let k_3 = c * m1 / a;
            w * (k_1 + k_2 + k_3)
        })
        .sum()
}

/// One row of the discontinuity demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub n: u32,
    /// `‖x̄⁽ⁿ⁾ - y‖_∞`
    pub input_gap: f64,
    /// `‖M(x̄⁽ⁿ⁾) - M(y)‖_∞`
    pub output_gap: f64,
    pub terminal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub rows: Vec<DemoRow>,
    /// `M(y)` is identically `x̄0`.
    pub image_of_target_gap: f64,
    pub horizon: f64,
    pub span: f64,
}

impl DemoReport {
    /// Inputs shrink to the target while outputs stay at least
    /// `threshold` away from `M(y)`.
    pub fn discontinuous(&self, threshold: f64) -> bool {
        let shrinking = self.rows.windows(2).all(|w| w[1].input_gap < w[0].input_gap);
        shrinking && self.rows.iter().all(|r| r.output_gap >= threshold)
    }
}

/// Counterexample scenario: `g(x) = x`, `x̄0 = 1`, `y = 0`, `z = -1`, a
/// cheap control (`r = 0.01`) and no initial anchor, on `[0, 40/a]`.
pub fn discontinuity_scenario(ty: HeaterType) -> Result<Scenario> {
    use crate::population::{ComfortBand, Direction, InitialDistribution, TypeDistribution};
    let grid = TimeGrid::with_horizon(2e-3, 40.0 / ty.a)?;
    Scenario::new(
        TypeDistribution::uniform(ty),
        InitialDistribution::new(1.0, 0.0)?,
        ComfortBand::new(-1.0, 1.0, 0.0, 1.0, Direction::Release)?,
        CostParams::new(0.001, 0.0, 0.01, 200.0)?,
        grid,
    )
}

pub fn sup_norm_discontinuity_demo(scenario: &Scenario, n_max: u32) -> Result<DemoReport> {
    let g = GFunction::linear(1.0)?;
    let grid = scenario.grid;
    let y = scenario.y();
    let m_y = m_op(&Trajectory::constant(grid, y), scenario, &g)?;
    let image_of_target_gap = m_y.values.iter().map(|v| (v - scenario.x0_bar()).abs()).fold(0.0, f64::max);
    let rows = (1..=n_max)
        .map(|n| {
            let xn = Trajectory::constant(grid, y + 0.5f64.powi(n as i32));
            let m = m_op(&xn, scenario, &g)?;
            Ok(DemoRow {
                n,
                input_gap: xn.sub(&Trajectory::constant(grid, y)).sup_norm(),
                output_gap: m.sub(&m_y).sup_norm(),
                terminal: m.last(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DemoReport {
        rows,
        image_of_target_gap,
        horizon: grid.horizon(),
        span: (scenario.x0_bar() - scenario.z()).abs(),
    })
}
