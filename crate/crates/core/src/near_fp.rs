//! Desirable near fixed points for a uniform population.
//!
//! A fixed point of the mean-field map is only useful if its mean settles at
//! the target, which requires the pressure coefficient to converge to the
//! steady-state value `q*`. This module builds a one-parameter family of
//! candidate means that all satisfy that limit law, indexed by the gain `μ`,
//! and then searches `μ` for the member closest to being a fixed point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{trapezoid, Trajectory};
use crate::lqg::{self, CostParams};
use crate::operators::{delta_op, m_op, t_op};
use crate::population::{GFunction, HeaterType};
use crate::scenario::Scenario;

/// Tolerance on the terminal distance to the target before limits at the
/// horizon are trusted.
const SETTLED: f64 = 1e-4;
/// Projection margin inside the normalized bracket.
const EDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Algo1Params {
    pub n1: f64,
    pub n2: f64,
    /// Duration of the boosted pressure (h).
    pub t0: f64,
    pub d_mu: f64,
    /// Stop when successive residuals differ by less than this.
    pub e1: f64,
    /// Bisection tolerance, relative to `q*`.
    pub e2: f64,
    /// Initial descent step in the normalized bracket coordinate.
    pub gamma: f64,
    pub mu_init: Option<f64>,
    pub max_iter: usize,
}

impl Default for Algo1Params {
    fn default() -> Self {
        Self {
            n1: 1.1,
            n2: 1.5,
            t0: 0.25,
            d_mu: 1.0,
            e1: 1e-6,
            e2: 1e-4,
            gamma: 10.0,
            mu_init: None,
            max_iter: 200,
        }
    }
}

impl Algo1Params {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(1.0 < self.n1 && self.n1 < self.n2) {
            v.push(format!("need 1 < n1 < n2 (got n1={}, n2={})", self.n1, self.n2));
        }
        if !(self.t0 > 0.0) {
            v.push(format!("t0 must be positive, got {}", self.t0));
        }
        if !(self.d_mu > 0.0) {
            v.push(format!("d_mu must be positive, got {}", self.d_mu));
        }
        if !(self.e1 > 0.0 && self.e2 > 0.0) {
            v.push(format!("tolerances must be positive (e1={}, e2={})", self.e1, self.e2));
        }
        if !(self.gamma > 0.0) {
            v.push(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.max_iter == 0 {
            v.push("max_iter must be at least 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }
}

/// Steady-state pressure coefficient that makes `y` the limit of the mean.
pub fn q_inf_star(ty: &HeaterType, cost: &CostParams, x0_bar: f64, y: f64, z: f64) -> Result<f64> {
    if y == z {
        return Err(Error::TargetOnBoundary { z });
    }
    let b2 = ty.b * ty.b;
    Ok((ty.a * (ty.a + cost.delta) * cost.r + cost.q_x0 * b2) / b2 * (x0_bar - y) / (y - z))
}

/// Equilibrium `(π, α, x̄)` of the mean-field equations for a constant
/// pressure coefficient.
pub fn steady_state(ty: &HeaterType, cost: &CostParams, q: f64, x0_bar: f64, z: f64) -> (f64, f64, f64) {
    let bb = ty.gain_sq_over(cost.r);
    let pi = lqg::algebraic_riccati(ty, q, cost);
    let alpha = lqg::stationary_offset(pi, x0_bar, ty, cost, z);
    let x = (ty.a * x0_bar - bb * (alpha - pi * z)) / (ty.a + bb * pi);
    (pi, alpha, x)
}

fn boosted(scenario: &Scenario, q_star: f64, n: f64, t0: f64) -> Trajectory {
    Trajectory::from_fn(scenario.grid, |t| if t <= t0 + 1e-12 { n * q_star } else { q_star })
}

/// Means produced by boosting the steady-state coefficient by `n1` (upper)
/// and `n2` (lower) during `[0, t0]`.
pub fn boundary_trajectories(p: &Algo1Params, scenario: &Scenario) -> Result<(Trajectory, Trajectory)> {
    let ty = scenario.single_type()?;
    let (x0, y, z) = (scenario.x0_bar(), scenario.y(), scenario.z());
    let q_star = q_inf_star(ty, &scenario.cost, x0, y, z)?;
    let run = |n| t_op(&boosted(scenario, q_star, n, p.t0), ty, &scenario.cost, x0, z);
    Ok((run(p.n1)?, run(p.n2)?))
}

/// `∫_0^T g(x̄ - y)`, oriented so that the overshoot side counts positive.
fn oriented_integral(x: &Trajectory, g: &GFunction, y: f64, orient: f64) -> f64 {
    let vals: Vec<f64> = x.values.iter().map(|v| g.eval(v - y)).collect();
    orient * trapezoid(&vals, x.dt())
}

fn orientation(scenario: &Scenario) -> f64 {
    (scenario.x0_bar() - scenario.y()).signum()
}

/// Gains that make the limit of `Δ_μ` equal `q*` on the boundary means.
pub fn mu_bounds(
    x_sup: &Trajectory,
    x_inf: &Trajectory,
    g_unit: &GFunction,
    y: f64,
    q_star: f64,
    orient: f64,
) -> Result<(f64, f64)> {
    let i_sup = oriented_integral(x_sup, g_unit, y, orient);
    let i_inf = oriented_integral(x_inf, g_unit, y, orient);
    if !(i_sup > 0.0 && i_inf > 0.0) {
        return Err(Error::Degenerate(format!(
            "limiting pressure integrals must be positive (upper {i_sup:.6}, lower {i_inf:.6}); \
             undershoot outweighs overshoot, retune t0, n1, n2"
        )));
    }
    Ok((q_star / i_sup, q_star / i_inf))
}

/// Member of the family for gain `mu`, found by bisection on the mixing
/// weight and polished by regula falsi.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMember {
    pub x_bar: Trajectory,
    pub f: f64,
    pub iterations: usize,
    /// `|lim Δ_μ(x̄) - q*|`
    pub limit_error: f64,
}

pub fn dichotomy_f(
    mu: f64,
    x_sup: &Trajectory,
    x_inf: &Trajectory,
    g_unit: &GFunction,
    y: f64,
    q_star: f64,
    e2: f64,
    orient: f64,
) -> Result<FamilyMember> {
    let gmu = g_unit.with_mu(g_unit.mu() * mu);
    let mix = |f: f64| x_inf.zip_with(x_sup, |lo, hi| (1.0 - f) * lo + f * hi);
    let err = |f: f64| oriented_integral(&mix(f), &gmu, y, orient) - q_star;
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut e_lo, mut e_hi) = (err(lo), err(hi));
    let slack = 1e-9 * q_star.abs().max(1.0);
    if e_lo > slack || e_hi < -slack {
        return Err(Error::Bracket(format!(
            "mu = {mu}: limit errors {e_lo:.3e} at f=0 and {e_hi:.3e} at f=1 do not straddle zero"
        )));
    }
    let mut iterations = 0;
    let mut f;
    let mut e;
    loop {
        iterations += 1;
        f = 0.5 * (lo + hi);
        e = err(f);
        if e.abs() < e2 || iterations >= 200 {
            break;
        }
        if e >= 0.0 {
            hi = f;
            e_hi = e;
        } else {
            lo = f;
            e_lo = e;
        }
    }
    // regula falsi polish so the family is smooth in mu
    let fine = 1e-13 * q_star.abs().max(1.0);
    for _ in 0..60 {
        if e.abs() <= fine || hi - lo < 1e-15 {
            break;
        }
        if e >= 0.0 {
            hi = f;
            e_hi = e;
        } else {
            lo = f;
            e_lo = e;
        }
        if e_hi == e_lo {
            break;
        }
        f = (lo - e_lo * (hi - lo) / (e_hi - e_lo)).clamp(lo, hi);
        e = err(f);
    }
    Ok(FamilyMember {
        x_bar: mix(f),
        f,
        iterations,
        limit_error: e.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentRow {
    pub iter: usize,
    pub mu: f64,
    pub f: f64,
    pub residual_l2: f64,
    /// `|lim Δ_μ(x̄(μ)) - q*| / q*`
    pub q_limit_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearFixedPoint {
    pub mu_star: f64,
    pub mu_sup: f64,
    pub mu_inf: f64,
    pub q_star: f64,
    pub y: f64,
    pub f: f64,
    /// Near-Nash mean `x̄(μ*)`.
    pub x_bar: Trajectory,
    /// Its image `M_{μ*}(x̄(μ*))`.
    pub image: Trajectory,
    pub q_y: Trajectory,
    pub residual_l2: f64,
    pub terminal_gap: f64,
    pub image_terminal_gap: f64,
    pub q_limit_gap: f64,
    pub horizon_doubled: bool,
    pub stagnated: bool,
    pub log: Vec<DescentRow>,
}

impl NearFixedPoint {
    /// Residual relative to the distance of the mean from the target.
    pub fn relative_residual(&self) -> f64 {
        let dev = self.x_bar.map(|v| v - self.y).l2_norm();
        self.residual_l2 / dev
    }
}

/// Everything `algorithm1` needs once the family is set up.
pub struct Family<'a> {
    pub scenario: &'a Scenario,
    pub g: GFunction,
    pub x_sup: Trajectory,
    pub x_inf: Trajectory,
    pub q_star: f64,
    pub mu_sup: f64,
    pub mu_inf: f64,
    pub e2: f64,
    orient: f64,
}

pub struct Evaluation {
    pub member: FamilyMember,
    pub image: Trajectory,
    pub q_y: Trajectory,
    pub residual_l2: f64,
    pub q_limit_gap: f64,
}

impl<'a> Family<'a> {
    pub fn new(p: &Algo1Params, scenario: &'a Scenario, g: &GFunction) -> Result<Self> {
        let ty = scenario.single_type()?;
        let (x0, y, z) = (scenario.x0_bar(), scenario.y(), scenario.z());
        let q_star = q_inf_star(ty, &scenario.cost, x0, y, z)?;
        if q_star == 0.0 {
            return Err(Error::Degenerate("target equals the initial mean; no pressure needed".into()));
        }
        let (x_sup, x_inf) = boundary_trajectories(p, scenario)?;
        let orient = orientation(scenario);
        let unit = g.unit();
        let (mu_sup, mu_inf) = mu_bounds(&x_sup, &x_inf, &unit, y, q_star, orient)?;
        if !(mu_sup < mu_inf) {
            return Err(Error::Degenerate(format!("gain bracket is empty: [{mu_sup}, {mu_inf}]")));
        }
        Ok(Self {
            scenario,
            g: unit,
            x_sup,
            x_inf,
            q_star,
            mu_sup,
            mu_inf,
            e2: p.e2 * q_star,
            orient,
        })
    }

    pub fn member(&self, mu: f64) -> Result<FamilyMember> {
        dichotomy_f(mu, &self.x_sup, &self.x_inf, &self.g, self.scenario.y(), self.q_star, self.e2, self.orient)
    }

    /// `R(μ) = ‖x̄(μ) - M_μ(x̄(μ))‖_{L2}` together with its by-products.
    pub fn evaluate(&self, mu: f64) -> Result<Evaluation> {
        let member = self.member(mu)?;
        let g = self.g.with_mu(mu);
        let q_y = delta_op(&member.x_bar, &g, self.scenario.y());
        let image = m_op(&member.x_bar, self.scenario, &g)?;
        let residual_l2 = member.x_bar.sub(&image).l2_norm();
        let q_limit_gap = (q_y.last() - self.q_star).abs() / self.q_star.abs();
        Ok(Evaluation {
            member,
            image,
            q_y,
            residual_l2,
            q_limit_gap,
        })
    }

    fn mu_of(&self, s: f64) -> f64 {
        self.mu_sup + s * (self.mu_inf - self.mu_sup)
    }

    fn s_of(&self, mu: f64) -> f64 {
        (mu - self.mu_sup) / (self.mu_inf - self.mu_sup)
    }
}

/// Doubles the horizon once if either boundary mean has not settled.
fn settle_horizon(p: &Algo1Params, scenario: &Scenario) -> Result<(Scenario, bool)> {
    let (xs, xi) = boundary_trajectories(p, scenario)?;
    let y = scenario.y();
    if (xs.last() - y).abs() < SETTLED && (xi.last() - y).abs() < SETTLED {
        return Ok((scenario.clone(), false));
    }
    let mut grid = scenario.grid;
    grid.n_steps *= 2;
    Ok((scenario.with_grid(grid), true))
}

/// Best point of a uniform scan of the bracket. The residual can have a
/// spurious local minimum at the upper-mean edge, so the descent is not
/// started blindly from the middle.
fn coarse_start(fam: &Family) -> Result<(f64, Evaluation)> {
    const POINTS: usize = 16;
    let mut best: Option<(f64, Evaluation)> = None;
    for k in 0..POINTS {
        let s = (k as f64 + 0.5) / POINTS as f64;
        let e = fam.evaluate(fam.mu_of(s))?;
        if best.as_ref().map_or(true, |(_, b)| e.residual_l2 < b.residual_l2) {
            best = Some((s, e));
        }
    }
    Ok(best.expect("nonempty scan"))
}

/// Gradient descent over the gain on the family of limit-consistent means.
///
/// The descent runs in the bracket coordinate `s = (μ - μ_sup)/(μ_inf - μ_sup)`
/// with a forward difference of step `d_mu`, backtracking from the current
/// step size, and projection onto the open bracket. Without `mu_init` it
/// starts from the best point of a coarse scan. A final scan on the
/// `d_mu` lattice makes the accepted gain a local minimum at that spacing.
pub fn algorithm1(p: &Algo1Params, scenario: &Scenario, g: &GFunction) -> Result<NearFixedPoint> {
    p.validate()?;
    let (scenario, horizon_doubled) = settle_horizon(p, scenario)?;
    let fam = Family::new(p, &scenario, g)?;
    let width = fam.mu_inf - fam.mu_sup;
    let proj = |s: f64| s.clamp(EDGE, 1.0 - EDGE);

    let (mut s, mut cur) = match p.mu_init {
        Some(m) => {
            let s = proj(fam.s_of(m));
            (s, fam.evaluate(fam.mu_of(s))?)
        }
        None => coarse_start(&fam)?,
    };
    let mut log = Vec::new();
    let row = |iter, mu, e: &Evaluation| DescentRow {
        iter,
        mu,
        f: e.member.f,
        residual_l2: e.residual_l2,
        q_limit_gap: e.q_limit_gap,
    };
    log.push(row(0, fam.mu_of(s), &cur));
    let mut gamma = p.gamma;
    let mut stagnated = true;
    let mut trace = vec![(fam.mu_of(s), cur.residual_l2)];

    for iter in 1..=p.max_iter {
        let mu = fam.mu_of(s);
        let ahead = fam.evaluate((mu + p.d_mu).min(fam.mu_of(1.0 - EDGE)))?;
        let step_mu = (mu + p.d_mu).min(fam.mu_of(1.0 - EDGE)) - mu;
        let grad_s = if step_mu > 0.0 {
            (ahead.residual_l2 - cur.residual_l2) / step_mu * width
        } else {
            // pinned at the upper edge: difference backwards
            let behind = fam.evaluate(mu - p.d_mu)?;
            (cur.residual_l2 - behind.residual_l2) / p.d_mu * width
        };
        let mut accepted = None;
        let mut trial = gamma;
        while trial * grad_s.abs() > 1e-12 {
            let s_new = proj(s - trial * grad_s);
            if s_new != s {
                let cand = fam.evaluate(fam.mu_of(s_new))?;
                if cand.residual_l2 < cur.residual_l2 {
                    accepted = Some((s_new, cand, trial));
                    break;
                }
            }
            trial *= 0.5;
        }
        let Some((s_new, cand, used)) = accepted else {
            let at_edge = s <= EDGE || s >= 1.0 - EDGE;
            let outward = (s <= EDGE && grad_s > 0.0) || (s >= 1.0 - EDGE && grad_s < 0.0);
            if at_edge && outward {
                return Err(Error::BracketEscape { mu, trace });
            }
            stagnated = false;
            break;
        };
        let change = cur.residual_l2 - cand.residual_l2;
        s = s_new;
        cur = cand;
        gamma = 2.0 * used;
        trace.push((fam.mu_of(s), cur.residual_l2));
        log.push(row(iter, fam.mu_of(s), &cur));
        if change.abs() < p.e1 {
            stagnated = false;
            break;
        }
    }

    // local scan on the d_mu lattice
    let lo = fam.mu_of(EDGE);
    let hi = fam.mu_of(1.0 - EDGE);
    let mut mu = fam.mu_of(s);
    for _ in 0..10_000 {
        let mut moved = false;
        for cand_mu in [mu - p.d_mu, mu + p.d_mu] {
            if cand_mu <= lo || cand_mu >= hi {
                continue;
            }
            let cand = fam.evaluate(cand_mu)?;
            if cand.residual_l2 < cur.residual_l2 {
                mu = cand_mu;
                cur = cand;
                moved = true;
                break;
            }
        }
        if !moved {
            break;
        }
    }
    let pinned = fam.s_of(mu) <= EDGE * 1.5 || fam.s_of(mu) >= 1.0 - 1.5 * EDGE;
    if pinned {
        return Err(Error::BracketEscape { mu, trace });
    }
    if log.last().map_or(true, |r| r.mu != mu) {
        log.push(row(log.len(), mu, &cur));
    }

    let y = scenario.y();
    Ok(NearFixedPoint {
        mu_star: mu,
        mu_sup: fam.mu_sup,
        mu_inf: fam.mu_inf,
        q_star: fam.q_star,
        y,
        f: cur.member.f,
        terminal_gap: (cur.member.x_bar.last() - y).abs(),
        image_terminal_gap: (cur.image.last() - y).abs(),
        q_limit_gap: cur.q_limit_gap,
        residual_l2: cur.residual_l2,
        x_bar: cur.member.x_bar,
        image: cur.image,
        q_y: cur.q_y,
        horizon_doubled,
        stagnated,
        log,
    })
}

/// First time `|x - y| <= tol`, if any.
pub fn first_crossing(x: &Trajectory, y: f64, tol: f64) -> Option<f64> {
    x.values.iter().position(|v| (v - y).abs() <= tol).map(|i| x.grid.time(i))
}

/// Time after which `|x - y| <= tol` holds for good.
pub fn settling_time(x: &Trajectory, y: f64, tol: f64) -> Option<f64> {
    match x.values.iter().rposition(|v| (v - y).abs() > tol) {
        None => Some(0.0),
        Some(i) if i + 1 < x.len() => Some(x.grid.time(i + 1)),
        Some(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::population::{derive_rates, ComfortBand, Direction, InitialDistribution, TypeDistribution};

    fn scenario() -> Scenario {
        Scenario::new(
            TypeDistribution::uniform(derive_rates(0.57, 0.27, -10.0, 0.15).unwrap()),
            InitialDistribution::new(21.0, 1.0).unwrap(),
            ComfortBand::new(17.0, 25.0, 20.0, 21.0, Direction::Release).unwrap(),
            CostParams::new(0.001, 200.0, 10.0, 200.0).unwrap(),
            TimeGrid::new(1e-3, 6000).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn q_star_examples() {
        let s = scenario();
        let ty = s.single_type().unwrap();
        let q = q_inf_star(ty, &s.cost, 21.0, 20.0, 17.0).unwrap();
        // hand value: (a(a+δ)r + q_x0 b²)/b² · 1/3 with a = 27/57, b² = 1/0.57²
        let a: f64 = 0.27 / 0.57;
        let hand = (a * (a + 0.001) * 10.0 * 0.57 * 0.57 + 200.0) / 3.0;
        assert!((q - hand).abs() < 1e-12 * hand);
        assert!((q - 66.91).abs() < 0.01);
        assert_eq!(q_inf_star(ty, &s.cost, 21.0, 21.0, 17.0).unwrap(), 0.0);
        assert!(matches!(
            q_inf_star(ty, &s.cost, 21.0, 17.0, 17.0),
            Err(Error::TargetOnBoundary { .. })
        ));
        let (_, _, x) = steady_state(ty, &s.cost, q, 21.0, 17.0);
        assert!((x - 20.0).abs() < 1e-9);
    }

    #[test]
    fn boundary_means() {
        let s = scenario();
        let p = Algo1Params::default();
        let (xs, xi) = boundary_trajectories(&p, &s).unwrap();
        assert!(xs.values.iter().zip(&xi.values).all(|(a, b)| a >= b));
        assert!((xs.last() - 20.0).abs() < 0.02 && (xi.last() - 20.0).abs() < 0.02);
        let same = Algo1Params { n2: p.n1, ..p };
        let (a, b) = boundary_trajectories(&same, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bounds_and_dichotomy() {
        let s = scenario();
        let p = Algo1Params::default();
        let (xs, xi) = boundary_trajectories(&p, &s).unwrap();
        let g = GFunction::linear(1.0).unwrap();
        let q = 66.91017966666668;
        let (ms, mi) = mu_bounds(&xs, &xi, &g, 20.0, q, 1.0).unwrap();
        assert!(ms < mi);
        let (ms2, mi2) = mu_bounds(&xs, &xi, &GFunction::linear(2.0).unwrap(), 20.0, q, 1.0).unwrap();
        assert!((ms2 - ms / 2.0).abs() < 1e-9 * ms && (mi2 - mi / 2.0).abs() < 1e-9 * mi);
        let top = dichotomy_f(ms, &xs, &xi, &g, 20.0, q, 1e-6 * q, 1.0).unwrap();
        assert!(top.f > 1.0 - 1e-6);
        let bottom = dichotomy_f(mi, &xs, &xi, &g, 20.0, q, 1e-6 * q, 1.0).unwrap();
        assert!(bottom.f < 1e-6);
        let mid = dichotomy_f(0.5 * (ms + mi), &xs, &xi, &g, 20.0, q, 1e-6 * q, 1.0).unwrap();
        assert!(mid.iterations <= 60);
        assert!(dichotomy_f(0.5 * ms, &xs, &xi, &g, 20.0, q, 1e-6 * q, 1.0).is_err());
    }

    #[test]
    fn interior_maximum_escapes_the_bracket() {
        // with these defaults R(μ) peaks inside the bracket, so descent from
        // anywhere runs into an edge
        let s = scenario();
        let err = algorithm1(&Algo1Params::default(), &s, &GFunction::linear(1.0).unwrap()).unwrap_err();
        match err {
            Error::BracketEscape { mu, trace } => {
                assert!(!trace.is_empty());
                assert!(mu > 1000.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn crossing_helpers() {
        let grid = TimeGrid::new(0.1, 10).unwrap();
        let x = Trajectory::from_fn(grid, |t| 1.0 - t);
        assert!((first_crossing(&x, 0.0, 0.25).unwrap() - 0.8).abs() < 1e-12);
        assert!((settling_time(&x, 0.0, 0.25).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(settling_time(&x.map(|v| 2.0 - v), 0.0, 0.25), None);
        assert_eq!(settling_time(&Trajectory::constant(grid, 0.0), 0.0, 0.1), Some(0.0));
    }
}
