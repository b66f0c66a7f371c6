//! Discounted LQG tracking with a time-varying cost coefficient.
//!
//! The Riccati and offset equations are integrated backward with fixed-step
//! RK4 from steady-state terminal values, which selects their bounded
//! solutions. Inputs between grid points come from local cubics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Trajectory};
use crate::population::HeaterType;

/// Any value beyond this is treated as a blow-up of the integrator.
const RUNAWAY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub delta: f64,
    pub q_x0: f64,
    pub r: f64,
    pub q_lq: f64,
}

impl CostParams {
    pub fn new(delta: f64, q_x0: f64, r: f64, q_lq: f64) -> Result<Self> {
        let c = Self { delta, q_x0, r, q_lq };
        let errs = c.violations();
        if errs.is_empty() {
            Ok(c)
        } else {
            Err(Error::invalid(errs.join("; ")))
        }
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.delta > 0.0) {
            v.push(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.q_x0 >= 0.0) {
            v.push(format!("q_x0 must be nonnegative, got {}", self.q_x0));
        }
        if !(self.r > 0.0) {
            v.push(format!("r must be positive, got {}", self.r));
        }
        if !(self.q_lq > 0.0) {
            v.push(format!("q_lq must be positive, got {}", self.q_lq));
        }
        v
    }
}

/// Affine feedback `u = -(b/r)(pi_t x + alpha_t - pi_t z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    pub pi: Trajectory,
    pub alpha: Trajectory,
    pub z: f64,
    pub r: f64,
    pub b: f64,
}

impl ControlLaw {
    pub fn control(&self, x: f64, i: usize) -> f64 {
        feedback_control(self, x, i)
    }

    pub fn grid(&self) -> TimeGrid {
        self.pi.grid
    }
}

pub fn feedback_control(law: &ControlLaw, x: f64, i: usize) -> f64 {
    let (p, a) = (law.pi.values[i], law.alpha.values[i]);
    -(law.b / law.r) * (p * x + a - p * law.z)
}

/// Nonnegative root of `B pi^2 + (2a + delta) pi - (q_const + q_x0) = 0`.
pub fn algebraic_riccati(ty: &HeaterType, q_const: f64, cost: &CostParams) -> f64 {
    let c = q_const + cost.q_x0;
    if c <= 0.0 {
        return 0.0;
    }
    let bb = ty.gain_sq_over(cost.r);
    let p = 2.0 * ty.a + cost.delta;
    // rationalized form, no cancellation for small c
    2.0 * c / (p + (p * p + 4.0 * bb * c).sqrt())
}

fn check(v: f64, what: &'static str, step: usize) -> Result<f64> {
    if v.is_finite() && v.abs() < RUNAWAY {
        Ok(v)
    } else {
        Err(Error::NumericInstability { what, step })
    }
}

/// One RK4 step of `y' = f(s, y)` where `s` selects start/mid/end inputs.
fn rk4(y: f64, h: f64, f: impl Fn(usize, f64) -> f64) -> f64 {
    let k1 = f(0, y);
    let k2 = f(1, y + 0.5 * h * k1);
    let k3 = f(1, y + 0.5 * h * k2);
    let k4 = f(2, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Bounded solution of the Riccati equation driven by `q`.
pub fn solve_riccati(q: &Trajectory, ty: &HeaterType, cost: &CostParams) -> Result<Trajectory> {
    let n = q.grid.n_steps;
    let bb = ty.gain_sq_over(cost.r);
    let lin = 2.0 * ty.a + cost.delta;
    let mut pi = vec![0.0; n + 1];
    pi[n] = algebraic_riccati(ty, q.last(), cost);
    let h = -q.dt();
    for i in (0..n).rev() {
        let qs = [q.values[i + 1], q.midpoint(i), q.values[i]];
        let next = rk4(pi[i + 1], h, |s, p| lin * p + bb * p * p - qs[s] - cost.q_x0);
        pi[i] = check(next, "riccati", i)?;
    }
    Ok(Trajectory { grid: q.grid, values: pi })
}

/// Steady-state offset for a constant Riccati value.
pub fn stationary_offset(pi: f64, anchor: f64, ty: &HeaterType, cost: &CostParams, z: f64) -> f64 {
    let bb = ty.gain_sq_over(cost.r);
    (ty.a * pi - cost.q_x0) * (anchor - z) / (ty.a + cost.delta + bb * pi)
}

/// Bounded solution of the offset equation for a given Riccati solution.
pub fn solve_offset(
    pi: &Trajectory,
    anchor: f64,
    ty: &HeaterType,
    cost: &CostParams,
    z: f64,
) -> Result<Trajectory> {
    let n = pi.grid.n_steps;
    let bb = ty.gain_sq_over(cost.r);
    let d = anchor - z;
    let mut alpha = vec![0.0; n + 1];
    alpha[n] = stationary_offset(pi.last(), anchor, ty, cost, z);
    let h = -pi.dt();
    for i in (0..n).rev() {
        let ps = [pi.values[i + 1], pi.midpoint(i), pi.values[i]];
        let next = rk4(alpha[i + 1], h, |s, al| {
            (ty.a + cost.delta + bb * ps[s]) * al - (ty.a * ps[s] - cost.q_x0) * d
        });
        alpha[i] = check(next, "offset", i)?;
    }
    Ok(Trajectory { grid: pi.grid, values: alpha })
}

/// Closed-loop mean of one type started at `x0_bar`.
pub fn forward_mean(
    pi: &Trajectory,
    alpha: &Trajectory,
    ty: &HeaterType,
    cost: &CostParams,
    x0_bar: f64,
    z: f64,
) -> Result<Trajectory> {
    pi.check_same_grid(alpha)?;
    let n = pi.grid.n_steps;
    let bb = ty.gain_sq_over(cost.r);
    let mut x = vec![0.0; n + 1];
    x[0] = x0_bar;
    let dt = pi.dt();
    for i in 0..n {
        let ps = [pi.values[i], pi.midpoint(i), pi.values[i + 1]];
        let al = [alpha.values[i], alpha.midpoint(i), alpha.values[i + 1]];
        let next = rk4(x[i], dt, |s, xx| {
            -(ty.a + bb * ps[s]) * xx - bb * (al[s] - ps[s] * z) + ty.a * x0_bar
        });
        x[i + 1] = check(next, "forward mean", i)?;
    }
    Ok(Trajectory { grid: pi.grid, values: x })
}

/// Stationary baseline tracker of the common target `y` for a device that
/// starts at `x0`. The offset makes `y` the exact noiseless equilibrium once
/// the free power (which holds `x0`) is accounted for.
pub fn standard_lqg_law(ty: &HeaterType, cost: &CostParams, y: f64, x0: f64, grid: TimeGrid) -> ControlLaw {
    let baseline = CostParams { q_x0: 0.0, ..*cost };
    let pi = algebraic_riccati(ty, cost.q_lq, &baseline);
    let alpha = ty.a * cost.r * (x0 - y) / (ty.b * ty.b);
    ControlLaw {
        pi: Trajectory::constant(grid, pi),
        alpha: Trajectory::constant(grid, alpha),
        z: y,
        r: cost.r,
        b: ty.b,
    }
}

/// Truncated discounted cost of one realized path.
pub fn discounted_cost(
    x: &Trajectory,
    u: &Trajectory,
    q: &Trajectory,
    x0: f64,
    cost: &CostParams,
    z: f64,
) -> Result<f64> {
    x.check_same_grid(u)?;
    x.check_same_grid(q)?;
    let dt = x.dt();
    let vals: Vec<f64> = (0..x.len())
        .map(|i| {
            let (xi, ui, qi) = (x.values[i], u.values[i], q.values[i]);
            let run = 0.5 * qi * (xi - z).powi(2) + 0.5 * cost.q_x0 * (xi - x0).powi(2) + 0.5 * cost.r * ui * ui;
            (-cost.delta * i as f64 * dt).exp() * run
        })
        .collect();
    Ok(crate::grid::trapezoid(&vals, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::derive_rates;
    use proptest::prelude::*;

    fn ty() -> HeaterType {
        derive_rates(0.57, 0.27, -10.0, 0.15).unwrap()
    }

    fn cost() -> CostParams {
        CostParams::new(0.001, 200.0, 10.0, 200.0).unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(1e-3, 6000).unwrap()
    }

    #[test]
    fn are_examples() {
        let t = ty();
        let zero = CostParams { q_x0: 0.0, ..cost() };
        assert_eq!(algebraic_riccati(&t, 0.0, &zero), 0.0);
        let p = algebraic_riccati(&t, 66.91, &cost());
        assert!((p - 27.95).abs() < 0.01, "{p}");
        let bb = t.b * t.b / 10.0;
        let res = bb * p * p + (2.0 * t.a + 0.001) * p - (66.91 + 200.0);
        assert!(res.abs() < 1e-10);
    }

    #[test]
    fn riccati_constant_input_is_stationary() {
        let q = Trajectory::constant(grid(), 66.91);
        let pi = solve_riccati(&q, &ty(), &cost()).unwrap();
        let p = algebraic_riccati(&ty(), 66.91, &cost());
        assert!(pi.values.iter().all(|v| (v - p).abs() < 1e-8));
        let zero = CostParams { q_x0: 0.0, ..cost() };
        let pi0 = solve_riccati(&Trajectory::constant(grid(), 0.0), &ty(), &zero).unwrap();
        assert_eq!(pi0.sup_norm(), 0.0);
    }

    #[test]
    fn riccati_increasing_input_gives_nondecreasing_solution() {
        let q = Trajectory::from_fn(grid(), |t| 40.0 * t);
        let pi = solve_riccati(&q, &ty(), &cost()).unwrap();
        assert!(pi.values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn riccati_insensitive_to_horizon() {
        let g = TimeGrid::new(1e-3, 3000).unwrap();
        let f = |t: f64| 50.0 * (1.0 - (-2.0 * t).exp());
        let short = solve_riccati(&Trajectory::from_fn(g, f), &ty(), &cost()).unwrap();
        let long = solve_riccati(&Trajectory::from_fn(grid(), f), &ty(), &cost()).unwrap();
        let al_s = solve_offset(&short, 21.0, &ty(), &cost(), 17.0).unwrap();
        let al_l = solve_offset(&long, 21.0, &ty(), &cost(), 17.0).unwrap();
        for i in 0..=1500 {
            assert!((short.values[i] - long.values[i]).abs() < 1e-6);
            assert!((al_s.values[i] - al_l.values[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn riccati_comparison_principle() {
        let q1 = Trajectory::from_fn(grid(), |t| 30.0 * t.min(2.0));
        let q2 = q1.map(|v| v + 5.0);
        let p1 = solve_riccati(&q1, &ty(), &cost()).unwrap();
        let p2 = solve_riccati(&q2, &ty(), &cost()).unwrap();
        assert!(p1.values.iter().zip(&p2.values).all(|(a, b)| b >= a));
    }

    #[test]
    fn runaway_is_reported() {
        let coarse = TimeGrid::new(1.0, 10).unwrap();
        let q = Trajectory::constant(coarse, 1e9);
        match solve_riccati(&q, &ty(), &cost()) {
            Err(Error::NumericInstability { what: "riccati", .. }) => {}
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn offset_examples() {
        let t = ty();
        let pi = Trajectory::constant(grid(), 27.95);
        let al = solve_offset(&pi, 17.0, &t, &cost(), 17.0).unwrap();
        assert_eq!(al.sup_norm(), 0.0);
        let al = solve_offset(&pi, 21.0, &t, &cost(), 17.0).unwrap();
        let want = stationary_offset(27.95, 21.0, &t, &cost(), 17.0);
        assert!(al.values.iter().all(|v| (v - want).abs() < 1e-9));
        let pi = solve_riccati(&Trajectory::from_fn(grid(), |s| 20.0 * s), &t, &cost()).unwrap();
        let up = solve_offset(&pi, 21.0, &t, &cost(), 17.0).unwrap();
        let down = solve_offset(&pi, 13.0, &t, &cost(), 17.0).unwrap();
        assert!(up.values.iter().zip(&down.values).all(|(a, b)| (a + b).abs() < 1e-9));
    }

    #[test]
    fn feedback_examples() {
        let g = grid();
        let law = ControlLaw {
            pi: Trajectory::constant(g, 0.0),
            alpha: Trajectory::constant(g, 0.0),
            z: 17.0,
            r: 10.0,
            b: 1.75,
        };
        assert_eq!(law.control(20.0, 3), 0.0);
        let law = ControlLaw { pi: Trajectory::constant(g, 30.0), ..law };
        assert_eq!(law.control(17.0, 3), 0.0);
        let slope = law.control(21.0, 3) - law.control(20.0, 3);
        assert!((slope + 1.75 * 30.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn forward_mean_examples() {
        let t = ty();
        let zero = Trajectory::constant(grid(), 0.0);
        let x = forward_mean(&zero, &zero, &t, &cost(), 21.0, 17.0).unwrap();
        assert!(x.values.iter().all(|v| (v - 21.0).abs() < 1e-12));
        // steady-state triple for the reference coefficient
        let c = cost();
        let qs = (t.a * (t.a + c.delta) * c.r + c.q_x0 * t.b * t.b) / (t.b * t.b) * (21.0 - 20.0) / (20.0 - 17.0);
        let p = algebraic_riccati(&t, qs, &c);
        let al = stationary_offset(p, 21.0, &t, &c, 17.0);
        let x = forward_mean(&Trajectory::constant(grid(), p), &Trajectory::constant(grid(), al), &t, &c, 21.0, 17.0)
            .unwrap();
        assert!((x.last() - 20.0).abs() < 1e-9);
        assert!(x.values.iter().all(|v| (17.0..=21.0 + 1e-12).contains(v)));
    }

    fn settle_time(q_lq: f64) -> f64 {
        let t = ty();
        let c = CostParams { q_lq, ..cost() };
        let g = TimeGrid::new(1e-3, 30_000).unwrap();
        let law = standard_lqg_law(&t, &c, 20.0, 22.0, g);
        let agent = crate::population::Agent::new(0, 22.0);
        let mut x = 22.0;
        let mut last_out = 0.0;
        for i in 0..g.n_steps {
            let u = law.control(x, i);
            x += crate::population::drift(x, u, &agent, &t) * g.dt;
            if (x - 20.0).abs() > 0.01 {
                last_out = g.time(i + 1);
            }
        }
        assert!((x - 20.0).abs() < 1e-6);
        last_out
    }

    #[test]
    fn lqg_converges_faster_with_larger_weight() {
        let ts: Vec<f64> = [10.0, 100.0, 1000.0].iter().map(|&q| settle_time(q)).collect();
        assert!(ts[0] > ts[1] && ts[1] > ts[2], "{ts:?}");
    }

    #[test]
    fn lqg_equilibrium_at_target() {
        let t = ty();
        let law = standard_lqg_law(&t, &cost(), 20.0, 20.0, grid());
        let agent = crate::population::Agent::new(0, 20.0);
        let u = law.control(20.0, 0);
        assert!(crate::population::drift(20.0, u, &agent, &t).abs() < 1e-12);
    }

    #[test]
    fn discounted_cost_examples() {
        let g = grid();
        let c = cost();
        let x = Trajectory::constant(g, 21.0);
        let zero = Trajectory::constant(g, 0.0);
        assert_eq!(discounted_cost(&x, &zero, &zero, 21.0, &c, 17.0).unwrap(), 0.0);
        let u = Trajectory::from_fn(g, |t| (3.0 * t).sin());
        let j1 = discounted_cost(&x, &u, &zero, 21.0, &c, 17.0).unwrap();
        let c2 = CostParams { r: 20.0, ..c };
        let j2 = discounted_cost(&x, &u, &zero, 21.0, &c2, 17.0).unwrap();
        assert!((j2 - 2.0 * j1).abs() < 1e-12 * j1);
        // tiny discount: constant integrand integrates to c T
        let c3 = CostParams { delta: 1e-15, q_x0: 0.0, ..c };
        let q = Trajectory::constant(g, 2.0);
        let j3 = discounted_cost(&x, &zero, &q, 21.0, &c3, 17.0).unwrap();
        assert!((j3 - 16.0 * 6.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn offset_is_linear_in_anchor(k in -5.0..5.0f64) {
            let t = ty();
            let g = TimeGrid::new(1e-2, 300).unwrap();
            let pi = solve_riccati(&Trajectory::from_fn(g, |s| 10.0 * s), &t, &cost()).unwrap();
            let base = solve_offset(&pi, 18.0, &t, &cost(), 17.0).unwrap();
            let scaled = solve_offset(&pi, 17.0 + k, &t, &cost(), 17.0).unwrap();
            for (b, s) in base.values.iter().zip(&scaled.values) {
                prop_assert!((s - k * b).abs() < 1e-9 * (1.0 + s.abs()));
            }
        }
    }
}
