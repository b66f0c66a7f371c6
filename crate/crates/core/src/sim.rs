//! Finite-population Monte Carlo under mean-field, baseline and switching
//! controllers.
//!
//! The loop is step-major: every agent advances one Euler–Maruyama step,
//! then the empirical average temperature (EAT) is summed in agent order.
//! Each agent owns a ChaCha stream keyed by `(seed, agent index)` and draws
//! exactly one normal per step, so results do not depend on scheduling and
//! any agent's noise can be replayed on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Trajectory};
use crate::lqg::{self, CostParams};
use crate::operators::delta_op;
use crate::population::{Agent, GFunction, HeaterType};
use crate::scenario::Scenario;

/// Below this many agents the per-step parallel split costs more than it
/// saves.
const PAR_THRESHOLD: usize = 2048;

/// Mean-field feedback for every type, with the offset stored per unit of
/// `x0 - z` so each agent can use its own initial temperature as anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfLaw {
    pub q_y: Trajectory,
    pub pi: Vec<Trajectory>,
    pub alpha_unit: Vec<Trajectory>,
    pub z: f64,
    pub cost: CostParams,
}

impl MfLaw {
    pub fn from_q(q_y: &Trajectory, scenario: &Scenario) -> Result<Self> {
        let z = scenario.z();
        let mut pi = Vec::new();
        let mut alpha_unit = Vec::new();
        for ty in scenario.dist.types() {
            let p = lqg::solve_riccati(q_y, ty, &scenario.cost)?;
            alpha_unit.push(lqg::solve_offset(&p, z + 1.0, ty, &scenario.cost, z)?);
            pi.push(p);
        }
        Ok(Self {
            q_y: q_y.clone(),
            pi,
            alpha_unit,
            z,
            cost: scenario.cost,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.q_y.grid
    }

    pub fn control(&self, ty: &HeaterType, type_index: usize, x0: f64, x: f64, i: usize) -> f64 {
        let p = self.pi[type_index].values[i];
        let a = self.alpha_unit[type_index].values[i] * (x0 - self.z);
        -(ty.b / self.cost.r) * (p * x + a - p * self.z)
    }

    /// Noiseless mean of a population of one type whose initial mean is
    /// `mean`.
    pub fn theory_mean(&self, scenario: &Scenario, type_index: usize, mean: f64) -> Result<Trajectory> {
        let ty = &scenario.dist.types()[type_index];
        let alpha = self.alpha_unit[type_index].map(|v| v * (mean - self.z));
        lqg::forward_mean(&self.pi[type_index], &alpha, ty, &self.cost, mean, self.z)
    }
}

/// Steady-state detector for the robust controller: switch once the EAT
/// has varied by less than `range` over the trailing `window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchRule {
    pub window: f64,
    pub range: f64,
}

impl Default for SwitchRule {
    fn default() -> Self {
        Self {
            window: 0.25,
            range: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSpec {
    /// Mean-field law computed on the assumed model.
    pub law: MfLaw,
    /// Pressure function with the gain the law was computed for.
    pub g: GFunction,
    /// Model the controllers believe in; free power uses its ambient.
    pub assumed: Scenario,
    pub rule: SwitchRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Controller {
    MeanField(MfLaw),
    Lqg,
    RobustSwitch(Box<RobustSpec>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Record {
    None,
    All,
    Agents(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub record: Record,
    pub quantiles: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            seed,
            record: Record::None,
            quantiles: false,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::with_horizon(self.dt, self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub agents: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub eat: Trajectory,
    /// Total power drawn by the population (kW), free power included.
    pub total_power: Trajectory,
    /// Deciles 10%..90% of the temperatures at each step.
    pub quantiles: Option<Vec<[f64; 9]>>,
    pub paths: Option<Paths>,
    pub x0: Vec<f64>,
    pub terminal: Vec<f64>,
    /// Per agent, `max_t |x_t - x0|`.
    pub max_excursion: Vec<f64>,
    pub mean_excursion: f64,
    pub terminal_spread: f64,
    /// Per-agent discounted cost under the controller's own criterion.
    pub costs: Vec<f64>,
    /// Net energy of the controlled power over the run (kWh).
    pub energy: f64,
    pub violations: Violations,
    pub switch_time: Option<f64>,
    /// EAT at the moment of switching.
    pub plateau: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    /// Agents that left the comfort band at least once.
    pub agents: usize,
    pub agent_steps: usize,
}

fn agent_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The standard normals agent `index` draws during a run of `n_steps`.
pub fn agent_noise(seed: u64, index: usize, n_steps: usize) -> Vec<f64> {
    let mut rng = agent_rng(seed, index);
    (0..n_steps).map(|_| StandardNormal.sample(&mut rng)).collect()
}

struct State {
    x: f64,
    rng: ChaCha8Rng,
    max_exc: f64,
    cost: f64,
    outside: usize,
    u: f64,
}

/// Law index for simulation step `i`; the law grid must be an integer
/// multiple of the simulation step.
fn stride(law: TimeGrid, sim: TimeGrid) -> Result<usize> {
    let k = law.dt / sim.dt;
    let s = k.round();
    if s < 1.0 || (k - s).abs() > 1e-9 * k {
        return Err(Error::invalid(format!(
            "simulation step {} must divide the control grid step {}",
            sim.dt, law.dt
        )));
    }
    let s = s as usize;
    if sim.n_steps / s > law.n_steps {
        return Err(Error::invalid(format!(
            "simulation horizon {} exceeds the control horizon {}",
            sim.horizon(),
            law.horizon()
        )));
    }
    Ok(s)
}

/// Simulates `agents` in the `truth` model under `controller`.
pub fn simulate_population(
    agents: &[Agent],
    truth: &Scenario,
    controller: &Controller,
    cfg: &SimConfig,
) -> Result<SimResult> {
    if agents.is_empty() {
        return Err(Error::invalid("population size must be at least 1"));
    }
    let grid = cfg.grid()?;
    let n_agents = agents.len();
    let dt = grid.dt;
    let sqdt = dt.sqrt();
    let y = truth.y();
    let (l, h) = (truth.band.l, truth.band.h);
    let cost = truth.cost;

    let (law_stride, believed) = match controller {
        Controller::MeanField(law) => (stride(law.grid(), grid)?, truth),
        Controller::RobustSwitch(spec) => (stride(spec.law.grid(), grid)?, &spec.assumed),
        Controller::Lqg => (1, truth),
    };
    let lqg_laws: Vec<(f64, f64)> = if matches!(controller, Controller::Lqg) {
        // stationary gains per type; offsets depend on x0 and are formed per agent
        let base = CostParams { q_x0: 0.0, ..cost };
        truth
            .dist
            .types()
            .iter()
            .map(|ty| (lqg::algebraic_riccati(ty, cost.q_lq, &base), ty.a * cost.r / (ty.b * ty.b)))
            .collect()
    } else {
        Vec::new()
    };
    let u_free: Vec<f64> = agents
        .iter()
        .map(|ag| crate::population::u_free(ag, &believed.dist.types()[ag.type_index]))
        .collect();

    let recorded: Vec<usize> = match &cfg.record {
        Record::None => Vec::new(),
        Record::All => (0..n_agents).collect(),
        Record::Agents(ids) => {
            if let Some(bad) = ids.iter().find(|&&i| i >= n_agents) {
                return Err(Error::invalid(format!("recorded agent {bad} out of range")));
            }
            ids.clone()
        }
    };
    let mut path_x: Vec<Vec<f64>> = recorded.iter().map(|_| Vec::with_capacity(grid.len())).collect();
    let mut path_u: Vec<Vec<f64>> = recorded.iter().map(|_| Vec::with_capacity(grid.len())).collect();

    let mut states: Vec<State> = agents
        .iter()
        .enumerate()
        .map(|(i, ag)| State {
            x: ag.x0,
            rng: agent_rng(cfg.seed, i),
            max_exc: 0.0,
            cost: 0.0,
            outside: 0,
            u: 0.0,
        })
        .collect();

    let mut eat = Vec::with_capacity(grid.len());
    let mut power = Vec::with_capacity(grid.len());
    let mut quantiles = cfg.quantiles.then(|| Vec::with_capacity(grid.len()));
    let mut energy = 0.0;

    // robust controller state
    let mut switched_at: Option<usize> = None;
    let mut plateau = None;
    let mut q_run = 0.0; // signed running integral of g(EAT - y)
    let window_steps = match controller {
        Controller::RobustSwitch(spec) => (spec.rule.window / dt).round() as usize,
        _ => 0,
    };

    let types = truth.dist.types();
    let mean_now = |st: &[State]| st.iter().map(|s| s.x).sum::<f64>() / n_agents as f64;
    eat.push(mean_now(&states));

    for i in 0..=grid.n_steps {
        let t = grid.time(i);
        let li = i / law_stride;
        // phase-2 coefficient for the robust controller
        let mut stationary: Option<Vec<f64>> = None;
        if let Controller::RobustSwitch(spec) = controller {
            if i > 0 {
                let gy = |v: f64| spec.g.eval(v - y);
                q_run += 0.5 * (gy(eat[i - 1]) + gy(eat[i])) * dt;
            }
            if switched_at.is_none() && i >= window_steps && window_steps > 0 {
                let w = &eat[i - window_steps..=i];
                let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                if hi - lo < spec.rule.range {
                    switched_at = Some(i);
                    plateau = Some(eat[i]);
                }
            }
            if switched_at.is_some() {
                let q_hat = q_run.abs();
                stationary = Some(
                    spec.assumed
                        .dist
                        .types()
                        .iter()
                        .map(|ty| lqg::algebraic_riccati(ty, q_hat, &spec.assumed.cost))
                        .collect(),
                );
            }
        }

        // control for every agent at t_i
        let control = |k: usize, s: &State| -> f64 {
            let ag = &agents[k];
            let ty = &types[ag.type_index];
            match controller {
                Controller::MeanField(law) => law.control(ty, ag.type_index, ag.x0, s.x, li),
                Controller::Lqg => {
                    let (p, unit) = lqg_laws[ag.type_index];
                    -(ty.b / cost.r) * (p * (s.x - y) + unit * (ag.x0 - y))
                }
                Controller::RobustSwitch(spec) => match &stationary {
                    None => spec.law.control(ty, ag.type_index, ag.x0, s.x, li),
                    Some(pis) => {
                        let bel = &spec.assumed.dist.types()[ag.type_index];
                        let p = pis[ag.type_index];
                        let a = lqg::stationary_offset(p, ag.x0, bel, &spec.assumed.cost, spec.law.z);
                        -(bel.b / spec.assumed.cost.r) * (p * s.x + a - p * spec.law.z)
                    }
                },
            }
        };
        let running_cost = |k: usize, x: f64, u: f64| -> f64 {
            let ag = &agents[k];
            let run = match controller {
                Controller::Lqg => 0.5 * cost.q_lq * (x - y).powi(2) + 0.5 * cost.r * u * u,
                Controller::MeanField(law) => {
                    let q = law.q_y.values[li];
                    0.5 * q * (x - law.z).powi(2) + 0.5 * cost.q_x0 * (x - ag.x0).powi(2) + 0.5 * cost.r * u * u
                }
                Controller::RobustSwitch(spec) => {
                    let q = if stationary.is_some() { q_run.abs() } else { spec.law.q_y.values[li] };
                    0.5 * q * (x - spec.law.z).powi(2) + 0.5 * cost.q_x0 * (x - ag.x0).powi(2) + 0.5 * cost.r * u * u
                }
            };
            let w = if i == 0 || i == grid.n_steps { 0.5 } else { 1.0 };
            w * dt * (-cost.delta * t).exp() * run
        };
        let last = i == grid.n_steps;
        let advance = |k: usize, s: &mut State| {
            let u = control(k, s);
            s.u = u;
            s.cost += running_cost(k, s.x, u);
            let ag = &agents[k];
            s.max_exc = s.max_exc.max((s.x - ag.x0).abs());
            if s.x < l || s.x > h {
                s.outside += 1;
            }
            if !last {
                let ty = &types[ag.type_index];
                let drift = -ty.a * (s.x - ty.x_out) + ty.b * (u + u_free[k]);
                let xi: f64 = StandardNormal.sample(&mut s.rng);
                s.x += drift * dt + ty.sigma * sqdt * xi;
            }
        };
        // record pre-step state before advancing
        for (slot, &k) in recorded.iter().enumerate() {
            path_x[slot].push(states[k].x);
        }
        if let Some(qs) = quantiles.as_mut() {
            qs.push(deciles(states.iter().map(|s| s.x).collect()));
        }
        if n_agents >= PAR_THRESHOLD {
            states.par_iter_mut().enumerate().for_each(|(k, s)| advance(k, s));
        } else {
            states.iter_mut().enumerate().for_each(|(k, s)| advance(k, s));
        }
        for (slot, &k) in recorded.iter().enumerate() {
            path_u[slot].push(states[k].u);
        }
        let total_u: f64 = states.iter().map(|s| s.u).sum();
        power.push(total_u + u_free.iter().sum::<f64>());
        if !last {
            energy += total_u * dt;
            eat.push(mean_now(&states));
        }
    }

    let terminal: Vec<f64> = states.iter().map(|s| s.x).collect();
    let max_excursion: Vec<f64> = states.iter().map(|s| s.max_exc).collect();
    let mean_excursion = max_excursion.iter().sum::<f64>() / n_agents as f64;
    let mean_t = terminal.iter().sum::<f64>() / n_agents as f64;
    let terminal_spread = (terminal.iter().map(|v| (v - mean_t).powi(2)).sum::<f64>() / n_agents as f64).sqrt();
    let violations = Violations {
        agents: states.iter().filter(|s| s.outside > 0).count(),
        agent_steps: states.iter().map(|s| s.outside).sum(),
    };
    Ok(SimResult {
        eat: Trajectory::new(grid, eat)?,
        total_power: Trajectory::new(grid, power)?,
        quantiles,
        paths: (!recorded.is_empty()).then(|| Paths {
            agents: recorded,
            x: path_x,
            u: path_u,
        }),
        x0: agents.iter().map(|a| a.x0).collect(),
        terminal,
        max_excursion,
        mean_excursion,
        terminal_spread,
        costs: states.iter().map(|s| s.cost).collect(),
        energy,
        violations,
        switch_time: switched_at.map(|i| grid.time(i)),
        plateau,
    })
}

fn deciles(mut xs: Vec<f64>) -> [f64; 9] {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    std::array::from_fn(|k| {
        let pos = (k + 1) as f64 / 10.0 * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
    })
}

/// Standard LQG trackers of the common target for every agent.
pub fn lqg_baseline(agents: &[Agent], truth: &Scenario, cfg: &SimConfig) -> Result<SimResult> {
    simulate_population(agents, truth, &Controller::Lqg, cfg)
}

/// Mean-field law on the assumed model, switched to integral-action
/// stationary feedback once the EAT plateaus.
pub fn robustness_sim(agents: &[Agent], truth: &Scenario, spec: RobustSpec, cfg: &SimConfig) -> Result<SimResult> {
    simulate_population(agents, truth, &Controller::RobustSwitch(Box::new(spec)), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    pub mean_excursion: f64,
    pub terminal_spread: f64,
    pub energy: f64,
    pub violating_agents: usize,
    /// Rank correlation between initial temperature and realized drop.
    pub drop_rank_correlation: f64,
}

pub fn excursion_stats(result: &SimResult) -> ExcursionStats {
    let drops: Vec<f64> = result.x0.iter().zip(&result.terminal).map(|(a, b)| a - b).collect();
    ExcursionStats {
        mean_excursion: result.mean_excursion,
        terminal_spread: result.terminal_spread,
        energy: result.energy,
        violating_agents: result.violations.agents,
        drop_rank_correlation: spearman(&result.x0, &drops),
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashGap {
    pub agents: Vec<usize>,
    /// `max(0, J(u°) - J(BR)) / |J(u°)|` per probed agent.
    pub gains: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// Empirical unilateral-deviation gain.
///
/// The population runs the mean-field law; the realized pressure
/// coefficient is rebuilt from the EAT. Each probed agent then re-solves its
/// own tracking problem against that coefficient (held constant past the
/// horizon) and replays its noise with the new law; the pressure it faces
/// afterwards includes its own deviation's effect on the EAT.
pub fn epsilon_nash_gap(
    agents: &[Agent],
    scenario: &Scenario,
    law: &MfLaw,
    g: &GFunction,
    cfg: &SimConfig,
    probe_count: usize,
    probe_seed: u64,
) -> Result<NashGap> {
    use rand::seq::index::sample;
    let n = agents.len();
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let mut probes: Vec<usize> = sample(&mut rng, n, probe_count.min(n)).into_vec();
    probes.sort_unstable();
    let cfg = SimConfig {
        record: Record::Agents(probes.clone()),
        ..cfg.clone()
    };
    let base = simulate_population(agents, scenario, &Controller::MeanField(law.clone()), &cfg)?;
    let grid = base.eat.grid;
    let y = scenario.y();
    let z = scenario.z();
    let cost = scenario.cost;
    let q_n = delta_op(&base.eat, g, y);
    let paths = base.paths.as_ref().expect("probe paths recorded");

    let mut gains = Vec::with_capacity(probes.len());
    for (slot, &k) in probes.iter().enumerate() {
        let ag = &agents[k];
        let ty = &scenario.dist.types()[ag.type_index];
        let x = Trajectory::new(grid, paths.x[slot].clone())?;
        let u = Trajectory::new(grid, paths.u[slot].clone())?;
        let j0 = lqg::discounted_cost(&x, &u, &q_n, ag.x0, &cost, z)?;

        let pi = lqg::solve_riccati(&q_n, ty, &cost)?;
        let alpha = lqg::solve_offset(&pi, ag.x0, ty, &cost, z)?;
        let br = lqg::ControlLaw {
            pi,
            alpha,
            z,
            r: cost.r,
            b: ty.b,
        };
        let noise = agent_noise(cfg.seed, k, grid.n_steps);
        let uf = crate::population::u_free(ag, ty);
        let mut xs = Vec::with_capacity(grid.len());
        let mut us = Vec::with_capacity(grid.len());
        let mut xv = ag.x0;
        for i in 0..=grid.n_steps {
            let uv = br.control(xv, i);
            xs.push(xv);
            us.push(uv);
            if i < grid.n_steps {
                let drift = -ty.a * (xv - ty.x_out) + ty.b * (uv + uf);
                xv += drift * grid.dt + ty.sigma * grid.dt.sqrt() * noise[i];
            }
        }
        let x_dev = Trajectory::new(grid, xs)?;
        let u_dev = Trajectory::new(grid, us)?;
        let eat_dev = base.eat.zip_with(&x_dev.sub(&x), |e, d| e + d / n as f64);
        let q_dev = delta_op(&eat_dev, g, y);
        let j_br = lqg::discounted_cost(&x_dev, &u_dev, &q_dev, ag.x0, &cost, z)?;
        gains.push((j0 - j_br).max(0.0) / j0.abs());
    }
    let mean = gains.iter().sum::<f64>() / gains.len().max(1) as f64;
    let max = gains.iter().copied().fold(0.0, f64::max);
    Ok(NashGap {
        agents: probes,
        gains,
        mean,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{
        derive_rates, sample_population, ComfortBand, Direction, InitialDistribution, TypeDistribution,
    };

    fn scenario(sigma: f64) -> Scenario {
        Scenario::new(
            TypeDistribution::uniform(derive_rates(0.57, 0.27, -10.0, sigma).unwrap()),
            InitialDistribution::new(21.0, 1.0).unwrap(),
            ComfortBand::new(17.0, 25.0, 20.0, 21.0, Direction::Release).unwrap(),
            CostParams::new(0.001, 200.0, 10.0, 200.0).unwrap(),
            TimeGrid::new(1e-3, 6000).unwrap(),
        )
        .unwrap()
    }

    fn law(s: &Scenario) -> MfLaw {
        let q = Trajectory::from_fn(s.grid, |t| 66.9 * (1.0 - (-3.0 * t).exp()));
        MfLaw::from_q(&q, s).unwrap()
    }

    #[test]
    fn free_control_only_holds_temperatures() {
        let s = scenario(0.0);
        let agents = sample_population(&s.dist, &s.init, 20, 1).unwrap();
        let zero = Trajectory::constant(s.grid, 0.0);
        let l = MfLaw {
            q_y: zero.clone(),
            pi: vec![zero.clone()],
            alpha_unit: vec![zero],
            z: 17.0,
            cost: s.cost,
        };
        let r = simulate_population(&agents, &s, &Controller::MeanField(l), &SimConfig::new(1e-3, 1.0, 3)).unwrap();
        for (a, b) in r.x0.iter().zip(&r.terminal) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(r.mean_excursion < 1e-9);
    }

    #[test]
    fn deterministic_and_eat_is_mean() {
        let s = scenario(0.15);
        let agents = sample_population(&s.dist, &s.init, 50, 9).unwrap();
        let mut cfg = SimConfig::new(1e-3, 1.0, 4);
        cfg.record = Record::All;
        cfg.quantiles = true;
        let c = Controller::MeanField(law(&s));
        let a = simulate_population(&agents, &s, &c, &cfg).unwrap();
        let b = simulate_population(&agents, &s, &c, &cfg).unwrap();
        assert_eq!(a, b);
        let paths = a.paths.as_ref().unwrap();
        for i in [0, 10, 500, 1000] {
            let m = paths.x.iter().map(|p| p[i]).sum::<f64>() / 50.0;
            assert!((m - a.eat.values[i]).abs() < 1e-12);
        }
        assert_eq!(a.eat.len(), 1001);
        assert_eq!(paths.x[0].len(), 1001);
    }

    #[test]
    fn noise_replay_matches_population_run() {
        let s = scenario(0.15);
        let agents = sample_population(&s.dist, &s.init, 5, 2).unwrap();
        let mut cfg = SimConfig::new(1e-3, 0.2, 77);
        cfg.record = Record::Agents(vec![3]);
        let l = law(&s);
        let r = simulate_population(&agents, &s, &Controller::MeanField(l.clone()), &cfg).unwrap();
        let noise = agent_noise(77, 3, 200);
        let ag = &agents[3];
        let ty = &s.dist.types()[0];
        let mut x = ag.x0;
        for i in 0..200 {
            let u = l.control(ty, 0, ag.x0, x, i);
            x += crate::population::drift(x, u, ag, ty) * 1e-3 + ty.sigma * 1e-3f64.sqrt() * noise[i];
        }
        assert!((x - r.paths.unwrap().x[0][200]).abs() < 1e-12);
    }

    #[test]
    fn lqg_noiseless_reaches_target() {
        let s = scenario(0.0);
        let agents = sample_population(&s.dist, &s.init, 30, 5).unwrap();
        let r = lqg_baseline(&agents, &s, &SimConfig::new(1e-3, 3.0, 1)).unwrap();
        assert!(r.terminal.iter().all(|x| (x - 20.0).abs() < 1e-3));
    }

    #[test]
    fn mean_law_matches_theory_without_noise() {
        let s = scenario(0.0);
        let agents = sample_population(&s.dist, &s.init, 40, 5).unwrap();
        let l = law(&s);
        let r = simulate_population(&agents, &s, &Controller::MeanField(l.clone()), &SimConfig::new(1e-3, 3.0, 1)).unwrap();
        let m = r.x0.iter().sum::<f64>() / 40.0;
        let theory = l.theory_mean(&s, 0, m).unwrap().truncate(3000);
        assert!(theory.sub(&r.eat).sup_norm() < 1e-3);
    }

    #[test]
    fn stride_validation() {
        let s = scenario(0.0);
        let agents = sample_population(&s.dist, &s.init, 3, 5).unwrap();
        let c = Controller::MeanField(law(&s));
        assert!(simulate_population(&agents, &s, &c, &SimConfig::new(3e-4, 1.0, 1)).is_err());
        assert!(simulate_population(&agents, &s, &c, &SimConfig::new(5e-4, 1.0, 1)).is_ok());
        assert!(simulate_population(&agents, &s, &c, &SimConfig::new(1e-3, 7.0, 1)).is_err());
    }

    #[test]
    fn excursion_of_constant_paths_is_zero() {
        let s = scenario(0.0);
        let agents = sample_population(&s.dist, &s.init, 4, 5).unwrap();
        let zero = Trajectory::constant(s.grid, 0.0);
        let l = MfLaw {
            q_y: zero.clone(),
            pi: vec![zero.clone()],
            alpha_unit: vec![zero],
            z: 17.0,
            cost: s.cost,
        };
        let r = simulate_population(&agents, &s, &Controller::MeanField(l), &SimConfig::new(1e-3, 0.5, 1)).unwrap();
        let st = excursion_stats(&r);
        assert!(st.mean_excursion < 1e-12 && st.energy.abs() < 1e-9);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn deciles_of_uniform_grid() {
        let d = deciles((0..=100).map(f64::from).collect());
        for (k, v) in d.iter().enumerate() {
            assert!((v - 10.0 * (k + 1) as f64).abs() < 1e-12);
        }
    }
}
