//! Command orchestration behind the CLI.
//!
//! Seeds: the config seed (or the `--seed` override) is split with
//! [`sub_seed`] into `"population"` for sampling initial conditions and
//! `"noise"` for the agents' Brownian increments; segment `j` of a
//! multi-target run uses `"segment-j"` as a prefix for both.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{sub_seed, ScenarioConfig};
use crate::error::{Error, Result};
use crate::export::{self, Summary};
use crate::grid::{TimeGrid, Trajectory};
use crate::near_fp::{self, algorithm1, first_crossing, settling_time, NearFixedPoint};
use crate::operators::{self, m_op, picard_iterate, MeanFieldSolution, NormK};
use crate::population::{sample_population, Agent, ComfortBand, Direction, GFunction};
use crate::scenario::Scenario;
use crate::sim::{
    self, excursion_stats, simulate_population, Controller, MfLaw, Record, RobustSpec, SimConfig, SimResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_NONCONVERGED: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    NearFp,
    Solve,
    Simulate,
    Compare,
    Robustness,
    Verify,
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "near-fp" => Command::NearFp,
            "solve" => Command::Solve,
            "simulate" => Command::Simulate,
            "compare" => Command::Compare,
            "robustness" => Command::Robustness,
            "verify" => Command::Verify,
            other => return Err(Error::invalid(format!("unknown command `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub quiet: bool,
    /// Dump per-agent paths for the first this-many agents.
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub report: String,
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Parse { .. } | Error::Validation(_) | Error::TargetOnBoundary { .. } => {
                EXIT_VALIDATION
            }
            Error::NumericInstability { .. } | Error::Domain(_) | Error::Degenerate(_) | Error::Bracket(_) => {
                EXIT_NUMERIC
            }
            Error::BracketEscape { .. } => EXIT_NONCONVERGED,
            Error::Io { .. } | Error::Csv { .. } => EXIT_IO,
        }
    }
}

/// Caps rayon's global pool from `MFG_CTT_THREADS`, if set.
pub fn configure_threads() {
    if let Some(n) = std::env::var("MFG_CTT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool built earlier in the process wins; that is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run(cmd: Command, cfg: &ScenarioConfig, opts: &RunOptions) -> RunOutcome {
    let mut report = String::new();
    let result = match cmd {
        Command::NearFp => run_near_fp(cfg, opts, &mut report),
        Command::Solve => run_solve(cfg, opts, &mut report),
        Command::Simulate => run_simulate(cfg, opts, &mut report),
        Command::Compare => run_compare(cfg, opts, &mut report),
        Command::Robustness => run_robustness(cfg, opts, &mut report),
        Command::Verify => run_verify(cfg, &mut report),
    };
    match result {
        Ok(code) => RunOutcome { exit_code: code, report },
        Err(e) => {
            let _ = writeln!(report, "error: {e}");
            RunOutcome {
                exit_code: e.exit_code(),
                report,
            }
        }
    }
}

fn seed(cfg: &ScenarioConfig, opts: &RunOptions) -> u64 {
    opts.seed.unwrap_or(cfg.sim.seed)
}

/// Gain from the config, or from Algorithm 1 when it says `"auto"`.
pub fn resolve_gain(cfg: &ScenarioConfig, scenario: &Scenario) -> Result<(GFunction, Option<NearFixedPoint>)> {
    match cfg.g.mu.value() {
        Some(mu) => Ok((cfg.g_with_mu(mu)?, None)),
        None => {
            let nfp = algorithm1(&cfg.algo1_params(), scenario, &cfg.g_with_mu(1.0)?)?;
            Ok((cfg.g_with_mu(nfp.mu_star)?, Some(nfp)))
        }
    }
}

fn nfp_summary(nfp: &NearFixedPoint, s: &mut Summary) {
    let y = nfp.y;
    s.num("mu_star", nfp.mu_star)
        .num("mu_sup", nfp.mu_sup)
        .num("mu_inf", nfp.mu_inf)
        .num("q_inf_star", nfp.q_star)
        .num("f", nfp.f)
        .num("residual_L2", nfp.residual_l2)
        .num("relative_residual", nfp.relative_residual())
        .num("terminal_gap", nfp.terminal_gap)
        .num("image_terminal_gap", nfp.image_terminal_gap)
        .num("q_limit_gap", nfp.q_limit_gap)
        .opt("first_crossing_h", first_crossing(&nfp.x_bar, y, 0.05))
        .opt("settling_h", settling_time(&nfp.x_bar, y, 0.05))
        .opt("image_settling_h", settling_time(&nfp.image, y, 0.05))
        .text("horizon_doubled", nfp.horizon_doubled)
        .text("stagnated", nfp.stagnated);
}

fn run_near_fp(cfg: &ScenarioConfig, opts: &RunOptions, report: &mut String) -> Result<i32> {
    let scenario = cfg.scenario()?;
    let dir = &opts.out_dir;
    let nfp = match algorithm1(&cfg.algo1_params(), &scenario, &cfg.g_with_mu(1.0)?) {
        Err(Error::BracketEscape { mu, trace }) => {
            // keep the descent path for diagnosis
            export::write_trace(&dir.join("escape.csv"), &trace)?;
            return Err(Error::BracketEscape { mu, trace });
        }
        r => r?,
    };
    export::write_descent(&dir.join("descent.csv"), &nfp.log)?;
    export::write_columns(
        &dir.join("near_fp.csv"),
        &[("x_bar", &nfp.x_bar), ("image", &nfp.image), ("q_y", &nfp.q_y)],
    )?;
    let mut s = Summary::new();
    s.text("scenario", &cfg.name);
    nfp_summary(&nfp, &mut s);
    s.write(&dir.join("summary.csv"))?;
    report.push_str(&s.render());
    Ok(if nfp.stagnated { EXIT_NONCONVERGED } else { EXIT_OK })
}

fn run_solve(cfg: &ScenarioConfig, opts: &RunOptions, report: &mut String) -> Result<i32> {
    let scenario = cfg.scenario()?;
    let (g, nfp) = resolve_gain(cfg, &scenario)?;
    let start = nfp.as_ref().map_or_else(
        || Trajectory::constant(scenario.grid, scenario.x0_bar()),
        |n| n.x_bar.clone(),
    );
    let k = match cfg.picard.k {
        Some(k) => NormK::new(k, &scenario)?,
        None => NormK::default_for(&scenario),
    };
    let sol = picard_iterate(&start, &scenario, &g, k, cfg.picard_params())?;
    write_solution(&opts.out_dir.join("solution.csv"), &sol)?;
    let mut s = Summary::new();
    s.text("scenario", &cfg.name)
        .num("mu", g.mu())
        .num("k", k.k())
        .num("residual_k", sol.residual_k)
        .num("residual_L2", sol.residual_l2)
        .text("converged", sol.converged)
        .text("iterations", sol.iterations)
        .num("terminal_mean", sol.x_bar.last())
        .num("terminal_q_y", sol.q_y.last());
    s.write(&opts.out_dir.join("summary.csv"))?;
    report.push_str(&s.render());
    Ok(if sol.converged { EXIT_OK } else { EXIT_NONCONVERGED })
}

fn write_solution(path: &Path, sol: &MeanFieldSolution) -> Result<()> {
    let mut cols: Vec<(String, &Trajectory)> = vec![("x_bar".into(), &sol.x_bar), ("q_y".into(), &sol.q_y)];
    for (i, t) in sol.per_type.iter().enumerate() {
        cols.push((format!("pi_{i}"), &t.pi));
        cols.push((format!("alpha_{i}"), &t.alpha));
        cols.push((format!("x_bar_{i}"), &t.x_bar));
    }
    let named: Vec<(&str, &Trajectory)> = cols.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    export::write_columns(path, &named)
}

/// Mean-field law and its theoretical mean for one scenario.
pub struct Design {
    pub g: GFunction,
    pub law: MfLaw,
    pub theory: Trajectory,
    pub nfp: Option<NearFixedPoint>,
}

/// Resolves the gain and builds the law from the near-Nash trajectory, or
/// from a Picard solve when the gain is fixed.
pub fn design(cfg: &ScenarioConfig, scenario: &Scenario) -> Result<Design> {
    let (g, nfp) = resolve_gain(cfg, scenario)?;
    let (q, theory) = match &nfp {
        Some(n) => (n.q_y.clone(), n.x_bar.clone()),
        None => {
            let start = Trajectory::constant(scenario.grid, scenario.x0_bar());
            let sol = picard_iterate(&start, scenario, &g, NormK::default_for(scenario), cfg.picard_params())?;
            (sol.q_y, sol.x_bar)
        }
    };
    let law = MfLaw::from_q(&q, scenario)?;
    Ok(Design { g, law, theory, nfp })
}

pub fn sim_config(cfg: &ScenarioConfig, scenario: &Scenario, seed: u64, paths: usize) -> SimConfig {
    let mut c = SimConfig::new(scenario.grid.dt, cfg.sim.t, sub_seed(seed, "noise"));
    c.quantiles = true;
    if paths > 0 {
        c.record = Record::Agents((0..paths.min(cfg.sim.n)).collect());
    }
    c
}

pub fn population(cfg: &ScenarioConfig, scenario: &Scenario, seed: u64) -> Result<Vec<Agent>> {
    sample_population(&scenario.dist, &scenario.init, cfg.sim.n, sub_seed(seed, "population"))
}

fn sim_summary(s: &mut Summary, r: &SimResult) {
    let st = excursion_stats(r);
    s.num("terminal_eat", r.eat.last())
        .num("mean_excursion", st.mean_excursion)
        .num("terminal_spread", st.terminal_spread)
        .num("energy_kwh", st.energy)
        .text("violating_agents", st.violating_agents)
        .num("drop_rank_correlation", st.drop_rank_correlation)
        .num("mean_cost", r.costs.iter().sum::<f64>() / r.costs.len() as f64);
}

fn run_simulate(cfg: &ScenarioConfig, opts: &RunOptions, report: &mut String) -> Result<i32> {
    if !cfg.segments.is_empty() {
        return run_segments(cfg, opts, report);
    }
    let scenario = cfg.scenario()?;
    let d = design(cfg, &scenario)?;
    let seed = seed(cfg, opts);
    let agents = population(cfg, &scenario, seed)?;
    let r = simulate_population(&agents, &scenario, &Controller::MeanField(d.law.clone()), &sim_config(cfg, &scenario, seed, opts.paths))?;
    let dir = &opts.out_dir;
    export::write_eat(&dir.join("eat.csv"), &r, &d.theory, &d.law.q_y)?;
    export::write_paths(&dir.join("paths.csv"), &r)?;
    let mut s = Summary::new();
    s.text("scenario", &cfg.name).num("mu", d.g.mu()).text("seed", seed);
    sim_summary(&mut s, &r);
    s.num("sup_gap_to_theory", r.eat.sub(&d.theory.truncate(r.eat.grid.n_steps)).sup_norm());
    s.write(&dir.join("summary.csv"))?;
    report.push_str(&s.render());
    Ok(EXIT_OK)
}

/// Outcome of a multi-target run.
pub struct SegmentRun {
    pub eat: Trajectory,
    /// Index in `eat` where each segment starts.
    pub starts: Vec<usize>,
    pub gains: Vec<f64>,
}

/// Sequential re-solves: each segment starts from the previous terminal
/// temperatures and re-designs the law for its own target.
pub fn simulate_segments(cfg: &ScenarioConfig, seed: u64) -> Result<SegmentRun> {
    let base = cfg.scenario()?;
    let mut agents = population(cfg, &base, seed)?;
    let mut eat: Vec<f64> = Vec::new();
    let mut starts = Vec::new();
    let mut gains = Vec::new();
    let dt = base.grid.dt;
    for (j, seg) in cfg.segments.iter().enumerate() {
        let x0_bar = agents.iter().map(|a| a.x0).sum::<f64>() / agents.len() as f64;
        let dir = Direction::between(x0_bar, seg.y);
        let band = ComfortBand::new(cfg.comfort.l, cfg.comfort.h, seg.y, x0_bar, dir)?;
        let mut sc = base.with_x0_bar(x0_bar);
        sc.band = band;
        let mut seg_cfg = cfg.clone();
        seg_cfg.initial.mean = x0_bar;
        seg_cfg.target.y = seg.y;
        seg_cfg.target.direction = dir;
        let d = design(&seg_cfg, &sc)?;
        gains.push(d.g.mu());
        let label = format!("segment-{j}");
        let simc = SimConfig::new(dt, seg.duration, sub_seed(seed, &format!("{label}-noise")));
        let r = simulate_population(&agents, &sc, &Controller::MeanField(d.law), &simc)?;
        starts.push(eat.len().saturating_sub(usize::from(j > 0)));
        let skip = usize::from(j > 0);
        eat.extend_from_slice(&r.eat.values[skip..]);
        agents = agents
            .iter()
            .zip(&r.terminal)
            .map(|(a, &x)| Agent::new(a.type_index, x))
            .collect();
    }
    let grid = TimeGrid::new(dt, eat.len() - 1)?;
    Ok(SegmentRun {
        eat: Trajectory::new(grid, eat)?,
        starts,
        gains,
    })
}

fn run_segments(cfg: &ScenarioConfig, opts: &RunOptions, report: &mut String) -> Result<i32> {
    let run = simulate_segments(cfg, seed(cfg, opts))?;
    export::write_columns(&opts.out_dir.join("eat.csv"), &[("eat", &run.eat)])?;
    let mut s = Summary::new();
    s.text("scenario", &cfg.name).text("segments", run.gains.len());
    for (j, (mu, seg)) in run.gains.iter().zip(&cfg.segments).enumerate() {
        let end = run.starts.get(j + 1).copied().unwrap_or(run.eat.len() - 1);
        s.num(&format!("segment_{j}_target"), seg.y)
            .num(&format!("segment_{j}_mu"), *mu)
            .num(&format!("segment_{j}_terminal_eat"), run.eat.values[end]);
    }
    s.write(&opts.out_dir.join("summary.csv"))?;
    report.push_str(&s.render());
    Ok(EXIT_OK)
}

fn run_compare(cfg: &ScenarioConfig, opts: &RunOptions, report: &mut String) -> Result<i32> {
    let scenario = cfg.scenario()?;
    let d = design(cfg, &scenario)?;
    let seed = seed(cfg, opts);
    let agents = population(cfg, &scenario, seed)?;
    let simc = sim_config(cfg, &scenario, seed, opts.paths);
    let mf = simulate_population(&agents, &scenario, &Controller::MeanField(d.law.clone()), &simc)?;
    let lq = sim::lqg_baseline(&agents, &scenario, &simc)?;
    let dir = &opts.out_dir;
    export::write_columns(
        &dir.join("compare.csv"),
        &[("eat_mf", &mf.eat), ("eat_lqg", &lq.eat), ("x_bar_theory", &d.theory.truncate(mf.eat.grid.n_steps))],
    )?;
    export::write_eat(&dir.join("eat.csv"), &mf, &d.theory, &d.law.q_y)?;
    export::write_paths(&dir.join("paths.csv"), &mf)?;
    let (a, b) = (excursion_stats(&mf), excursion_stats(&lq));
    let mut s = Summary::table(&["mf", "lqg"]);
    s.nums("terminal_eat", &[mf.eat.last(), lq.eat.last()])
        .nums("mean_excursion", &[a.mean_excursion, b.mean_excursion])
        .nums("terminal_spread", &[a.terminal_spread, b.terminal_spread])
        .nums("energy_kwh", &[a.energy, b.energy])
        .nums("violating_agents", &[a.violating_agents as f64, b.violating_agents as f64])
        .nums("drop_rank_correlation", &[a.drop_rank_correlation, b.drop_rank_correlation]);
    s.write(&dir.join("summary.csv"))?;
    report.push_str(&s.render());
    Ok(EXIT_OK)
}

/// Runs the switching controller designed on the configured model against
/// the `[robustness]` true model.
pub fn robustness(cfg: &ScenarioConfig, seed: u64, paths: usize) -> Result<(SimResult, Design)> {
    let assumed = cfg.scenario()?;
    let truth = cfg
        .true_scenario()?
        .ok_or_else(|| Error::invalid("robustness needs a [robustness] section"))?;
    let d = design(cfg, &assumed)?;
    let agents = population(cfg, &truth, seed)?;
    let spec = RobustSpec {
        law: d.law.clone(),
        g: d.g,
        assumed,
        rule: cfg.switch_rule(),
    };
    let r = sim::robustness_sim(&agents, &truth, spec, &sim_config(cfg, &truth, seed, paths))?;
    Ok((r, d))
}

fn run_robustness(cfg: &ScenarioConfig, opts: &RunOptions, report: &mut String) -> Result<i32> {
    let seed = seed(cfg, opts);
    let (r, d) = robustness(cfg, seed, opts.paths)?;
    let dir = &opts.out_dir;
    export::write_eat(&dir.join("eat.csv"), &r, &d.theory, &d.law.q_y)?;
    export::write_paths(&dir.join("paths.csv"), &r)?;
    let mut s = Summary::new();
    s.text("scenario", &cfg.name)
        .num("mu", d.g.mu())
        .opt("switch_time_h", r.switch_time)
        .opt("plateau_eat", r.plateau);
    sim_summary(&mut s, &r);
    s.write(&dir.join("summary.csv"))?;
    report.push_str(&s.render());
    if r.switch_time.is_none() {
        report.push_str("no switch: EAT never plateaued within the horizon\n");
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(EXIT_OK)
}

/// Random member of `G`: a smooth blend of decaying oscillations squashed
/// into `[z, x̄0]`.
pub fn random_member(scenario: &Scenario, rng: &mut impl Rng) -> Trajectory {
    let (lo, hi) = scenario.g_bounds();
    let c: f64 = rng.random_range(-2.0..2.0);
    let a1: f64 = rng.random_range(-3.0..3.0);
    let r1: f64 = rng.random_range(0.2..3.0);
    let a2: f64 = rng.random_range(-2.0..2.0);
    let w: f64 = rng.random_range(0.5..6.0);
    let r2: f64 = rng.random_range(0.5..4.0);
    Trajectory::from_fn(scenario.grid, |t| {
        let s = c + a1 * (-r1 * t).exp() + a2 * (-r2 * t).exp() * (w * t).sin();
        lo + (hi - lo) / (1.0 + (-s).exp())
    })
}

/// One named property check.
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick property suites: kernel-oracle equivalence, range invariant,
/// growth bounds, steady-state law and the discontinuity example.
pub fn verify_suites(cfg: &ScenarioConfig) -> Result<Vec<Check>> {
    let scenario = cfg.scenario()?;
    let ty = *scenario.single_type()?;
    let g = cfg.g_with_mu(cfg.g.mu.value().unwrap_or(1000.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.sim.seed, "verify"));
    let mut checks = Vec::new();

    let (x0, y, z) = (scenario.x0_bar(), scenario.y(), scenario.z());
    let q = near_fp::q_inf_star(&ty, &scenario.cost, x0, y, z)?;
    let (_, _, xs) = near_fp::steady_state(&ty, &scenario.cost, q, x0, z);
    checks.push(Check {
        name: "steady-state law",
        passed: (xs - y).abs() < 1e-9,
        detail: format!("q* = {q:.9}, x̄∞ - y = {:.3e}", xs - y),
    });

    let mut worst = 0.0_f64;
    let mut range_ok = true;
    let mut growth_ok = true;
    let k = NormK::default_for(&scenario).k();
    let bounds = operators::growth_bounds(&g, &scenario, k)?;
    for _ in 0..5 {
        let x = random_member(&scenario, &mut rng);
        let qy = operators::delta_op(&x, &g, y);
        let chain = operators::t_op_full(&qy, &ty, &scenario.cost, x0, z)?;
        let kernel = operators::t_delta_explicit(&x, &ty, &g, y, &scenario.cost, x0, z)?;
        worst = worst.max(chain.x_bar.sub(&kernel).sup_norm());
        range_ok &= scenario.in_g(&m_op(&x, &scenario, &g)?, 1e-6);
        for i in 0..qy.len() {
            let t = qy.grid.time(i);
            growth_ok &= qy.values[i] <= bounds.k0 * t + 1e-9;
            growth_ok &= chain.pi.values[i] <= bounds.k1 * t + bounds.k2 + 1e-9;
        }
    }
    checks.push(Check {
        name: "kernel oracle",
        passed: worst < 1e-5,
        detail: format!("max sup-norm gap {worst:.3e}"),
    });
    checks.push(Check {
        name: "range invariant",
        passed: range_ok,
        detail: "M(x̄) stays in [z, x̄0]".into(),
    });
    checks.push(Check {
        name: "growth bounds",
        passed: growth_ok,
        detail: format!("k0 = {:.4}, k1 = {:.4}, k2 = {:.4}", bounds.k0, bounds.k1, bounds.k2),
    });

    let demo_sc = operators::discontinuity_scenario(ty)?;
    let demo = operators::sup_norm_discontinuity_demo(&demo_sc, 10)?;
    let last = demo.rows.last().expect("rows");
    checks.push(Check {
        name: "discontinuity example",
        passed: demo.discontinuous(0.95 * demo.span) && last.input_gap < 1e-3,
        detail: format!(
            "‖x̄⁽¹⁰⁾ - y‖ = {:.2e}, min output gap {:.4}",
            last.input_gap,
            demo.rows.iter().map(|r| r.output_gap).fold(f64::INFINITY, f64::min)
        ),
    });
    Ok(checks)
}

fn run_verify(cfg: &ScenarioConfig, report: &mut String) -> Result<i32> {
    let checks = verify_suites(cfg)?;
    let mut all = true;
    for c in &checks {
        all &= c.passed;
        let _ = writeln!(report, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if all { EXIT_OK } else { EXIT_NUMERIC })
}

/// Picard solve at the Algorithm 1 gain, started from the near-Nash mean.
pub fn refine_fixed_point(
    scenario: &Scenario,
    nfp: &NearFixedPoint,
    g: &GFunction,
    params: operators::PicardParams,
) -> Result<MeanFieldSolution> {
    picard_iterate(&nfp.x_bar, scenario, g, NormK::default_for(scenario), params)
}

pub fn output_dir(path: Option<&Path>, command: Command) -> PathBuf {
    path.map(Path::to_path_buf).unwrap_or_else(|| {
        PathBuf::from("out").join(match command {
            Command::NearFp => "near-fp",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Robustness => "robustness",
            Command::Verify => "verify",
        })
    })
}
