//! Python bindings. Every entry point takes a bundled scenario name or a
//! path to a TOML file and returns plain Python values.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mfg_ctt::config::{load_named, ScenarioConfig};
use mfg_ctt::near_fp::{algorithm1, first_crossing, q_inf_star, settling_time};
use mfg_ctt::runner::{self, verify_suites};
use mfg_ctt::sim::{self, excursion_stats, simulate_population, Controller, SimResult};
use mfg_ctt::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyOSError::new_err(e.to_string()),
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(scenario: &str, seed: Option<u64>) -> PyResult<ScenarioConfig> {
    let mut cfg = load_named(scenario).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    Ok(cfg)
}

/// Steady-state pressure coefficient that holds the mean at the target.
#[pyfunction]
fn steady_state_pressure(scenario: &str) -> PyResult<f64> {
    let sc = config(scenario, None)?.scenario().map_err(py_err)?;
    let ty = sc.single_type().map_err(py_err)?;
    q_inf_star(ty, &sc.cost, sc.x0_bar(), sc.y(), sc.z()).map_err(py_err)
}

/// Gain search; returns the summary plus `times`, `x_bar`, `image`, `q_y`.
#[pyfunction]
fn near_fp<'py>(py: Python<'py>, scenario: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(scenario, None)?;
    let sc = cfg.scenario().map_err(py_err)?;
    let g = cfg.g_with_mu(1.0).map_err(py_err)?;
    let r = py.detach(|| algorithm1(&cfg.algo1_params(), &sc, &g)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("mu_star", r.mu_star)?;
    d.set_item("mu_bracket", (r.mu_sup, r.mu_inf))?;
    d.set_item("q_inf_star", r.q_star)?;
    d.set_item("residual_l2", r.residual_l2)?;
    d.set_item("relative_residual", r.relative_residual())?;
    d.set_item("image_terminal_gap", r.image_terminal_gap)?;
    d.set_item("q_limit_gap", r.q_limit_gap)?;
    d.set_item("first_crossing", first_crossing(&r.x_bar, r.y, 0.05))?;
    d.set_item("settling_time", settling_time(&r.x_bar, r.y, 0.05))?;
    d.set_item("times", r.x_bar.grid.times().collect::<Vec<_>>())?;
    d.set_item("x_bar", r.x_bar.values)?;
    d.set_item("image", r.image.values)?;
    d.set_item("q_y", r.q_y.values)?;
    Ok(d)
}

fn sim_dict<'py>(py: Python<'py>, r: &SimResult) -> PyResult<Bound<'py, PyDict>> {
    let st = excursion_stats(r);
    let d = PyDict::new(py);
    d.set_item("times", r.eat.grid.times().collect::<Vec<_>>())?;
    d.set_item("eat", r.eat.values.clone())?;
    d.set_item("terminal", r.terminal.clone())?;
    d.set_item("mean_excursion", st.mean_excursion)?;
    d.set_item("terminal_spread", st.terminal_spread)?;
    d.set_item("energy", st.energy)?;
    d.set_item("violating_agents", st.violating_agents)?;
    d.set_item("drop_rank_correlation", st.drop_rank_correlation)?;
    d.set_item("switch_time", r.switch_time)?;
    d.set_item("plateau", r.plateau)?;
    Ok(d)
}

/// Population run under the mean-field law (`lqg=True` for the baseline).
#[pyfunction]
#[pyo3(signature = (scenario, seed=None, lqg=false))]
fn simulate<'py>(py: Python<'py>, scenario: &str, seed: Option<u64>, lqg: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(scenario, seed)?;
    let r = py
        .detach(|| {
            let sc = cfg.scenario()?;
            let agents = runner::population(&cfg, &sc, cfg.sim.seed)?;
            let simc = runner::sim_config(&cfg, &sc, cfg.sim.seed, 0);
            if lqg {
                sim::lqg_baseline(&agents, &sc, &simc)
            } else {
                let d = runner::design(&cfg, &sc)?;
                simulate_population(&agents, &sc, &Controller::MeanField(d.law), &simc)
            }
        })
        .map_err(py_err)?;
    sim_dict(py, &r)
}

/// Switching controller against the configured true model.
#[pyfunction]
#[pyo3(signature = (scenario, seed=None))]
fn robustness<'py>(py: Python<'py>, scenario: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(scenario, seed)?;
    let (r, _) = py.detach(|| runner::robustness(&cfg, cfg.sim.seed, 0)).map_err(py_err)?;
    sim_dict(py, &r)
}

/// Property suites as `(name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (scenario="s5_linear"))]
fn verify(py: Python<'_>, scenario: &str) -> PyResult<Vec<(String, bool, String)>> {
    let cfg = config(scenario, None)?;
    let checks = py.detach(|| verify_suites(&cfg)).map_err(py_err)?;
    Ok(checks.into_iter().map(|c| (c.name.to_string(), c.passed, c.detail)).collect())
}

/// Normalised TOML of a scenario, after validation.
#[pyfunction]
fn scenario_toml(scenario: &str) -> PyResult<String> {
    Ok(config(scenario, None)?.to_toml())
}

#[pymodule]
#[pyo3(name = "mfg_ctt")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BUNDLED", mfg_ctt::config::BUNDLED.to_vec())?;
    m.add_function(wrap_pyfunction!(steady_state_pressure, m)?)?;
    m.add_function(wrap_pyfunction!(near_fp, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(robustness, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_toml, m)?)?;
    Ok(())
}
