//! CSV artifacts. Numbers are written with Rust's shortest round-trip
//! formatting, so every value reads back bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Trajectory;
use crate::near_fp::DescentRow;
use crate::sim::SimResult;

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes named columns sharing the time axis of the first trajectory.
pub fn write_columns(path: &Path, columns: &[(&str, &Trajectory)]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["time".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(&err)?;
    let Some((_, first)) = columns.first() else {
        return w.flush().map_err(|e| Error::io(path, e));
    };
    for i in 0..first.len() {
        let mut row = vec![num(first.grid.time(i))];
        row.extend(columns.iter().map(|(_, t)| t.values.get(i).map_or(String::new(), |v| num(*v))));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `eat.csv`: `time, eat, x_bar_theory, q_y, total_power` and, when
/// collected, the deciles `q10 .. q90`.
pub fn write_eat(path: &Path, result: &SimResult, theory: &Trajectory, q_y: &Trajectory) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let mut header: Vec<String> = ["time", "eat", "x_bar_theory", "q_y", "total_power"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if result.quantiles.is_some() {
        header.extend((1..=9).map(|k| format!("q{}", 10 * k)));
    }
    w.write_record(&header).map_err(&err)?;
    let eat = &result.eat;
    for i in 0..eat.len() {
        let t = eat.grid.time(i);
        let mut row = vec![
            num(t),
            num(eat.values[i]),
            num(theory.at_time(t)),
            num(q_y.at_time(t)),
            num(result.total_power.values[i]),
        ];
        if let Some(q) = &result.quantiles {
            row.extend(q[i].iter().map(|v| num(*v)));
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `paths.csv` (`agent, time, x, u`) when paths were recorded; otherwise
/// any stale file is removed so the artifact set matches the run.
pub fn write_paths(path: &Path, result: &SimResult) -> Result<bool> {
    let Some(paths) = &result.paths else {
        if path.exists() {
            fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
        return Ok(false);
    };
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["agent", "time", "x", "u"]).map_err(&err)?;
    let grid = result.eat.grid;
    for (slot, id) in paths.agents.iter().enumerate() {
        for i in 0..paths.x[slot].len() {
            w.write_record([
                id.to_string(),
                num(grid.time(i)),
                num(paths.x[slot][i]),
                num(paths.u[slot][i]),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(true)
}

/// Key/value summary in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    rows: Vec<(String, Vec<String>)>,
    header: Vec<String>,
}

impl Summary {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            header: vec!["metric".into(), "value".into()],
        }
    }

    /// Multi-column table, e.g. `metric, mf, lqg`.
    pub fn table(columns: &[&str]) -> Self {
        let mut header = vec!["metric".to_string()];
        header.extend(columns.iter().map(|c| c.to_string()));
        Self { rows: Vec::new(), header }
    }

    pub fn num(&mut self, key: &str, v: f64) -> &mut Self {
        self.rows.push((key.into(), vec![num(v)]));
        self
    }

    pub fn text(&mut self, key: &str, v: impl ToString) -> &mut Self {
        self.rows.push((key.into(), vec![v.to_string()]));
        self
    }

    pub fn opt(&mut self, key: &str, v: Option<f64>) -> &mut Self {
        self.rows.push((key.into(), vec![v.map_or_else(|| "none".into(), num)]));
        self
    }

    pub fn nums(&mut self, key: &str, vs: &[f64]) -> &mut Self {
        self.rows.push((key.into(), vs.iter().map(|v| num(*v)).collect()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, v)| v[0].as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        let err = csv_err(path);
        w.write_record(&self.header).map_err(&err)?;
        for (k, vs) in &self.rows {
            let mut row = vec![k.clone()];
            row.extend(vs.iter().cloned());
            w.write_record(&row).map_err(&err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Aligned text rendering for the terminal.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(self.header[0].len());
        let mut s = String::new();
        if self.header.len() > 2 {
            s.push_str(&format!("{:<width$}  {}\n", self.header[0], self.header[1..].join("  ")));
        }
        for (k, vs) in &self.rows {
            s.push_str(&format!("{k:<width$}  {}\n", vs.join("  ")));
        }
        s
    }
}

/// `descent.csv`: `iter, mu, f, residual_L2, q_limit_gap`.
pub fn write_descent(path: &Path, log: &[DescentRow]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["iter", "mu", "f", "residual_L2", "q_limit_gap"]).map_err(&err)?;
    for r in log {
        w.write_record([r.iter.to_string(), num(r.mu), num(r.f), num(r.residual_l2), num(r.q_limit_gap)])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `escape.csv`: `iter, mu, residual_L2` of a descent that left its bracket.
pub fn write_trace(path: &Path, trace: &[(f64, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["iter", "mu", "residual_L2"]).map_err(&err)?;
    for (i, (mu, r)) in trace.iter().enumerate() {
        w.write_record([i.to_string(), num(*mu), num(*r)]).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    #[test]
    fn columns_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let g = TimeGrid::new(0.1, 10).unwrap();
        let t = Trajectory::from_fn(g, |s| (s * 3.1).sin() / 7.0);
        write_columns(&p, &[("v", &t)]).unwrap();
        let mut r = csv::Reader::from_path(&p).unwrap();
        let back: Vec<f64> = r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
        assert_eq!(back, t.values);
    }

    #[test]
    fn summary_lookup_and_render() {
        let mut s = Summary::new();
        s.num("mu_star", 1300.5).text("status", "ok").opt("switch", None);
        assert_eq!(s.get("mu_star"), Some("1300.5"));
        assert!(s.render().contains("switch"));
    }
}
