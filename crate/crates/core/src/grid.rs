//! Uniform time grids and sampled trajectories.
//!
//! Every operator in the crate exchanges [`Trajectory`] values that live on a
//! shared [`TimeGrid`]; index `i` always corresponds to time `i * dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("grid step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid covering `[0, horizon]` with step `dt`; the horizon is rounded to
    /// a whole number of steps.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let n = (horizon / dt).round() as usize;
        Self::new(dt, n.max(1))
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    /// Index of the grid point closest to `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "trajectory has {} samples, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite trajectory value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.time(i))).collect();
        Self { grid, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() || (self.dt() - other.dt()).abs() > 1e-15 {
            return Err(Error::invalid("trajectories live on different grids"));
        }
        Ok(())
    }

    /// Value at the midpoint of step `[i, i+1]` from a local cubic through
    /// four neighbouring samples (one-sided at the ends).
    pub fn midpoint(&self, i: usize) -> f64 {
        cubic_midpoint(&self.values, i)
    }

    /// Value at `t_i + theta * dt`, `theta` in `[0, 1]`, from the same local
    /// cubic used by [`Trajectory::midpoint`].
    pub fn interpolate(&self, i: usize, theta: f64) -> f64 {
        cubic_at(&self.values, i, theta)
    }

    /// Value at an arbitrary time; linear between samples, held constant past
    /// the horizon.
    pub fn at_time(&self, t: f64) -> f64 {
        let n = self.grid.n_steps;
        let s = t / self.dt();
        if s <= 0.0 {
            return self.values[0];
        }
        if s >= n as f64 {
            return self.values[n];
        }
        let i = s.floor() as usize;
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Trapezoidal integral over the whole grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.dt())
    }

    /// Running trapezoidal integral, zero at `t = 0`.
    pub fn running_integral(&self) -> Self {
        let dt = self.dt();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.len());
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * dt;
            out.push(acc);
        }
        Self {
            grid: self.grid,
            values: out,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Unweighted L2 norm on `[0, T_max]` by the trapezoidal rule.
    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        trapezoid(&sq, self.dt()).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Restriction to the first `n_steps` steps.
    pub fn truncate(&self, n_steps: usize) -> Self {
        let n = n_steps.min(self.grid.n_steps);
        Self {
            grid: TimeGrid {
                dt: self.grid.dt,
                n_steps: n,
            },
            values: self.values[..=n].to_vec(),
        }
    }

    /// Extension to a longer grid by holding the last value.
    pub fn extend_constant(&self, n_steps: usize) -> Self {
        let mut values = self.values.clone();
        let last = self.last();
        values.resize(n_steps + 1, last);
        values.truncate(n_steps + 1);
        Self {
            grid: TimeGrid {
                dt: self.grid.dt,
                n_steps,
            },
            values,
        }
    }
}

pub(crate) fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dt * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Lagrange weights for the cubic through nodes `base..base+4` evaluated at
/// local coordinate `s` (node `base` at `s = 0`).
fn lagrange4(s: f64) -> [f64; 4] {
    let (s0, s1, s2, s3) = (s, s - 1.0, s - 2.0, s - 3.0);
    [
        -s1 * s2 * s3 / 6.0,
        s0 * s2 * s3 / 2.0,
        -s0 * s1 * s3 / 2.0,
        s0 * s1 * s2 / 6.0,
    ]
}

pub(crate) fn cubic_at(values: &[f64], i: usize, theta: f64) -> f64 {
    let n = values.len();
    if n < 4 {
        let j = (i + 1).min(n - 1);
        return values[i] * (1.0 - theta) + values[j] * theta;
    }
    let base = if i == 0 { 0 } else { (i - 1).min(n - 4) };
    let s = (i - base) as f64 + theta;
    let w = lagrange4(s);
    w[0] * values[base] + w[1] * values[base + 1] + w[2] * values[base + 2] + w[3] * values[base + 3]
}

pub(crate) fn cubic_midpoint(values: &[f64], i: usize) -> f64 {
    let n = values.len();
    if i >= 1 && i + 2 < n {
        (-values[i - 1] + 9.0 * values[i] + 9.0 * values[i + 1] - values[i + 2]) / 16.0
    } else {
        cubic_at(values, i, 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(0.1, 20).unwrap()
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let tr = Trajectory::from_fn(grid(), |t| 1.0 - 2.0 * t + 0.5 * t * t - t * t * t);
        for i in 0..20 {
            for theta in [0.0, 0.25, 0.5, 0.9] {
                let t = (i as f64 + theta) * 0.1;
                let exact = 1.0 - 2.0 * t + 0.5 * t * t - t * t * t;
                assert!((tr.interpolate(i, theta) - exact).abs() < 1e-12);
            }
            let t = (i as f64 + 0.5) * 0.1;
            let exact = 1.0 - 2.0 * t + 0.5 * t * t - t * t * t;
            assert!((tr.midpoint(i) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn running_integral_of_constant() {
        let tr = Trajectory::constant(grid(), 3.0);
        let ri = tr.running_integral();
        assert_eq!(ri.first(), 0.0);
        assert!((ri.last() - 6.0).abs() < 1e-12);
        assert!((tr.integral() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(0.1, 0).is_err());
        assert!(Trajectory::new(grid(), vec![0.0; 3]).is_err());
        let mut v = vec![0.0; 21];
        v[4] = f64::NAN;
        assert!(Trajectory::new(grid(), v).is_err());
    }

    #[test]
    fn extend_and_truncate() {
        let tr = Trajectory::from_fn(grid(), |t| t);
        let ext = tr.extend_constant(30);
        assert_eq!(ext.len(), 31);
        assert!((ext.last() - 2.0).abs() < 1e-12);
        let tr2 = ext.truncate(20);
        assert_eq!(tr2, tr);
    }
}
