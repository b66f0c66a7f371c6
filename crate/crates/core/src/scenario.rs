use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Trajectory};
use crate::lqg::CostParams;
use crate::population::{ComfortBand, Direction, HeaterType, InitialDistribution, TypeDistribution};

/// Everything that stays fixed while the pressure gain is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dist: TypeDistribution,
    pub init: InitialDistribution,
    pub band: ComfortBand,
    pub cost: CostParams,
    pub grid: TimeGrid,
}

impl Scenario {
    pub fn new(
        dist: TypeDistribution,
        init: InitialDistribution,
        band: ComfortBand,
        cost: CostParams,
        grid: TimeGrid,
    ) -> Result<Self> {
        if !(band.l <= init.mean && init.mean <= band.h) {
            return Err(Error::invalid(format!(
                "initial mean {} outside comfort band [{}, {}]",
                init.mean, band.l, band.h
            )));
        }
        Ok(Self {
            dist,
            init,
            band,
            cost,
            grid,
        })
    }

    pub fn x0_bar(&self) -> f64 {
        self.init.mean
    }

    pub fn y(&self) -> f64 {
        self.band.y
    }

    pub fn z(&self) -> f64 {
        self.band.z
    }

    pub fn direction(&self) -> Direction {
        if self.band.z == self.band.l {
            Direction::Release
        } else {
            Direction::Absorb
        }
    }

    /// The only type of a uniform population.
    pub fn single_type(&self) -> Result<&HeaterType> {
        match self.dist.types() {
            [t] => Ok(t),
            ts => Err(Error::invalid(format!(
                "operation needs a uniform population, got {} types",
                ts.len()
            ))),
        }
    }

    /// Lower and upper ends of the admissible mean band `G`.
    pub fn g_bounds(&self) -> (f64, f64) {
        let (z, x0) = (self.z(), self.x0_bar());
        (z.min(x0), z.max(x0))
    }

    pub fn in_g(&self, x: &Trajectory, tol: f64) -> bool {
        let (lo, hi) = self.g_bounds();
        x.values.iter().all(|v| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        Self { grid, ..self.clone() }
    }

    pub fn with_x0_bar(&self, x0_bar: f64) -> Self {
        let mut s = self.clone();
        s.init.mean = x0_bar;
        s
    }
}
