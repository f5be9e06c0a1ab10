//! Discretization of the log-volatility state space.
//!
//! The support `[lower, upper]` is cut into `m` equal cells and the AR(1)
//! log-volatility process is replaced by a finite chain on the cell
//! midpoints. Transition and initial weights use the rectangular rule
//! (density at the midpoint times the cell width); rows are not
//! renormalized, so mass falling outside the range is simply lost.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvError};

/// Smallest innovation standard deviation accepted for the log-volatility process.
pub const MIN_SIGMA: f64 = 1e-8;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityGrid {
    lower_bound: f64,
    upper_bound: f64,
    cell_count: usize,
    cell_width: f64,
    midpoints: Vec<f64>,
}

impl VolatilityGrid {
    pub fn new(lower: f64, upper: f64, m: usize) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(SvError::invalid("grid bounds must be finite"));
        }
        if lower >= upper {
            return Err(SvError::invalid(format!(
                "grid lower bound {lower} must be below upper bound {upper}"
            )));
        }
        if m == 0 {
            return Err(SvError::invalid("grid needs at least one cell"));
        }
        let cell_width = (upper - lower) / m as f64;
        let midpoints = (0..m)
            .map(|i| lower + (i as f64 + 0.5) * cell_width)
            .collect();
        Ok(Self {
            lower_bound: lower,
            upper_bound: upper,
            cell_count: m,
            cell_width,
            midpoints,
        })
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }
}

pub fn build_grid(lower: f64, upper: f64, m: usize) -> Result<VolatilityGrid> {
    VolatilityGrid::new(lower, upper, m)
}

pub(crate) fn check_ar_params(phi: f64, sigma: f64) -> Result<()> {
    if !phi.is_finite() || phi.abs() >= 1.0 {
        return Err(SvError::invalid(format!(
            "persistence phi = {phi} must satisfy |phi| < 1"
        )));
    }
    if !sigma.is_finite() || sigma < MIN_SIGMA {
        return Err(SvError::invalid(format!(
            "log-volatility sd sigma = {sigma} must be finite and at least {MIN_SIGMA}"
        )));
    }
    Ok(())
}

#[inline]
fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    INV_SQRT_2PI / sd * (-0.5 * z * z).exp()
}

/// Row-major `m x m` matrix with entry `(i, j) = N(b_j; phi * b_i, sigma) * b`.
pub fn build_transition(grid: &VolatilityGrid, phi: f64, sigma: f64) -> Result<Vec<f64>> {
    check_ar_params(phi, sigma)?;
    let m = grid.cell_count;
    let width = grid.cell_width;
    let mut out = vec![0.0; m * m];
    for (row, &from) in out.chunks_exact_mut(m).zip(&grid.midpoints) {
        let mean = phi * from;
        for (entry, &to) in row.iter_mut().zip(&grid.midpoints) {
            *entry = normal_pdf(to, mean, sigma) * width;
        }
    }
    Ok(out)
}

/// Stationary `N(0, sigma / sqrt(1 - phi^2))` density at each midpoint, times the cell width.
pub fn build_initial(grid: &VolatilityGrid, phi: f64, sigma: f64) -> Result<Vec<f64>> {
    check_ar_params(phi, sigma)?;
    let sd = stationary_sd(phi, sigma);
    Ok(grid
        .midpoints
        .iter()
        .map(|&b| normal_pdf(b, 0.0, sd) * grid.cell_width)
        .collect())
}

pub fn stationary_sd(phi: f64, sigma: f64) -> f64 {
    sigma / (1.0 - phi * phi).sqrt()
}

/// The HMM analogue of the discretized SV model: grid, `Omega` and `delta`.
#[derive(Debug, Clone)]
pub struct DiscreteStateModel {
    grid: VolatilityGrid,
    phi: f64,
    sigma: f64,
    transition: Vec<f64>,
    initial: Vec<f64>,
}

impl DiscreteStateModel {
    pub fn new(grid: VolatilityGrid, phi: f64, sigma: f64) -> Result<Self> {
        let transition = build_transition(&grid, phi, sigma)?;
        let initial = build_initial(&grid, phi, sigma)?;
        Ok(Self {
            grid,
            phi,
            sigma,
            transition,
            initial,
        })
    }

    /// Assembles a model from explicit weights. Used for hand-built chains in tests
    /// and by callers that already hold `Omega` and `delta`.
    pub fn from_parts(grid: VolatilityGrid, transition: Vec<f64>, initial: Vec<f64>) -> Result<Self> {
        let m = grid.cell_count();
        if transition.len() != m * m || initial.len() != m {
            return Err(SvError::invalid(format!(
                "expected a {m}x{m} transition matrix and {m} initial weights"
            )));
        }
        if transition.iter().chain(&initial).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SvError::invalid("transition and initial weights must be finite and nonnegative"));
        }
        Ok(Self {
            grid,
            phi: f64::NAN,
            sigma: f64::NAN,
            transition,
            initial,
        })
    }

    pub fn grid(&self) -> &VolatilityGrid {
        &self.grid
    }

    pub fn states(&self) -> usize {
        self.grid.cell_count
    }

    /// NaN for models assembled with [`DiscreteStateModel::from_parts`].
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn transition_row(&self, i: usize) -> &[f64] {
        let m = self.states();
        &self.transition[i * m..(i + 1) * m]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.transition
            .chunks_exact(self.states())
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Mass lost per step, averaged over rows with the initial weights.
    ///
    /// Edge rows of a grid always lose part of their mass when `phi` is near
    /// one; this weighted figure only becomes large when the range fails to
    /// cover where the process actually lives.
    pub fn weighted_row_deficit(&self) -> f64 {
        let total: f64 = self.initial.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.row_sums()
            .iter()
            .zip(&self.initial)
            .map(|(s, w)| w * (1.0 - s).max(0.0))
            .sum::<f64>()
            / total
    }

    /// Emits a warning when the discretization visibly leaks probability mass.
    pub fn warn_if_leaky(&self) {
        let deficit = self.weighted_row_deficit();
        let initial_mass: f64 = self.initial.iter().sum();
        if deficit > 1e-3 || initial_mass < 1.0 - 1e-3 {
            log::warn!(
                "log-volatility grid [{}, {}] with m = {} loses mass: weighted row deficit {:.2e}, initial mass {:.6}",
                self.grid.lower_bound,
                self.grid.upper_bound,
                self.grid.cell_count,
                deficit,
                initial_mass
            );
        }
    }
}
