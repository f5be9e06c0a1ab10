//! The three conditional-distribution families.
//!
//! Each model supplies the state-dependent density
//! `f(y | g) = exp(-g/2) f_eps(y exp(-g/2))` used on the diagonal of the
//! emission matrices, and the matching conditional CDF for forecast
//! pseudo-residuals.
//!
//! * `Sv0`: `eps = beta * N(0, 1)`.
//! * `SvT`: `eps = beta * t_nu`, with an unstandardized `t_nu`, so the
//!   conditional variance is `beta^2 nu / (nu - 2) exp(g)`.
//! * `SvSp`: `eps` has a penalized B-spline mixture density; no `beta`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Result, SvError};
use crate::grid::{check_ar_params, VolatilityGrid};
use crate::spline::SplineDensity;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sv0,
    SvT,
    SvSp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Sv0, ModelKind::SvT, ModelKind::SvSp];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Sv0 => "sv0",
            ModelKind::SvT => "svt",
            ModelKind::SvSp => "svsp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = SvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "sv0" | "svn" | "normal" => Ok(ModelKind::Sv0),
            "svt" | "t" | "student" => Ok(ModelKind::SvT),
            "svsp" | "sp" | "spline" => Ok(ModelKind::SvSp),
            other => Err(SvError::Usage(format!(
                "unknown model '{other}', expected one of sv0, svt, svsp"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    Sv0 {
        phi: f64,
        sigma: f64,
        beta: f64,
    },
    SvT {
        phi: f64,
        sigma: f64,
        beta: f64,
        nu: f64,
    },
    SvSp {
        phi: f64,
        sigma: f64,
        density: SplineDensity,
    },
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Sv0 { .. } => ModelKind::Sv0,
            ModelParams::SvT { .. } => ModelKind::SvT,
            ModelParams::SvSp { .. } => ModelKind::SvSp,
        }
    }

    pub fn phi(&self) -> f64 {
        match self {
            ModelParams::Sv0 { phi, .. }
            | ModelParams::SvT { phi, .. }
            | ModelParams::SvSp { phi, .. } => *phi,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            ModelParams::Sv0 { sigma, .. }
            | ModelParams::SvT { sigma, .. }
            | ModelParams::SvSp { sigma, .. } => *sigma,
        }
    }

    /// Copy with the log-volatility parameters replaced.
    pub fn with_ar(&self, phi: f64, sigma: f64) -> Self {
        let mut p = self.clone();
        match &mut p {
            ModelParams::Sv0 { phi: a, sigma: b, .. }
            | ModelParams::SvT { phi: a, sigma: b, .. }
            | ModelParams::SvSp { phi: a, sigma: b, .. } => {
                *a = phi;
                *b = sigma;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        check_ar_params(self.phi(), self.sigma())?;
        match self {
            ModelParams::Sv0 { beta, .. } => check_beta(*beta),
            ModelParams::SvT { beta, nu, .. } => {
                check_beta(*beta)?;
                if !(nu.is_finite() && *nu > 2.0) {
                    return Err(SvError::invalid(format!("degrees of freedom nu = {nu} must exceed 2")));
                }
                Ok(())
            }
            ModelParams::SvSp { .. } => Ok(()),
        }
    }

    /// Density of `y` given log-volatility `g`.
    pub fn conditional_density(&self, y: f64, g: f64) -> f64 {
        Emitter::new(self).density(y, g)
    }

    /// `P(Y <= y | g)`.
    pub fn conditional_cdf(&self, y: f64, g: f64) -> f64 {
        match self {
            ModelParams::Sv0 { beta, .. } => {
                let z = y * (-0.5 * g).exp() / beta;
                Normal::standard().cdf(z)
            }
            ModelParams::SvT { beta, nu, .. } => {
                let z = y * (-0.5 * g).exp() / beta;
                // statrs loses accuracy for nu beyond ~1e9; the normal is within 1e-8 here
                if *nu >= T_CDF_NORMAL_NU {
                    return Normal::standard().cdf(z);
                }
                StudentsT::new(0.0, 1.0, *nu)
                    .expect("validated nu")
                    .cdf(z)
            }
            ModelParams::SvSp { density, .. } => density.cdf(y * (-0.5 * g).exp()),
        }
    }

    /// Diagonal of `P(y)` on the grid; all ones for a missing observation.
    pub fn emission_diag(&self, grid: &VolatilityGrid, y: Option<f64>) -> Vec<f64> {
        let emitter = Emitter::new(self);
        match y {
            None => vec![1.0; grid.cell_count()],
            Some(y) => grid.midpoints().iter().map(|&g| emitter.density(y, g)).collect(),
        }
    }

    /// Row-major `T x m` emission matrix for a whole series.
    pub fn emission_matrix(&self, grid: &VolatilityGrid, obs: &[Option<f64>]) -> Vec<f64> {
        let m = grid.cell_count();
        let emitter = Emitter::new(self);
        let scales: Vec<f64> = grid.midpoints().iter().map(|g| (-0.5 * g).exp()).collect();
        let mut out = vec![1.0; obs.len() * m];
        for (row, y) in out.chunks_exact_mut(m).zip(obs) {
            if let Some(y) = *y {
                for (e, &s) in row.iter_mut().zip(&scales) {
                    *e = emitter.density_scaled(y, s);
                }
            }
        }
        out
    }

    /// Gradient of `sum_t sum_i gamma_t(i) log p_t(i)` with respect to the
    /// emission parameters: `[d/dlog beta]` for SV0, `[d/dlog beta, d/dnu]`
    /// for SV_t, and `d/da_k` (one per weight) for SV_sp.
    ///
    /// `gamma` is the `T x m` matrix of smoothed state probabilities and
    /// `emissions` the matching emission matrix.
    pub fn emission_score(
        &self,
        grid: &VolatilityGrid,
        obs: &[Option<f64>],
        gamma: &[f64],
        emissions: &[f64],
    ) -> Vec<f64> {
        let m = grid.cell_count();
        let scales: Vec<f64> = grid.midpoints().iter().map(|g| (-0.5 * g).exp()).collect();
        let rows = obs
            .iter()
            .zip(gamma.chunks_exact(m).zip(emissions.chunks_exact(m)))
            .filter_map(|(y, r)| y.map(|y| (y, r)));
        match self {
            ModelParams::Sv0 { beta, .. } => {
                let mut d_log_beta = 0.0;
                for (y, (gam, _)) in rows {
                    for (gi, s) in gam.iter().zip(&scales) {
                        if *gi > 0.0 {
                            let z = y * s / beta;
                            d_log_beta += gi * (z * z - 1.0);
                        }
                    }
                }
                vec![d_log_beta]
            }
            ModelParams::SvT { beta, nu, .. } => {
                let (mut d_log_beta, mut d_nu) = (0.0, 0.0);
                let base = t_score_constant(*nu);
                for (y, (gam, _)) in rows {
                    for (gi, s) in gam.iter().zip(&scales) {
                        if *gi > 0.0 {
                            let z = y * s / beta;
                            let z2 = z * z;
                            d_log_beta += gi * ((nu + 1.0) * z2 / (nu + z2) - 1.0);
                            d_nu += gi
                                * (base - 0.5 * (z2 / nu).ln_1p()
                                    + (nu + 1.0) * z2 / (2.0 * nu * (nu + z2)));
                        }
                    }
                }
                vec![d_log_beta, d_nu]
            }
            ModelParams::SvSp { density, .. } => {
                let basis = density.basis();
                let mut grad = vec![0.0; basis.basis_count()];
                for (y, (gam, emis)) in rows {
                    for ((gi, e), s) in gam.iter().zip(emis).zip(&scales) {
                        if *gi > 0.0 && *e > 0.0 {
                            // e = s * f(x), so psi_k / f = s * psi_k / e
                            let factor = gi * s / e;
                            basis.for_each_nonzero(y * s, |k, v| grad[k] += factor * v);
                        }
                    }
                }
                grad
            }
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(SvError::invalid(format!("scale beta = {beta} must be positive")));
    }
    Ok(())
}

/// Per-model constants hoisted out of the emission loop.
enum Emitter<'a> {
    Normal { beta: f64 },
    Student { beta: f64, nu: f64, log_norm: f64 },
    Spline { density: &'a SplineDensity },
}

// Above these nu the gamma-function differences lose digits to cancellation,
// so the asymptotic series in x = nu / 2 take over.
const T_NORM_SERIES_NU: f64 = 50.0;
const T_SCORE_SERIES_NU: f64 = 200.0;
const T_CDF_NORMAL_NU: f64 = 1e7;

/// `ln Gamma((nu+1)/2) - ln Gamma(nu/2) - ln(nu pi) / 2`.
fn t_log_normalizer(nu: f64) -> f64 {
    if nu < T_NORM_SERIES_NU {
        return ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    }
    let r = 2.0 / nu;
    let r2 = r * r;
    -LN_SQRT_2PI + r * (-1.0 / 8.0 + r2 * (1.0 / 192.0 + r2 * (-1.0 / 640.0 + r2 * 17.0 / 14336.0)))
}

/// `(psi((nu+1)/2) - psi(nu/2)) / 2 - 1 / (2 nu)`, the constant part of d log f / d nu.
fn t_score_constant(nu: f64) -> f64 {
    if nu < T_SCORE_SERIES_NU {
        return 0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu;
    }
    let r = 2.0 / nu;
    let r2 = r * r;
    0.5 * r2 * (1.0 / 8.0 + r2 * (-1.0 / 64.0 + r2 / 128.0))
}

impl<'a> Emitter<'a> {
    fn new(params: &'a ModelParams) -> Self {
        match params {
            ModelParams::Sv0 { beta, .. } => Emitter::Normal { beta: *beta },
            ModelParams::SvT { beta, nu, .. } => Emitter::Student {
                beta: *beta,
                nu: *nu,
                log_norm: t_log_normalizer(*nu),
            },
            ModelParams::SvSp { density, .. } => Emitter::Spline { density },
        }
    }

    fn density(&self, y: f64, g: f64) -> f64 {
        self.density_scaled(y, (-0.5 * g).exp())
    }

    /// `s = exp(-g/2)`.
    #[inline]
    fn density_scaled(&self, y: f64, s: f64) -> f64 {
        match self {
            Emitter::Normal { beta } => {
                let k = s / beta;
                let z = y * k;
                k * (-0.5 * z * z - LN_SQRT_2PI).exp()
            }
            Emitter::Student { beta, nu, log_norm } => {
                let k = s / beta;
                let z = y * k;
                k * (log_norm - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()).exp()
            }
            Emitter::Spline { density } => s * density.pdf(y * s),
        }
    }
}
