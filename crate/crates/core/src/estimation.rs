//! Penalized maximum likelihood over unconstrained parameters.
//!
//! Parameter vector layout (all unconstrained):
//! * `Sv0`: `[2 atanh(phi), ln sigma, ln beta]`
//! * `SvT`: `[2 atanh(phi), ln sigma, ln beta, ln(nu - 2)]`
//! * `SvSp`: `[2 atanh(phi), ln sigma, free logits...]` (central logit pinned at 0)
//!
//! The objective gradient is analytic by default: by the Fisher identity the
//! score equals the expected complete-data score under the smoothed state
//! probabilities, which the forward-backward pass supplies.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvError};
use crate::grid::{stationary_sd, DiscreteStateModel, VolatilityGrid};
use crate::hmm::{forward_backward, forward_emissions};
use crate::models::{ModelKind, ModelParams};
use crate::optim::{bfgs, nelder_mead, numerical_gradient, Objective, OptimResult, OptimizerSettings, StopReason};
use crate::simulation::{rng_for, simulate, SimModel, SimSpec, RNG_ALGORITHM};
use crate::spline::{penalty_gradient, penalty_value, PenaltyConfig, SplineBasis, SplineDensity, DEFAULT_DEGREE, MAX_DEGREE};

/// Stand-in for a `-inf` objective so simplex steps stay well defined.
pub const OBJECTIVE_FLOOR: f64 = -1e10;

pub const MIN_OBSERVATIONS: usize = 50;

/// Default lower bound for sigma during fitting, in grid cell widths.
///
/// The rectangular rule overstates a transition row's mass by up to
/// `2 exp(-2 pi^2 sigma^2 / b^2)`; once sigma drops well below the cell
/// width `b` the diagonal of `Omega` grows like `b / (sigma sqrt(2 pi))` and
/// the approximate likelihood diverges as sigma goes to zero. At 0.75 cells
/// the overstatement is about 3e-5 per step.
pub const DEFAULT_SIGMA_FLOOR_CELLS: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub m: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower: -5.0,
            upper: 5.0,
            m: 100,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<VolatilityGrid> {
        VolatilityGrid::new(self.lower, self.upper, self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisSpec {
    /// `K`; the basis has `2K + 1` functions.
    pub half_count: usize,
    pub degree: usize,
    /// Knot scale: knots span `+-scale * sinh(2)`. Chosen from the data when absent.
    pub scale: Option<f64>,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            half_count: 20,
            degree: DEFAULT_DEGREE,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Starts {
    /// One moment-based start plus `n - 1` random perturbations of it.
    Count(usize),
    Explicit(Vec<ModelParams>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub grid: GridSpec,
    pub basis: BasisSpec,
    pub penalty: PenaltyConfig,
    pub starts: Starts,
    pub seed: u64,
    pub optimizer: OptimizerSettings,
    pub gradient: GradientMode,
    /// Smallest sigma the optimizer may visit, in grid cell widths.
    pub sigma_floor_cells: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            basis: BasisSpec::default(),
            penalty: PenaltyConfig::default(),
            starts: Starts::Count(5),
            seed: 0,
            optimizer: OptimizerSettings::default(),
            gradient: GradientMode::Analytic,
            sigma_floor_cells: DEFAULT_SIGMA_FLOOR_CELLS,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        self.grid.build()?;
        match &self.starts {
            Starts::Count(0) => return Err(SvError::invalid("need at least one start")),
            Starts::Explicit(v) if v.is_empty() => return Err(SvError::invalid("need at least one start")),
            Starts::Explicit(v) => {
                for p in v {
                    if p.kind() != kind {
                        return Err(SvError::invalid(format!("start for {} given to a {kind} fit", p.kind())));
                    }
                    p.validate()?;
                }
            }
            Starts::Count(_) => {}
        }
        let o = &self.optimizer;
        if !(o.grad_tol > 0.0 && o.f_tol > 0.0 && o.step_tol > 0.0 && o.max_step > 0.0) || o.max_iter == 0 {
            return Err(SvError::invalid("optimizer tolerances must be positive"));
        }
        if !(self.sigma_floor_cells.is_finite() && self.sigma_floor_cells >= 0.0) {
            return Err(SvError::invalid("sigma floor must be finite and >= 0"));
        }
        if kind == ModelKind::SvSp {
            let b = &self.basis;
            if b.half_count == 0 || b.degree == 0 || b.degree > MAX_DEGREE {
                return Err(SvError::invalid(format!(
                    "basis needs K >= 1 and degree in 1..={MAX_DEGREE}"
                )));
            }
            if let Some(s) = b.scale {
                if !(s.is_finite() && s > 0.0) {
                    return Err(SvError::invalid("basis scale must be positive"));
                }
            }
            self.penalty.validate(2 * b.half_count + 1)?;
        }
        Ok(())
    }
}

/// Maps parameters to the unconstrained vector the optimizer works on.
pub fn transform_params(params: &ModelParams) -> Vec<f64> {
    let mut v = vec![2.0 * params.phi().atanh(), params.sigma().ln()];
    match params {
        ModelParams::Sv0 { beta, .. } => v.push(beta.ln()),
        ModelParams::SvT { beta, nu, .. } => {
            v.push(beta.ln());
            v.push((nu - 2.0).ln());
        }
        ModelParams::SvSp { density, .. } => v.extend(density.free_logits()),
    }
    v
}

/// Inverse of [`transform_params`]; `basis` is required for `SvSp`.
pub fn inverse_transform(kind: ModelKind, theta: &[f64], basis: Option<&SplineBasis>) -> Result<ModelParams> {
    let expected = match kind {
        ModelKind::Sv0 => 3,
        ModelKind::SvT => 4,
        ModelKind::SvSp => 2 + 2 * basis.map_or(0, |b| b.half_count()),
    };
    if theta.len() != expected || (kind == ModelKind::SvSp && basis.is_none()) {
        return Err(SvError::invalid(format!(
            "parameter vector of length {} does not fit a {kind} model",
            theta.len()
        )));
    }
    let phi = (0.5 * theta[0]).tanh();
    let sigma = theta[1].exp();
    let params = match kind {
        ModelKind::Sv0 => ModelParams::Sv0 { phi, sigma, beta: theta[2].exp() },
        ModelKind::SvT => ModelParams::SvT {
            phi,
            sigma,
            beta: theta[2].exp(),
            nu: 2.0 + theta[3].exp(),
        },
        ModelKind::SvSp => ModelParams::SvSp {
            phi,
            sigma,
            density: SplineDensity::from_free_logits(basis.unwrap().clone(), &theta[2..])?,
        },
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_lik: f64,
    pub penalty: f64,
}

impl Evaluation {
    pub fn penalized(&self) -> f64 {
        self.log_lik - self.penalty
    }
}

/// Everything the objective needs besides the parameter vector.
#[derive(Debug, Clone)]
pub struct ObjectiveContext<'a> {
    kind: ModelKind,
    grid: VolatilityGrid,
    basis: Option<SplineBasis>,
    penalty: PenaltyConfig,
    obs: &'a [Option<f64>],
    sigma_floor: f64,
}

impl<'a> ObjectiveContext<'a> {
    /// The penalty only applies to `SvSp`; it is ignored for the parametric models.
    pub fn new(
        kind: ModelKind,
        grid: VolatilityGrid,
        basis: Option<SplineBasis>,
        penalty: PenaltyConfig,
        obs: &'a [Option<f64>],
    ) -> Result<Self> {
        if obs.is_empty() {
            return Err(SvError::invalid("cannot evaluate an empty series"));
        }
        if kind == ModelKind::SvSp {
            let b = basis
                .as_ref()
                .ok_or_else(|| SvError::invalid("spline model needs a basis"))?;
            penalty.validate(b.basis_count())?;
        }
        let sigma_floor = DEFAULT_SIGMA_FLOOR_CELLS * grid.cell_width();
        Ok(Self {
            sigma_floor,
            kind,
            grid,
            basis: if kind == ModelKind::SvSp { basis } else { None },
            penalty,
            obs,
        })
    }

    /// Overrides the smallest admissible sigma (default [`DEFAULT_SIGMA_FLOOR_CELLS`] cell widths).
    pub fn with_sigma_floor(mut self, sigma_floor: f64) -> Self {
        self.sigma_floor = sigma_floor;
        self
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn grid(&self) -> &VolatilityGrid {
        &self.grid
    }

    pub fn basis(&self) -> Option<&SplineBasis> {
        self.basis.as_ref()
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            ModelKind::Sv0 => 3,
            ModelKind::SvT => 4,
            ModelKind::SvSp => 2 + 2 * self.basis.as_ref().unwrap().half_count(),
        }
    }

    /// Natural parameters for `theta`; errors below the sigma floor.
    pub fn params(&self, theta: &[f64]) -> Result<ModelParams> {
        let p = inverse_transform(self.kind, theta, self.basis.as_ref())?;
        if p.sigma() < self.sigma_floor * (1.0 - 1e-12) {
            return Err(SvError::invalid(format!(
                "sigma = {} is below the grid resolution floor {}",
                p.sigma(),
                self.sigma_floor
            )));
        }
        Ok(p)
    }

    fn penalty_of(&self, params: &ModelParams) -> f64 {
        match params {
            ModelParams::SvSp { density, .. } if self.penalty.lambda > 0.0 => {
                penalty_value(density.weights(), &self.penalty).expect("validated penalty")
            }
            _ => 0.0,
        }
    }

    /// Log-likelihood and penalty at natural-scale parameters.
    pub fn evaluate_params(&self, params: &ModelParams) -> Result<Evaluation> {
        params.validate()?;
        let model = DiscreteStateModel::new(self.grid.clone(), params.phi(), params.sigma())?;
        let fwd = forward_emissions(&model, &params.emission_matrix(&self.grid, self.obs))?;
        Ok(Evaluation {
            log_lik: fwd.log_likelihood,
            penalty: self.penalty_of(params),
        })
    }

    /// `l_p(theta)`, floored at [`OBJECTIVE_FLOOR`].
    pub fn penalized_objective(&self, theta: &[f64]) -> f64 {
        match self.params(theta).and_then(|p| self.evaluate_params(&p)) {
            Ok(e) => floor(e.penalized()),
            Err(_) => OBJECTIVE_FLOOR,
        }
    }

    /// `l_p(theta)` with its analytic gradient written into `grad`.
    /// At the floor the gradient is zero.
    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let Ok(params) = self.params(theta) else {
            return OBJECTIVE_FLOOR;
        };
        let (phi, sigma) = (params.phi(), params.sigma());
        let Ok(model) = DiscreteStateModel::new(self.grid.clone(), phi, sigma) else {
            return OBJECTIVE_FLOOR;
        };
        let emissions = params.emission_matrix(&self.grid, self.obs);
        let Ok(post) = forward_backward(&model, &emissions) else {
            return OBJECTIVE_FLOOR;
        };
        if !post.log_likelihood.is_finite() || post.log_likelihood < OBJECTIVE_FLOOR {
            return OBJECTIVE_FLOOR;
        }

        let b = self.grid.midpoints();
        let m = b.len();
        let s2 = sigma * sigma;
        let (mut d_phi, mut d_sigma) = (0.0, 0.0);
        for i in 0..m {
            let row = &post.transition_weights[i * m..(i + 1) * m];
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    let r = b[j] - phi * b[i];
                    d_phi += w * r * b[i] / s2;
                    d_sigma += w * (r * r / s2 - 1.0) / sigma;
                }
            }
        }
        let sd = stationary_sd(phi, sigma);
        let d_sd: f64 = post.gamma[..m]
            .iter()
            .zip(b)
            .map(|(g, bi)| g * (bi * bi / (sd * sd) - 1.0) / sd)
            .sum();
        d_phi += d_sd * sd * phi / (1.0 - phi * phi);
        d_sigma += d_sd * sd / sigma;
        grad[0] = d_phi * 0.5 * (1.0 - phi * phi);
        grad[1] = d_sigma * sigma;

        let score = params.emission_score(&self.grid, self.obs, &post.gamma, &emissions);
        let mut penalty = 0.0;
        match &params {
            ModelParams::Sv0 { .. } => grad[2] = score[0],
            ModelParams::SvT { nu, .. } => {
                grad[2] = score[0];
                grad[3] = score[1] * (nu - 2.0);
            }
            ModelParams::SvSp { density, .. } => {
                let a = density.weights();
                let mut g_w = score;
                if self.penalty.lambda > 0.0 {
                    penalty = penalty_value(a, &self.penalty).expect("validated penalty");
                    let pg = penalty_gradient(a, &self.penalty).expect("validated penalty");
                    g_w.iter_mut().zip(&pg).for_each(|(g, p)| *g -= p);
                }
                // softmax chain rule, skipping the pinned central logit
                let mean: f64 = a.iter().zip(&g_w).map(|(ai, gi)| ai * gi).sum();
                let k = density.basis().half_count();
                let mut slot = 2;
                for (l, (ai, gi)) in a.iter().zip(&g_w).enumerate() {
                    if l != k {
                        grad[slot] = ai * (gi - mean);
                        slot += 1;
                    }
                }
            }
        }
        let value = post.log_likelihood - penalty;
        if value < OBJECTIVE_FLOOR {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return OBJECTIVE_FLOOR;
        }
        value
    }

    /// Central-difference counterpart of [`Self::value_and_gradient`].
    pub fn numerical_value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        numerical_gradient(|t| self.penalized_objective(t), theta, grad);
        self.penalized_objective(theta)
    }
}

/// Free-function form of [`ObjectiveContext::penalized_objective`].
pub fn penalized_objective(theta: &[f64], context: &ObjectiveContext<'_>) -> f64 {
    context.penalized_objective(theta)
}

fn floor(v: f64) -> f64 {
    if v.is_nan() {
        OBJECTIVE_FLOOR
    } else {
        v.max(OBJECTIVE_FLOOR)
    }
}

/// Minimization view of the penalized log-likelihood.
///
/// The optimizer searches over `xi` with `sigma = floor + exp(xi)` so the
/// sigma floor is never crossed; every other coordinate equals `theta`.
struct Negated<'c, 'a> {
    ctx: &'c ObjectiveContext<'a>,
    mode: GradientMode,
}

impl Negated<'_, '_> {
    fn to_theta(&self, x: &[f64]) -> Vec<f64> {
        let mut theta = x.to_vec();
        let floor = self.ctx.sigma_floor;
        if floor > 0.0 {
            theta[1] = (floor + x[1].exp()).ln();
        }
        theta
    }

    fn to_search(&self, theta: &[f64]) -> Vec<f64> {
        let mut x = theta.to_vec();
        let floor = self.ctx.sigma_floor;
        if floor > 0.0 {
            x[1] = (theta[1].exp() - floor).ln();
        }
        x
    }
}

impl Objective for Negated<'_, '_> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.ctx.penalized_objective(&self.to_theta(x))
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let theta = self.to_theta(x);
        let v = match self.mode {
            GradientMode::Analytic => self.ctx.value_and_gradient(&theta, grad),
            GradientMode::Numerical => self.ctx.numerical_value_and_gradient(&theta, grad),
        };
        let floor = self.ctx.sigma_floor;
        if floor > 0.0 {
            let e = x[1].exp();
            grad[1] *= e / (floor + e);
        }
        grad.iter_mut().for_each(|g| *g = -*g);
        -v
    }
}

/// Summary of one optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub index: usize,
    pub penalized_log_lik: f64,
    pub converged: bool,
    pub reason: StopReason,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub simplex_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub params: ModelParams,
    pub log_lik: f64,
    pub penalized_log_lik: f64,
    pub penalty: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub start_index: usize,
    pub n_observed: usize,
    pub series_length: usize,
    /// The sigma estimate reached the grid resolution floor.
    pub sigma_at_floor: bool,
    /// Natural-scale standard errors from the observed information (parametric models only).
    pub standard_errors: Option<BTreeMap<String, f64>>,
    pub starts: Vec<StartOutcome>,
    pub config: FitConfig,
}

impl FitResult {
    pub fn grid(&self) -> Result<VolatilityGrid> {
        self.config.grid.build()
    }

    pub fn discrete_model(&self) -> Result<DiscreteStateModel> {
        DiscreteStateModel::new(self.grid()?, self.params.phi(), self.params.sigma())
    }
}

/// Named natural-scale parameters (`phi`, `sigma`, and `beta`, `nu` where present).
pub fn natural_values(params: &ModelParams) -> Vec<(&'static str, f64)> {
    let mut v = vec![("phi", params.phi()), ("sigma", params.sigma())];
    match params {
        ModelParams::Sv0 { beta, .. } => v.push(("beta", *beta)),
        ModelParams::SvT { beta, nu, .. } => {
            v.push(("beta", *beta));
            v.push(("nu", *nu));
        }
        ModelParams::SvSp { .. } => {}
    }
    v
}

struct Moments {
    phi: f64,
    sigma: f64,
    beta: f64,
    vol_var: f64,
    sd: f64,
}

/// Moment estimates from `ln y^2 = ln beta^2 + g + ln eps^2`.
fn moment_estimates(obs: &[Option<f64>]) -> Moments {
    let ys: Vec<f64> = obs.iter().flatten().copied().collect();
    let n = ys.len() as f64;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sd = (ys.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    let ly: Vec<Option<f64>> = obs
        .iter()
        .map(|y| y.filter(|v| *v != 0.0).map(|v| (v * v).ln()))
        .collect();
    let vals: Vec<f64> = ly.iter().flatten().copied().collect();
    if vals.len() < 10 {
        return Moments { phi: 0.95, sigma: 0.2, beta: sd, vol_var: 0.4, sd };
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    let (mut cov, mut pairs) = (0.0, 0.0);
    for w in ly.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            cov += (a - mean) * (b - mean);
            pairs += 1.0;
        }
    }
    // variance of ln chi^2_1 is pi^2 / 2, its mean -1.2704
    let vol_var = (var - std::f64::consts::PI.powi(2) / 2.0).max(0.05);
    let acf = if pairs > 0.0 { cov / pairs } else { 0.0 };
    let phi = (acf / vol_var).clamp(0.5, 0.995);
    let sigma = (vol_var * (1.0 - phi * phi)).sqrt();
    let beta = (0.5 * (mean + 1.2704)).exp();
    Moments { phi, sigma, beta, vol_var, sd }
}

/// Default knot layout: the basis covers about 8 standard deviations of the
/// implied innovation.
fn default_half_width(m: &Moments) -> f64 {
    8.0 * m.sd * (-m.vol_var / 4.0).exp()
}

fn moment_start(kind: ModelKind, m: &Moments, basis: Option<&SplineBasis>) -> ModelParams {
    match kind {
        ModelKind::Sv0 => ModelParams::Sv0 { phi: m.phi, sigma: m.sigma, beta: m.beta },
        ModelKind::SvT => ModelParams::SvT {
            phi: m.phi,
            sigma: m.sigma,
            beta: m.beta * 0.8f64.sqrt(),
            nu: 10.0,
        },
        ModelKind::SvSp => ModelParams::SvSp {
            phi: m.phi,
            sigma: m.sigma,
            density: SplineDensity::uniform(basis.expect("basis").clone()),
        },
    }
}

/// Widens the basis until every observation has positive density under some state.
fn covering_basis(spec: &BasisSpec, grid: &VolatilityGrid, obs: &[Option<f64>], m: &Moments) -> Result<SplineBasis> {
    let mut basis = match spec.scale {
        Some(s) => SplineBasis::new(spec.half_count, spec.degree, s)?,
        None => SplineBasis::with_half_width(spec.half_count, spec.degree, default_half_width(m))?,
    };
    let top = *grid.midpoints().last().unwrap();
    let widest = obs.iter().flatten().fold(0.0f64, |a, y| a.max(y.abs())) * (-0.5 * top).exp();
    for _ in 0..60 {
        let (lo, hi) = basis.support();
        if widest < 0.999 * hi.min(-lo) {
            return Ok(basis);
        }
        log::warn!(
            "spline support [{lo:.4}, {hi:.4}] misses scaled observation {widest:.4}; widening by 1.5"
        );
        basis = SplineBasis::new(spec.half_count, spec.degree, basis.scale() * 1.5)?;
    }
    Err(SvError::Data("could not cover the observations with the spline support".into()))
}

fn run_start(obj: &Negated<'_, '_>, index: usize, x0: &[f64], settings: &OptimizerSettings) -> (OptimResult, StartOutcome) {
    let mut r = bfgs(obj, x0, settings);
    let mut fallback = false;
    let stalled = matches!(
        r.reason,
        StopReason::LineSearchFailed | StopReason::NonFiniteGradient | StopReason::Stalled
    );
    if stalled && r.value < -OBJECTIVE_FLOOR {
        fallback = true;
        let nm_settings = OptimizerSettings {
            max_iter: (settings.max_iter / 10).max(50),
            ..*settings
        };
        let nm = nelder_mead(obj, &r.x, 0.1, &nm_settings);
        let again = bfgs(obj, &nm.x, settings);
        let evals = r.evaluations + nm.evaluations + again.evaluations;
        let iters = r.iterations + nm.iterations + again.iterations;
        let nm_converged = nm.converged;
        r = if again.value <= nm.value { again } else { nm };
        r.converged = r.converged || nm_converged;
        r.evaluations = evals;
        r.iterations = iters;
    }
    // Near the sigma floor the search gradient carries a factor e^xi and
    // vanishes, so BFGS can stop there while the likelihood still rises in
    // sigma. Restart from twice the floor in that case.
    for _ in 0..3 {
        let floor = obj.ctx.sigma_floor;
        if floor <= 0.0 || r.value >= -OBJECTIVE_FLOOR || r.x[1].exp() > 0.05 * floor {
            break;
        }
        let mut grad = vec![0.0; r.x.len()];
        obj.ctx.value_and_gradient(&obj.to_theta(&r.x), &mut grad);
        if !(grad[1] > 0.0) {
            break;
        }
        let mut x = r.x.clone();
        x[1] = floor.ln();
        let again = bfgs(obj, &x, settings);
        let (evals, iters) = (r.evaluations + again.evaluations, r.iterations + again.iterations);
        if again.value < r.value {
            r = again;
        } else {
            r.converged = r.converged && again.converged;
        }
        r.evaluations = evals;
        r.iterations = iters;
        if r.x[1].exp() > 0.05 * floor {
            break;
        }
    }
    // a start stuck at the floor has not found anything
    if r.value >= -OBJECTIVE_FLOOR {
        r.converged = false;
    }
    let outcome = StartOutcome {
        index,
        penalized_log_lik: -r.value,
        converged: r.converged,
        reason: r.reason,
        iterations: r.iterations,
        evaluations: r.evaluations,
        gradient_norm: r.gradient_norm,
        simplex_fallback: fallback,
    };
    (r, outcome)
}

/// Maximizes the penalized log-likelihood over all starts and keeps the best.
pub fn fit(obs: &[Option<f64>], kind: ModelKind, config: &FitConfig) -> Result<FitResult> {
    config.validate(kind)?;
    let n_observed = obs.iter().flatten().count();
    if n_observed < MIN_OBSERVATIONS {
        return Err(SvError::Data(format!(
            "need at least {MIN_OBSERVATIONS} observed returns, got {n_observed}"
        )));
    }
    if let Some(t) = obs.iter().position(|y| y.is_some_and(|v| !v.is_finite())) {
        return Err(SvError::Data(format!("non-finite return at index {t}")));
    }
    let grid = config.grid.build()?;
    let moments = moment_estimates(obs);

    let (basis, starts): (Option<SplineBasis>, Vec<ModelParams>) = match &config.starts {
        Starts::Explicit(list) => {
            let basis = match &list[0] {
                ModelParams::SvSp { density, .. } => Some(density.basis().clone()),
                _ => None,
            };
            if list.iter().any(|p| match p {
                ModelParams::SvSp { density, .. } => Some(density.basis()) != basis.as_ref(),
                _ => false,
            }) {
                return Err(SvError::invalid("explicit spline starts must share one basis"));
            }
            (basis, list.clone())
        }
        Starts::Count(n) => {
            let basis = match kind {
                ModelKind::SvSp => Some(covering_basis(&config.basis, &grid, obs, &moments)?),
                _ => None,
            };
            let first = moment_start(kind, &moments, basis.as_ref());
            let base = transform_params(&first);
            let mut rng = rng_for(config.seed, 0);
            let spread = [0.5, 0.3, 0.2, 0.5];
            let mut starts = vec![first];
            for _ in 1..*n {
                let mut theta = base.clone();
                for (v, s) in theta.iter_mut().zip(spread).take(if kind == ModelKind::SvSp { 2 } else { 4 }) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += s * z;
                }
                starts.push(inverse_transform(kind, &theta, basis.as_ref())?);
            }
            (basis, starts)
        }
    };

    let sigma_floor = config.sigma_floor_cells * grid.cell_width();
    let ctx = ObjectiveContext::new(kind, grid.clone(), basis, config.penalty, obs)?.with_sigma_floor(sigma_floor);
    // starts must lie strictly inside the admissible region
    let starts: Vec<ModelParams> = starts
        .into_iter()
        .map(|p| {
            if p.sigma() < 1.5 * sigma_floor {
                p.with_ar(p.phi(), 1.5 * sigma_floor)
            } else {
                p
            }
        })
        .collect();
    let obj = Negated { ctx: &ctx, mode: config.gradient };
    let runs: Vec<(OptimResult, StartOutcome)> = starts
        .par_iter()
        .enumerate()
        .map(|(i, p)| run_start(&obj, i, &obj.to_search(&transform_params(p)), &config.optimizer))
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.value.total_cmp(&b.1 .0.value))
        .map(|(i, _)| i)
        .unwrap();
    let theta = obj.to_theta(&runs[best].0.x);
    let params = ctx.params(&theta)?;
    let eval = ctx.evaluate_params(&params)?;
    if !eval.log_lik.is_finite() {
        return Err(SvError::Data(
            "likelihood is zero at every start; widen the grid range or the spline support".into(),
        ));
    }
    let model = DiscreteStateModel::new(grid, params.phi(), params.sigma())?;
    model.warn_if_leaky();

    let standard_errors = match kind {
        ModelKind::SvSp => None,
        _ => standard_errors(&ctx, &theta),
    };
    let sigma_at_floor = params.sigma() < 1.01 * sigma_floor;
    if sigma_at_floor {
        log::warn!(
            "sigma estimate {:.4} sits at the grid resolution floor {:.4}; use a finer grid",
            params.sigma(),
            sigma_floor
        );
    }
    let outcomes: Vec<StartOutcome> = runs.iter().map(|r| r.1.clone()).collect();
    Ok(FitResult {
        model: kind,
        log_lik: eval.log_lik,
        penalized_log_lik: eval.penalized(),
        penalty: eval.penalty,
        converged: outcomes[best].converged,
        n_evals: outcomes.iter().map(|o| o.evaluations).sum(),
        start_index: best,
        n_observed,
        series_length: obs.len(),
        sigma_at_floor,
        standard_errors,
        starts: outcomes,
        config: config.clone(),
        params,
    })
}

/// Delta-method standard errors from a finite-difference Hessian of the
/// analytic gradient. `None` when the Hessian is not negative definite.
pub fn standard_errors(ctx: &ObjectiveContext<'_>, theta: &[f64]) -> Option<BTreeMap<String, f64>> {
    let n = theta.len();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut x = theta.to_vec();
    for j in 0..n {
        let h = 1e-4 * theta[j].abs().max(1.0);
        x[j] = theta[j] + h;
        ctx.value_and_gradient(&x, &mut gp);
        x[j] = theta[j] - h;
        ctx.value_and_gradient(&x, &mut gm);
        x[j] = theta[j];
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let info = -(&hess + hess.transpose()) * 0.5;
    let cov = info.cholesky()?.inverse();
    let params = ctx.params(theta).ok()?;
    // d natural / d theta for each coordinate
    let phi = params.phi();
    let mut jac = vec![0.5 * (1.0 - phi * phi), params.sigma()];
    match &params {
        ModelParams::Sv0 { beta, .. } => jac.push(*beta),
        ModelParams::SvT { beta, nu, .. } => {
            jac.push(*beta);
            jac.push(nu - 2.0);
        }
        ModelParams::SvSp { .. } => return None,
    }
    Some(
        natural_values(&params)
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.to_string(), jac[i] * cov[(i, i)].sqrt()))
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub samples: Vec<ModelParams>,
    pub failures: usize,
    pub seed: u64,
    pub rng_algorithm: String,
}

impl BootstrapResult {
    /// Mean and standard deviation of each natural-scale parameter.
    pub fn summary(&self) -> BTreeMap<String, (f64, f64)> {
        let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for p in &self.samples {
            for (name, v) in natural_values(p) {
                cols.entry(name.to_string()).or_default().push(v);
            }
        }
        cols.into_iter()
            .map(|(k, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (k, (mean, var.sqrt()))
            })
            .collect()
    }
}

/// Parametric bootstrap: simulate from the fitted model, refit starting at
/// the fitted parameters. Replicate `r` uses stream `r + 1` of `seed`.
pub fn bootstrap(
    fitted: &FitResult,
    series_length: usize,
    replicates: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<BootstrapResult> {
    if replicates == 0 {
        return Err(SvError::invalid("bootstrap needs at least one replicate"));
    }
    if !fitted.converged {
        return Err(SvError::invalid("bootstrap needs a converged fit"));
    }
    let refit_config = FitConfig {
        starts: Starts::Explicit(vec![fitted.params.clone()]),
        ..config.clone()
    };
    let results: Vec<Option<ModelParams>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sim = simulate(&SimSpec {
                model: SimModel::Params { params: fitted.params.clone() },
                length: series_length,
                burn_in: 0,
                seed,
                stream: r as u64 + 1,
            })
            .ok()?;
            let obs: Vec<Option<f64>> = sim.returns.into_iter().map(Some).collect();
            match fit(&obs, fitted.model, &refit_config) {
                Ok(f) if f.converged => Some(f.params),
                _ => None,
            }
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures > 0 {
        log::warn!("{failures} of {replicates} bootstrap refits failed and were dropped");
    }
    Ok(BootstrapResult {
        samples: results.into_iter().flatten().collect(),
        failures,
        seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
    })
}
