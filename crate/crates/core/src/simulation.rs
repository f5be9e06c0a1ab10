//! Synthetic return series from the three model families and the two
//! benchmark designs.
//!
//! All draws come from ChaCha20 seeded by a `u64`; replicate streams are
//! split off with the generator's stream counter so runs reproduce across
//! machines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvError};
use crate::grid::{check_ar_params, stationary_sd};
use crate::models::ModelParams;
use crate::spline::SplineDensity;

/// Recorded in outputs next to the seed.
pub const RNG_ALGORITHM: &str = "chacha20";

pub const DESIGN_PHI: f64 = 0.98;
pub const DESIGN_SIGMA: f64 = 0.1;
pub const DESIGN2_NU: f64 = 10.0;
pub const DESIGN2_SHIFT: f64 = 0.02;
/// Standard deviation of the design-1 innovation, computed exactly.
pub const DESIGN1_EPS_SD: f64 = 0.030_342_489_460_600_735;
/// Design-2 scale: `beta * sd(t_10)` equals [`DESIGN1_EPS_SD`].
pub const DESIGN2_BETA: f64 = DESIGN1_EPS_SD * 0.894_427_190_999_915_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimModel {
    Params { params: ModelParams },
    Design1,
    Design2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub model: SimModel,
    pub length: usize,
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
    /// Independent replicate stream under the same seed.
    #[serde(default)]
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSeries {
    pub returns: Vec<f64>,
    pub log_vol: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub rng_algorithm: String,
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

enum Innovation<'a> {
    Normal { beta: f64 },
    Student { beta: f64, t: StudentT<f64> },
    Spline(&'a SplineDensity),
    Design1 { t6: StudentT<f64>, t8: StudentT<f64> },
    Design2 { t: StudentT<f64> },
}

impl Innovation<'_> {
    fn draw(&self, rng: &mut ChaCha20Rng) -> f64 {
        match self {
            Innovation::Normal { beta } => {
                let z: f64 = StandardNormal.sample(rng);
                beta * z
            }
            Innovation::Student { beta, t } => beta * t.sample(rng),
            Innovation::Spline(d) => sample_spline(d, rng),
            Innovation::Design1 { t6, t8 } => {
                if rng.random_bool(0.35) {
                    0.02 * (t6.sample(rng) - 1.0) + 0.006
                } else {
                    0.02 * (t8.sample(rng) + 1.0) + 0.006
                }
            }
            Innovation::Design2 { t } => DESIGN2_BETA * (t.sample(rng) + DESIGN2_SHIFT),
        }
    }
}

fn student(nu: f64) -> Result<StudentT<f64>> {
    StudentT::new(nu).map_err(|e| SvError::invalid(format!("bad degrees of freedom {nu}: {e}")))
}

/// Draws from the spline mixture: pick a component by weight, then use the
/// fact that a normalized B-spline is the law of a uniform-simplex
/// combination of its knots.
pub fn sample_spline(density: &SplineDensity, rng: &mut impl Rng) -> f64 {
    let weights = density.weights();
    let mut u: f64 = rng.random();
    let mut k = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            k = i;
            break;
        }
        u -= w;
    }
    let basis = density.basis();
    let d = basis.degree();
    let knots = &basis.knots()[k..k + d + 2];
    let mut total = 0.0;
    let mut acc = 0.0;
    for t in knots {
        let e: f64 = Exp1.sample(rng);
        total += e;
        acc += e * t;
    }
    acc / total
}

pub fn simulate(spec: &SimSpec) -> Result<SimulatedSeries> {
    if spec.length == 0 {
        return Err(SvError::invalid("simulated series needs length >= 1"));
    }
    let (phi, sigma, innovation) = match &spec.model {
        SimModel::Params { params } => {
            params.validate()?;
            let inn = match params {
                ModelParams::Sv0 { beta, .. } => Innovation::Normal { beta: *beta },
                ModelParams::SvT { beta, nu, .. } => Innovation::Student {
                    beta: *beta,
                    t: student(*nu)?,
                },
                ModelParams::SvSp { density, .. } => Innovation::Spline(density),
            };
            (params.phi(), params.sigma(), inn)
        }
        SimModel::Design1 => (
            DESIGN_PHI,
            DESIGN_SIGMA,
            Innovation::Design1 {
                t6: student(6.0)?,
                t8: student(8.0)?,
            },
        ),
        SimModel::Design2 => (
            DESIGN_PHI,
            DESIGN_SIGMA,
            Innovation::Design2 { t: student(DESIGN2_NU)? },
        ),
    };
    check_ar_params(phi, sigma)?;

    let mut rng = rng_for(spec.seed, spec.stream);
    let total = spec.length + spec.burn_in;
    let mut returns = Vec::with_capacity(spec.length);
    let mut log_vol = Vec::with_capacity(spec.length);
    let z: f64 = StandardNormal.sample(&mut rng);
    let mut g = stationary_sd(phi, sigma) * z;
    for t in 0..total {
        if t > 0 {
            let eta: f64 = StandardNormal.sample(&mut rng);
            g = phi * g + sigma * eta;
        }
        let eps = innovation.draw(&mut rng);
        if t >= spec.burn_in {
            returns.push(eps * (0.5 * g).exp());
            log_vol.push(g);
        }
    }
    Ok(SimulatedSeries {
        returns,
        log_vol,
        seed: spec.seed,
        stream: spec.stream,
        rng_algorithm: RNG_ALGORITHM.to_string(),
    })
}

pub fn simulate_design1(length: usize, seed: u64) -> Result<SimulatedSeries> {
    simulate(&SimSpec {
        model: SimModel::Design1,
        length,
        burn_in: 0,
        seed,
        stream: 0,
    })
}

pub fn simulate_design2(length: usize, seed: u64) -> Result<SimulatedSeries> {
    simulate(&SimSpec {
        model: SimModel::Design2,
        length,
        burn_in: 0,
        seed,
        stream: 0,
    })
}

/// Draws `n` design-1 innovations.
pub fn design1_innovations(n: usize, seed: u64) -> Vec<f64> {
    let inn = Innovation::Design1 {
        t6: StudentT::new(6.0).unwrap(),
        t8: StudentT::new(8.0).unwrap(),
    };
    let mut rng = rng_for(seed, 0);
    (0..n).map(|_| inn.draw(&mut rng)).collect()
}

/// Draws `n` design-2 innovations.
pub fn design2_innovations(n: usize, seed: u64) -> Vec<f64> {
    let inn = Innovation::Design2 {
        t: StudentT::new(DESIGN2_NU).unwrap(),
    };
    let mut rng = rng_for(seed, 0);
    (0..n).map(|_| inn.draw(&mut rng)).collect()
}
