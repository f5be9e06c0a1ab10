//! Forward filtering, likelihood, smoothing and Viterbi decoding over the
//! discretized log-volatility chain.
//!
//! Everything here works on a `T x m` emission matrix (row `t` is the diagonal
//! of `P(y_t)`), so missing observations are just all-ones rows. The forward
//! recursion normalizes each step and accumulates the log of the normalizers.

use crate::error::{Result, SvError};
use crate::grid::DiscreteStateModel;
use crate::models::ModelParams;

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub log_likelihood: f64,
    /// Row-major `T x m`; row `t` is the filtered state distribution after `y_t`.
    pub scaled_forward: Vec<f64>,
    pub log_scale_factors: Vec<f64>,
    states: usize,
}

impl ForwardResult {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn len(&self) -> usize {
        self.log_scale_factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scale_factors.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.scaled_forward[t * self.states..(t + 1) * self.states]
    }
}

/// Most likely state path; `states` holds 0-based grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPath {
    pub states: Vec<usize>,
    pub log_joint: f64,
}

/// Smoothed state probabilities and expected transition weights.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub log_likelihood: f64,
    /// Row-major `T x m`, `P(g_t = b_i | y_1..y_T)`.
    pub gamma: Vec<f64>,
    /// Row-major `m x m`, `sum_t P(g_{t-1} = b_i, g_t = b_j | y_1..y_T)`.
    pub transition_weights: Vec<f64>,
}

fn check_shapes(model: &DiscreteStateModel, emissions: &[f64]) -> Result<usize> {
    let m = model.states();
    if emissions.is_empty() {
        return Err(SvError::invalid("cannot evaluate an empty series"));
    }
    if !emissions.len().is_multiple_of(m) {
        return Err(SvError::invalid(format!(
            "emission matrix of length {} is not a multiple of m = {m}",
            emissions.len()
        )));
    }
    Ok(emissions.len() / m)
}

fn check_series(obs: &[Option<f64>]) -> Result<()> {
    if obs.is_empty() {
        return Err(SvError::invalid("cannot evaluate an empty series"));
    }
    Ok(())
}

/// `next = prev * Omega` (row vector times matrix).
#[inline]
fn propagate(model: &DiscreteStateModel, prev: &[f64], next: &mut [f64]) {
    next.iter_mut().for_each(|v| *v = 0.0);
    let m = prev.len();
    let omega = model.transition();
    for (i, &a) in prev.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &omega[i * m..(i + 1) * m];
        for (n, w) in next.iter_mut().zip(row) {
            *n += a * w;
        }
    }
}

/// Scaled forward pass over a precomputed emission matrix.
pub fn forward_emissions(model: &DiscreteStateModel, emissions: &[f64]) -> Result<ForwardResult> {
    let t_len = check_shapes(model, emissions)?;
    let m = model.states();
    let mut alpha = vec![0.0; t_len * m];
    let mut log_scale = vec![f64::NEG_INFINITY; t_len];
    let mut buf = vec![0.0; m];

    for t in 0..t_len {
        if t == 0 {
            buf.copy_from_slice(model.initial());
        } else {
            propagate(model, &alpha[(t - 1) * m..t * m], &mut buf);
        }
        let e = &emissions[t * m..(t + 1) * m];
        let row = &mut alpha[t * m..(t + 1) * m];
        let mut c = 0.0;
        for ((r, b), ei) in row.iter_mut().zip(&buf).zip(e) {
            *r = b * ei;
            c += *r;
        }
        if !(c > 0.0) || !c.is_finite() {
            row.iter_mut().for_each(|v| *v = 0.0);
            return Ok(ForwardResult {
                log_likelihood: f64::NEG_INFINITY,
                scaled_forward: alpha,
                log_scale_factors: log_scale,
                states: m,
            });
        }
        row.iter_mut().for_each(|v| *v /= c);
        log_scale[t] = c.ln();
    }
    Ok(ForwardResult {
        log_likelihood: log_scale.iter().sum(),
        scaled_forward: alpha,
        log_scale_factors: log_scale,
        states: m,
    })
}

pub fn forward_filter(
    model: &DiscreteStateModel,
    params: &ModelParams,
    obs: &[Option<f64>],
) -> Result<ForwardResult> {
    check_series(obs)?;
    forward_emissions(model, &params.emission_matrix(model.grid(), obs))
}

/// `log(delta P(y_1) Omega P(y_2) ... Omega P(y_T) 1)`; `-inf` if the product underflows to zero.
pub fn log_likelihood(
    model: &DiscreteStateModel,
    params: &ModelParams,
    obs: &[Option<f64>],
) -> Result<f64> {
    Ok(forward_filter(model, params, obs)?.log_likelihood)
}

/// Forward-backward smoothing. Needed for analytic likelihood gradients.
pub fn forward_backward(model: &DiscreteStateModel, emissions: &[f64]) -> Result<Posterior> {
    let fwd = forward_emissions(model, emissions)?;
    let m = model.states();
    let t_len = fwd.len();
    if !fwd.log_likelihood.is_finite() {
        return Ok(Posterior {
            log_likelihood: fwd.log_likelihood,
            gamma: vec![0.0; t_len * m],
            transition_weights: vec![0.0; m * m],
        });
    }
    let omega = model.transition();
    let mut gamma = fwd.scaled_forward.clone();
    let mut beta = vec![1.0; m];
    let mut weighted = vec![0.0; m];
    let mut outer = vec![0.0; m * m];

    for t in (1..t_len).rev() {
        let scale = fwd.log_scale_factors[t].exp();
        let e = &emissions[t * m..(t + 1) * m];
        for j in 0..m {
            weighted[j] = e[j] * beta[j] / scale;
        }
        let prev = fwd.row(t - 1);
        for i in 0..m {
            let row = &omega[i * m..(i + 1) * m];
            let mut acc = 0.0;
            for (w, o) in weighted.iter().zip(row) {
                acc += w * o;
            }
            beta[i] = acc;
            let a = prev[i];
            if a != 0.0 {
                let out_row = &mut outer[i * m..(i + 1) * m];
                for (o, w) in out_row.iter_mut().zip(&weighted) {
                    *o += a * w;
                }
            }
        }
        for (g, b) in gamma[(t - 1) * m..t * m].iter_mut().zip(&beta) {
            *g *= b;
        }
    }
    for (o, w) in outer.iter_mut().zip(omega) {
        *o *= w;
    }
    Ok(Posterior {
        log_likelihood: fwd.log_likelihood,
        gamma,
        transition_weights: outer,
    })
}

/// Viterbi over a precomputed emission matrix, in log space.
/// Ties go to the lower state index.
pub fn viterbi_emissions(model: &DiscreteStateModel, emissions: &[f64]) -> Result<DecodedPath> {
    let t_len = check_shapes(model, emissions)?;
    let m = model.states();
    // column-major log transition so the inner max runs over contiguous memory
    let mut log_omega_t = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            log_omega_t[j * m + i] = model.transition()[i * m + j].ln();
        }
    }
    let mut back = vec![0usize; t_len * m];
    let mut score: Vec<f64> = model
        .initial()
        .iter()
        .zip(&emissions[..m])
        .map(|(d, e)| d.ln() + e.ln())
        .collect();
    let mut next = vec![0.0; m];
    for t in 1..t_len {
        let e = &emissions[t * m..(t + 1) * m];
        for j in 0..m {
            let col = &log_omega_t[j * m..(j + 1) * m];
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, (s, lo)) in score.iter().zip(col).enumerate() {
                let v = s + lo;
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + e[j].ln();
            back[t * m + j] = arg;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (i, &s) in score.iter().enumerate() {
        if s > best {
            best = s;
            last = i;
        }
    }
    let mut states = vec![0usize; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t * m + states[t]];
    }
    Ok(DecodedPath {
        states,
        log_joint: best,
    })
}

pub fn viterbi_decode(
    model: &DiscreteStateModel,
    params: &ModelParams,
    obs: &[Option<f64>],
) -> Result<DecodedPath> {
    check_series(obs)?;
    viterbi_emissions(model, &params.emission_matrix(model.grid(), obs))
}
