//! Choosing the smoothing parameter by repeated random calibration /
//! validation splits, each scored by a masked log-likelihood.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvError};
use crate::estimation::{fit, FitConfig, FitResult};
use crate::hmm::log_likelihood;
use crate::models::ModelKind;
use crate::simulation::{rng_for, RNG_ALGORITHM};

pub const DEFAULT_PARTITIONS: usize = 40;
pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.9;

/// `{2^n : n = lo..=hi}`.
pub fn lambda_powers(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|n| 2f64.powi(n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub series_length: usize,
    /// Sorted 0-based validation indices, one set per partition.
    pub partitions: Vec<Vec<usize>>,
    pub calibration_fraction: f64,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
}

/// `partitions` independent uniform draws (without replacement) of
/// `round((1 - fraction) T)` validation indices. Partition `c` uses stream `c`.
pub fn make_plan(series_length: usize, partitions: usize, fraction: f64, lambda_grid: &[f64], seed: u64) -> Result<CvPlan> {
    if partitions == 0 {
        return Err(SvError::invalid("need at least one partition"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SvError::invalid(format!("calibration fraction must lie in (0, 1), got {fraction}")));
    }
    if lambda_grid.is_empty() {
        return Err(SvError::invalid("empty smoothing parameter grid"));
    }
    if let Some(l) = lambda_grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(SvError::invalid(format!("smoothing parameters must be finite and >= 0, got {l}")));
    }
    let size = ((1.0 - fraction) * series_length as f64).round() as usize;
    if size == 0 || size >= series_length {
        return Err(SvError::invalid(format!(
            "validation size {size} is degenerate for a series of length {series_length}"
        )));
    }
    let partitions = (0..partitions)
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let mut v = index::sample(&mut rng, series_length, size).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    Ok(CvPlan {
        series_length,
        partitions,
        calibration_fraction: fraction,
        lambda_grid: lambda_grid.to_vec(),
        seed,
    })
}

fn check_validation(len: usize, validation: &[usize]) -> Result<Vec<bool>> {
    if validation.is_empty() {
        return Err(SvError::invalid("empty validation set"));
    }
    let mut flag = vec![false; len];
    for &i in validation {
        if i >= len {
            return Err(SvError::invalid(format!("validation index {i} outside a series of length {len}")));
        }
        flag[i] = true;
    }
    if flag.iter().all(|f| *f) {
        return Err(SvError::invalid("validation set covers the whole series"));
    }
    Ok(flag)
}

/// Copy of `obs` with every index where `keep` is false set missing.
pub fn masked(obs: &[Option<f64>], keep: impl Fn(usize) -> bool) -> Vec<Option<f64>> {
    obs.iter()
        .enumerate()
        .map(|(t, y)| if keep(t) { *y } else { None })
        .collect()
}

/// Log-likelihood of the validation points alone (calibration masked) under `fitted`.
pub fn validation_score(fitted: &FitResult, obs: &[Option<f64>], validation: &[usize]) -> Result<f64> {
    let flag = check_validation(obs.len(), validation)?;
    let model = fitted.discrete_model()?;
    log_likelihood(&model, &fitted.params, &masked(obs, |t| flag[t]))
}

/// Fits with the validation points masked, then scores them. `None` when the fit did not converge.
pub fn cv_score(obs: &[Option<f64>], kind: ModelKind, lambda: f64, validation: &[usize], config: &FitConfig) -> Result<Option<f64>> {
    let flag = check_validation(obs.len(), validation)?;
    let mut config = config.clone();
    config.penalty.lambda = lambda;
    let fitted = fit(&masked(obs, |t| !flag[t]), kind, &config)?;
    if !fitted.converged {
        return Ok(None);
    }
    validation_score(&fitted, obs, validation).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelKind,
    pub lambda_grid: Vec<f64>,
    /// `None` where every partition failed for that lambda.
    pub mean_scores: Vec<Option<f64>>,
    /// `scores[l][c]`: lambda `l`, partition `c`; `None` for a non-converged fit.
    pub scores: Vec<Vec<Option<f64>>>,
    pub excluded: Vec<usize>,
    pub selected_lambda: f64,
    pub partitions: usize,
    pub calibration_fraction: f64,
    pub seed: u64,
    pub rng_algorithm: String,
}

/// Mean score per lambda and the index of the winner; exact ties go to the larger lambda.
pub fn summarize(lambda_grid: &[f64], scores: &[Vec<Option<f64>>]) -> Result<(Vec<Option<f64>>, usize)> {
    let means: Vec<Option<f64>> = scores
        .iter()
        .map(|row| {
            let used: Vec<f64> = row.iter().flatten().copied().collect();
            (!used.is_empty()).then(|| used.iter().sum::<f64>() / used.len() as f64)
        })
        .collect();
    let mut best: Option<usize> = None;
    for (l, mean) in means.iter().enumerate() {
        let Some(mean) = mean.filter(|v| v.is_finite()) else { continue };
        best = match best {
            Some(b) => {
                let bm = means[b].unwrap();
                if mean > bm || (mean == bm && lambda_grid[l] > lambda_grid[b]) {
                    Some(l)
                } else {
                    Some(b)
                }
            }
            None => Some(l),
        };
    }
    best.map(|b| (means, b)).ok_or(SvError::NoUsableLambda)
}

/// Scores every (lambda, partition) pair in parallel and picks the best mean.
pub fn select_lambda(obs: &[Option<f64>], kind: ModelKind, plan: &CvPlan, config: &FitConfig) -> Result<CvReport> {
    if plan.series_length != obs.len() {
        return Err(SvError::invalid(format!(
            "plan built for length {}, series has {}",
            plan.series_length,
            obs.len()
        )));
    }
    let c = plan.partitions.len();
    let jobs: Vec<(usize, usize)> = (0..plan.lambda_grid.len()).flat_map(|l| (0..c).map(move |p| (l, p))).collect();
    let flat = jobs
        .par_iter()
        .map(|&(l, p)| cv_score(obs, kind, plan.lambda_grid[l], &plan.partitions[p], config))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<Vec<Option<f64>>> = flat.chunks(c).map(|r| r.to_vec()).collect();
    let excluded: Vec<usize> = scores.iter().map(|r| r.iter().filter(|s| s.is_none()).count()).collect();
    let total: usize = excluded.iter().sum();
    if total > 0 {
        log::warn!("{total} of {} calibration fits did not converge and were left out of the means", jobs.len());
    }
    let (mean_scores, best) = summarize(&plan.lambda_grid, &scores)?;
    Ok(CvReport {
        model: kind,
        lambda_grid: plan.lambda_grid.clone(),
        mean_scores,
        scores,
        excluded,
        selected_lambda: plan.lambda_grid[best],
        partitions: c,
        calibration_fraction: plan.calibration_fraction,
        seed: plan.seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
    })
}

impl CvReport {
    /// One row per lambda: `lambda, mean_score, n_used, score_1, ..., score_C`; failed fits are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["lambda".to_string(), "mean_score".into(), "n_used".into()];
        header.extend((1..=self.partitions).map(|c| format!("score_{c}")));
        w.write_record(&header)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (l, row) in self.scores.iter().enumerate() {
            let mut rec = vec![
                self.lambda_grid[l].to_string(),
                cell(self.mean_scores[l]),
                (row.len() - self.excluded[l]).to_string(),
            ];
            rec.extend(row.iter().map(|s| cell(*s)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
