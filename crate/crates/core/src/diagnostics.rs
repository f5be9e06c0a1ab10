//! Forecast pseudo-residuals, normality tests, out-of-sample scores and
//! decoded volatility.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SvError};
use crate::grid::DiscreteStateModel;
use crate::hmm::{forward_emissions, forward_filter, viterbi_decode, ForwardResult};
use crate::models::{ModelKind, ModelParams};

/// Residual assigned when the predictive CDF is exactly 0 or 1.
pub const RESIDUAL_CLAMP: f64 = 8.0;

fn std_normal() -> Normal {
    Normal::standard()
}

/// One-step-ahead predictive state weights: `delta / sum(delta)` at the first
/// step, otherwise the normalized `alpha_{t-1} Omega`.
fn predictive_weights(model: &DiscreteStateModel, fwd: &ForwardResult, t: usize) -> Vec<f64> {
    let m = model.states();
    let mut zeta = if t == 0 {
        model.initial().to_vec()
    } else {
        let prev = fwd.row(t - 1);
        let mut next = vec![0.0; m];
        for (i, &a) in prev.iter().enumerate() {
            if a != 0.0 {
                for (n, w) in next.iter_mut().zip(model.transition_row(i)) {
                    *n += a * w;
                }
            }
        }
        next
    };
    let total: f64 = zeta.iter().sum();
    zeta.iter_mut().for_each(|z| *z /= total);
    zeta
}

fn mix_cdf(model: &DiscreteStateModel, params: &ModelParams, zeta: &[f64], y: f64) -> f64 {
    let u: f64 = zeta
        .iter()
        .zip(model.grid().midpoints())
        .filter(|(z, _)| **z > 0.0)
        .map(|(z, &g)| z * params.conditional_cdf(y, g))
        .sum();
    u.clamp(0.0, 1.0)
}

fn filtered(model: &DiscreteStateModel, params: &ModelParams, obs: &[Option<f64>]) -> Result<ForwardResult> {
    params.validate()?;
    let fwd = forward_filter(model, params, obs)?;
    if !fwd.log_likelihood.is_finite() {
        let t = fwd
            .log_scale_factors
            .iter()
            .position(|c| !c.is_finite())
            .unwrap_or(0);
        return Err(SvError::Data(format!(
            "likelihood underflows at index {t}; the filter cannot continue"
        )));
    }
    Ok(fwd)
}

/// `F(y_t | y_1, ..., y_{t-1})` at the 0-based index `t`, or `None` if `y_t` is missing.
pub fn predictive_cdf(
    model: &DiscreteStateModel,
    params: &ModelParams,
    obs: &[Option<f64>],
    t: usize,
) -> Result<Option<f64>> {
    if t >= obs.len() {
        return Err(SvError::invalid(format!("index {t} outside a series of length {}", obs.len())));
    }
    let fwd = filtered(model, params, &obs[..=t])?;
    Ok(obs[t].map(|y| mix_cdf(model, params, &predictive_weights(model, &fwd, t), y)))
}

/// All predictive CDF values from one forward pass.
pub fn predictive_cdfs(model: &DiscreteStateModel, params: &ModelParams, obs: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let fwd = filtered(model, params, obs)?;
    Ok(obs
        .iter()
        .enumerate()
        .map(|(t, y)| y.map(|y| mix_cdf(model, params, &predictive_weights(model, &fwd, t), y)))
        .collect())
}

/// `Phi^{-1}(u)`, with 0 and 1 mapped to `-+RESIDUAL_CLAMP`. The flag marks a clamp.
pub fn normal_residual(u: f64) -> (f64, bool) {
    if u <= 0.0 {
        (-RESIDUAL_CLAMP, true)
    } else if u >= 1.0 {
        (RESIDUAL_CLAMP, true)
    } else {
        (std_normal().inverse_cdf(u).clamp(-RESIDUAL_CLAMP, RESIDUAL_CLAMP), false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoResiduals {
    /// `None` at missing observations.
    pub predictive_cdf: Vec<Option<f64>>,
    pub values: Vec<Option<f64>>,
    /// 0-based indices whose CDF was exactly 0 or 1.
    pub clamped: Vec<usize>,
}

impl PseudoResiduals {
    pub fn observed(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

/// One residual per observed value, the first one mixing over `delta`.
pub fn pseudo_residuals(model: &DiscreteStateModel, params: &ModelParams, obs: &[Option<f64>]) -> Result<PseudoResiduals> {
    if obs.len() < 2 {
        return Err(SvError::invalid("pseudo-residuals need at least two observations"));
    }
    let cdf = predictive_cdfs(model, params, obs)?;
    let mut clamped = Vec::new();
    let values = cdf
        .iter()
        .enumerate()
        .map(|(t, u)| {
            u.map(|u| {
                let (r, hit) = normal_residual(u);
                if hit {
                    clamped.push(t);
                }
                r
            })
        })
        .collect();
    if !clamped.is_empty() {
        log::warn!("{} predictive CDF values were exactly 0 or 1 and clamped", clamped.len());
    }
    Ok(PseudoResiduals {
        predictive_cdf: cdf,
        values,
        clamped,
    })
}

fn central_moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `JB = n/6 (S^2 + (K - 3)^2 / 4)` with the chi-squared(2) tail `exp(-JB/2)`.
pub fn jarque_bera(x: &[f64]) -> Result<TestResult> {
    if x.len() < 8 {
        return Err(SvError::invalid(format!("Jarque-Bera needs at least 8 values, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SvError::invalid("Jarque-Bera input must be finite"));
    }
    let (_, m2, m3, m4) = central_moments(x);
    if !(m2 > 0.0) {
        return Err(SvError::invalid("Jarque-Bera input has zero variance"));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let statistic = x.len() as f64 / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    Ok(TestResult {
        statistic,
        p_value: (-0.5 * statistic).exp().clamp(0.0, 1.0),
    })
}

/// Asymptotic Kolmogorov distribution tail `P(K > lambda)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against N(0, 1), with Stephens'
/// small-sample correction of the asymptotic p-value.
pub fn ks_normal_test(x: &[f64]) -> Result<TestResult> {
    if x.is_empty() {
        return Err(SvError::invalid("KS test needs data"));
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let nd = std_normal();
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let f = nd.cdf(xi);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0f64, f64::max);
    let sn = n.sqrt();
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d),
    })
}

/// Anderson-Darling distance of values in (0, 1) from the uniform law.
pub fn anderson_darling_uniform(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(SvError::invalid("Anderson-Darling needs data"));
    }
    let mut v: Vec<f64> = u.iter().map(|x| x.clamp(1e-300, 1.0 - 1e-16)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (v[i].ln() + (1.0 - v[n - 1 - i]).ln()))
        .sum();
    Ok(-(n as f64) - s / n as f64)
}

/// `(theoretical, sample)` quantile pairs for a normal QQ plot.
pub fn qq_points(residuals: &[f64]) -> Vec<(f64, f64)> {
    let mut v = residuals.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let nd = std_normal();
    v.iter()
        .enumerate()
        .map(|(i, &r)| (nd.inverse_cdf((i as f64 + 0.5) / n), r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model: ModelKind,
    pub split_index: usize,
    pub in_sample_log_lik: f64,
    /// Log-likelihood of observations from `split_index` on, conditional on the prefix.
    pub out_of_sample_log_lik: f64,
    pub full_log_lik: f64,
    pub out_of_sample_observed: usize,
    /// On the out-of-sample pseudo-residuals; absent with fewer than 8 of them.
    pub jarque_bera: Option<TestResult>,
}

/// Scores the observations at indices `split_index..` conditional on the
/// earlier ones: full-series log-likelihood minus the prefix log-likelihood.
pub fn oos_score(
    model: &DiscreteStateModel,
    params: &ModelParams,
    obs: &[Option<f64>],
    split_index: usize,
) -> Result<ScoreReport> {
    if split_index == 0 || split_index > obs.len() {
        return Err(SvError::invalid(format!(
            "split index {split_index} must lie in 1..={}",
            obs.len()
        )));
    }
    params.validate()?;
    let emissions = params.emission_matrix(model.grid(), obs);
    let m = model.states();
    let in_sample = forward_emissions(model, &emissions[..split_index * m])?.log_likelihood;
    let full = forward_emissions(model, &emissions)?.log_likelihood;
    let out = if split_index == obs.len() { 0.0 } else { full - in_sample };
    let (jarque_bera, observed) = if split_index < obs.len() && full.is_finite() {
        let res = pseudo_residuals(model, params, obs)?;
        let tail: Vec<f64> = res.values[split_index..].iter().flatten().copied().collect();
        let jb = if tail.len() >= 8 { jarque_bera(&tail).ok() } else { None };
        (jb, tail.len())
    } else {
        (None, 0)
    };
    Ok(ScoreReport {
        model: params.kind(),
        split_index,
        in_sample_log_lik: in_sample,
        out_of_sample_log_lik: out,
        full_log_lik: full,
        out_of_sample_observed: observed,
        jarque_bera,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedVolatility {
    /// 0-based grid indices of the Viterbi path.
    pub states: Vec<usize>,
    pub log_vol: Vec<f64>,
    /// `exp(g / 2)`.
    pub volatility: Vec<f64>,
}

pub fn decode_volatility(model: &DiscreteStateModel, params: &ModelParams, obs: &[Option<f64>]) -> Result<DecodedVolatility> {
    let path = viterbi_decode(model, params, obs)?;
    if !path.log_joint.is_finite() {
        return Err(SvError::Data("no state path has positive probability".into()));
    }
    let mid = model.grid().midpoints();
    let log_vol: Vec<f64> = path.states.iter().map(|&i| mid[i]).collect();
    Ok(DecodedVolatility {
        volatility: log_vol.iter().map(|g| (0.5 * g).exp()).collect(),
        log_vol,
        states: path.states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::hmm::oracle;
    use crate::simulation::{simulate, SimModel, SimSpec};
    use crate::spline::{SplineBasis, SplineDensity};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sim(params: &ModelParams, len: usize, seed: u64) -> (Vec<Option<f64>>, Vec<f64>) {
        let s = simulate(&SimSpec {
            model: SimModel::Params { params: params.clone() },
            length: len,
            burn_in: 0,
            seed,
            stream: 0,
        })
        .unwrap();
        (s.returns.into_iter().map(Some).collect(), s.log_vol)
    }

    /// Predictive CDF by summing over every state path of `y_1..y_t`.
    fn enumerated_cdf(model: &DiscreteStateModel, params: &ModelParams, obs: &[Option<f64>], t: usize) -> f64 {
        let m = model.states();
        let e = params.emission_matrix(model.grid(), &obs[..t]);
        let mid = model.grid().midpoints();
        let y = obs[t].unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        oracle::for_each_path(m, t + 1, |path| {
            let mut w = model.initial()[path[0]];
            for k in 0..t {
                w *= e[k * m + path[k]] * model.transition()[path[k] * m + path[k + 1]];
            }
            num += w * params.conditional_cdf(y, mid[path[t]]);
            den += w;
        });
        num / den
    }

    #[test]
    fn predictive_cdf_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let grid = build_grid(-2.0, 2.0, 3).unwrap();
            let phi = rng.random_range(-0.9..0.95);
            let sigma = rng.random_range(0.2..1.0);
            let model = DiscreteStateModel::new(grid, phi, sigma).unwrap();
            let basis = SplineBasis::with_half_width(2, 3, 3.0).unwrap();
            let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let all = [
                ModelParams::Sv0 { phi, sigma, beta: rng.random_range(0.5..2.0) },
                ModelParams::SvT { phi, sigma, beta: 0.8, nu: 4.0 },
                ModelParams::SvSp { phi, sigma, density: SplineDensity::new(basis, logits).unwrap() },
            ];
            for params in &all {
                let mut obs: Vec<Option<f64>> = (0..4).map(|_| Some(rng.random_range(-1.5..1.5))).collect();
                if rng.random_bool(0.3) {
                    obs[1] = None;
                }
                let cdfs = predictive_cdfs(&model, params, &obs).unwrap();
                for t in 0..4 {
                    if obs[t].is_none() {
                        assert!(cdfs[t].is_none());
                        continue;
                    }
                    let want = enumerated_cdf(&model, params, &obs, t);
                    assert!((cdfs[t].unwrap() - want).abs() < 1e-10, "t {t}: {:?} vs {want}", cdfs[t]);
                    let single = predictive_cdf(&model, params, &obs, t).unwrap().unwrap();
                    assert_abs_diff_eq!(single, cdfs[t].unwrap(), epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn predictive_median_and_limits() {
        let grid = build_grid(-3.0, 3.0, 20).unwrap();
        let params = ModelParams::Sv0 { phi: 0.9, sigma: 0.3, beta: 0.01 };
        let model = DiscreteStateModel::new(grid, 0.9, 0.3).unwrap();
        let (mut obs, _) = sim(&params, 30, 1);
        // symmetric mixture of centred normals has median 0
        obs[29] = Some(0.0);
        let u = predictive_cdf(&model, &params, &obs, 29).unwrap().unwrap();
        assert_abs_diff_eq!(u, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_residual(u).0, 0.0, epsilon = 1e-10);
        obs[29] = Some(1.0);
        assert!(predictive_cdf(&model, &params, &obs, 29).unwrap().unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn normal_quantile_values() {
        assert_abs_diff_eq!(normal_residual(0.975).0, 1.959_963_984_540_054, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_residual(0.5).0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_residual(1e-10).0, -6.361_340_902_404_056, epsilon = 1e-8);
        assert_eq!(normal_residual(0.0), (-RESIDUAL_CLAMP, true));
        assert_eq!(normal_residual(1.0), (RESIDUAL_CLAMP, true));
    }

    #[test]
    fn jb_zero_on_moment_matched_input() {
        // symmetric three-point sample: 1/6 at +-sqrt(3), 2/3 at 0 has kurtosis 3
        let s3 = 3f64.sqrt();
        let mut x = vec![0.0; 8];
        x.extend([s3, -s3, s3, -s3]);
        x.extend([0.0; 0]);
        let jb = jarque_bera(&x).unwrap();
        assert_abs_diff_eq!(jb.statistic, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(jb.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jb_skew_one_kurtosis_three() {
        let points = [
            -1.1835287581916798,
            -0.6411093296801419,
            -0.3474786332626803,
            -0.0997726990757488,
            0.2766421600554524,
            1.9952472601547986,
        ];
        let x: Vec<f64> = points.iter().flat_map(|p| std::iter::repeat_n(*p, 100)).collect();
        let (_, m2, m3, m4) = central_moments(&x);
        assert!((m3 / m2.powf(1.5) - 1.0).abs() < 1e-12);
        assert!((m4 / (m2 * m2) - 3.0).abs() < 1e-12);
        let jb = jarque_bera(&x).unwrap();
        assert!((jb.statistic - 100.0).abs() < 1e-9, "{}", jb.statistic);
        assert_abs_diff_eq!(jb.p_value, (-50.0f64).exp(), epsilon = 1e-25);
    }

    #[test]
    fn jb_rejects_short_or_constant() {
        assert!(jarque_bera(&[1.0; 7]).is_err());
        assert!(jarque_bera(&[1.0; 10]).is_err());
    }

    proptest! {
        #[test]
        fn jb_affine_invariant(
            x in proptest::collection::vec(-5.0f64..5.0, 8..60),
            a in 0.01f64..100.0,
            b in -50.0f64..50.0,
        ) {
            prop_assume!(central_moments(&x).1 > 1e-6);
            let base = jarque_bera(&x).unwrap().statistic;
            let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let other = jarque_bera(&moved).unwrap().statistic;
            prop_assert!((base - other).abs() <= 1e-10 * base.max(1.0));
        }
    }

    #[test]
    fn jb_calibrated_under_normality() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rejections = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            if jarque_bera(&x).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections <= 10, "{rejections}");
    }

    #[test]
    fn ks_detects_shift_and_accepts_normal() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_normal_test(&x).unwrap().p_value > 0.01);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
        assert!(ks_normal_test(&shifted).unwrap().p_value < 1e-6);
        // single point at zero: D = 0.5
        let one = ks_normal_test(&[0.0]).unwrap();
        assert_abs_diff_eq!(one.statistic, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn oos_additivity_and_empty_tail() {
        let params = ModelParams::SvT { phi: 0.95, sigma: 0.2, beta: 0.01, nu: 6.0 };
        let model = DiscreteStateModel::new(build_grid(-3.0, 3.0, 40).unwrap(), 0.95, 0.2).unwrap();
        let (mut obs, _) = sim(&params, 400, 2);
        obs[350] = None;
        for split in [1, 100, 300, 399] {
            let r = oos_score(&model, &params, &obs, split).unwrap();
            assert!((r.in_sample_log_lik + r.out_of_sample_log_lik - r.full_log_lik).abs() <= 1e-12 * r.full_log_lik.abs().max(1.0));
        }
        let end = oos_score(&model, &params, &obs, 400).unwrap();
        assert_eq!(end.out_of_sample_log_lik, 0.0);
        assert!(end.jarque_bera.is_none());
        let mid = oos_score(&model, &params, &obs, 300).unwrap();
        assert_eq!(mid.out_of_sample_observed, 99);
        let jb = mid.jarque_bera.unwrap();
        assert!((0.0..=1.0).contains(&jb.p_value));
        assert!(oos_score(&model, &params, &obs, 0).is_err());
        assert!(oos_score(&model, &params, &obs, 401).is_err());
    }

    #[test]
    fn residuals_calibrated_under_true_model() {
        let params = ModelParams::Sv0 { phi: 0.95, sigma: 0.25, beta: 0.01 };
        let model = DiscreteStateModel::new(build_grid(-4.0, 4.0, 100).unwrap(), 0.95, 0.25).unwrap();
        let mut passes = 0;
        for seed in 0..10 {
            let (obs, _) = sim(&params, 2000, 100 + seed);
            let r = pseudo_residuals(&model, &params, &obs).unwrap();
            assert_eq!(r.values.len(), 2000);
            assert!(r.clamped.is_empty());
            if ks_normal_test(&r.observed()).unwrap().p_value > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 9, "{passes}");
    }

    #[test]
    fn uniformity_discrepancy_falls_with_m() {
        // sigma below the coarsest cell width so the m = 25 grid is visibly wrong
        let (phi, sigma) = (0.98, 0.1);
        let params = ModelParams::Sv0 { phi, sigma, beta: 1.0 };
        let cdfs = |m: usize, obs: &[Option<f64>]| -> Vec<f64> {
            let model = DiscreteStateModel::new(build_grid(-5.0, 5.0, m).unwrap(), phi, sigma).unwrap();
            predictive_cdfs(&model, &params, obs).unwrap().into_iter().flatten().collect()
        };
        let mut ad = [0.0; 3];
        let mut gap = [0.0; 3];
        for seed in 0..4 {
            let (obs, _) = sim(&params, 5000, 200 + seed);
            let reference = cdfs(400, &obs);
            for (k, m) in [25usize, 50, 100].iter().enumerate() {
                let u = cdfs(*m, &obs);
                ad[k] += anderson_darling_uniform(&u).unwrap();
                gap[k] += u.iter().zip(&reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / u.len() as f64;
            }
        }
        assert!(ad[0] > ad[1] + 1.0, "{ad:?}");
        // past m = 50 the statistic sits at its sampling floor
        assert!(ad[2] < ad[1] + 0.25, "{ad:?}");
        assert!(gap[0] > gap[1] && gap[1] > gap[2], "{gap:?}");
    }

    #[test]
    fn decoded_path_tracks_truth() {
        let params = ModelParams::Sv0 { phi: 0.98, sigma: 0.2, beta: 0.01 };
        let model = DiscreteStateModel::new(build_grid(-5.0, 5.0, 100).unwrap(), 0.98, 0.2).unwrap();
        let (obs, truth) = sim(&params, 1000, 9);
        let d = decode_volatility(&model, &params, &obs).unwrap();
        assert!(d.states.iter().all(|&i| i < 100));
        let n = truth.len() as f64;
        let (ma, mb) = (d.log_vol.iter().sum::<f64>() / n, truth.iter().sum::<f64>() / n);
        let cov: f64 = d.log_vol.iter().zip(&truth).map(|(a, b)| (a - ma) * (b - mb)).sum();
        let va: f64 = d.log_vol.iter().map(|a| (a - ma).powi(2)).sum();
        let vb: f64 = truth.iter().map(|b| (b - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr > 0.8, "{corr}");
        assert_abs_diff_eq!(d.volatility[0], (0.5 * d.log_vol[0]).exp(), epsilon = 1e-15);
    }

    #[test]
    fn single_cell_decodes_constant() {
        let params = ModelParams::Sv0 { phi: 0.5, sigma: 0.3, beta: 1.0 };
        let model = DiscreteStateModel::new(build_grid(-1.0, 1.0, 1).unwrap(), 0.5, 0.3).unwrap();
        let obs = vec![Some(0.1), Some(-0.3), None, Some(0.2)];
        let d = decode_volatility(&model, &params, &obs).unwrap();
        assert!(d.log_vol.iter().all(|g| *g == 0.0));
        assert_eq!(d.states, vec![0; 4]);
    }

    #[test]
    fn qq_pairs_sorted() {
        let q = qq_points(&[0.3, -1.0, 2.0, 0.0]);
        assert_eq!(q.iter().map(|p| p.1).collect::<Vec<_>>(), vec![-1.0, 0.0, 0.3, 2.0]);
        assert!(q.windows(2).all(|w| w[0].0 < w[1].0));
        assert_abs_diff_eq!(q[0].0, -q[3].0, epsilon = 1e-12);
    }

    #[test]
    fn underflow_is_reported() {
        let params = ModelParams::Sv0 { phi: 0.5, sigma: 0.3, beta: 1e-6 };
        let model = DiscreteStateModel::new(build_grid(-1.0, 1.0, 5).unwrap(), 0.5, 0.3).unwrap();
        let obs = vec![Some(0.0), Some(50.0), Some(0.0)];
        assert!(predictive_cdfs(&model, &params, &obs).is_err());
    }
}
