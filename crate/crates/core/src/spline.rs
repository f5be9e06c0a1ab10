//! Penalized B-spline mixture densities for the standardized return innovation.
//!
//! The density is `sum_k a_k psi_k(x)` where each `psi_k` is a B-spline basis
//! function rescaled to integrate to one and the weights `a_k` come from a
//! softmax over logits with the central logit pinned at zero.
//!
//! Knots are placed at `scale * sinh(u_j)` for `u_j` equidistant on
//! `[-TAIL_STRETCH, TAIL_STRETCH]`. Near zero the spacing is close to uniform;
//! towards the tails it grows geometrically, so the unweighted difference
//! penalty bites harder where data are scarce. There are no repeated boundary
//! knots: every basis function is a full, interior B-spline.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvError};

pub const DEFAULT_DEGREE: usize = 3;
pub const MAX_DEGREE: usize = 10;

/// Half-width of the sinh argument range; the outermost knot spacing is
/// roughly `cosh(TAIL_STRETCH)` times the central spacing.
pub const TAIL_STRETCH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct SplineBasis {
    half_count: usize,
    degree: usize,
    scale: f64,
    knots: Vec<f64>,
    padded: Vec<f64>,
    normalizers: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisRepr {
    half_count: usize,
    degree: usize,
    scale: f64,
    #[serde(default)]
    knots: Vec<f64>,
}

impl TryFrom<BasisRepr> for SplineBasis {
    type Error = SvError;

    fn try_from(r: BasisRepr) -> Result<Self> {
        let basis = SplineBasis::new(r.half_count, r.degree, r.scale)?;
        if !r.knots.is_empty()
            && (r.knots.len() != basis.knots.len()
                || r.knots
                    .iter()
                    .zip(&basis.knots)
                    .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs())))
        {
            return Err(SvError::invalid(
                "stored knots do not match the sinh knot rule for this basis",
            ));
        }
        Ok(basis)
    }
}

impl From<SplineBasis> for BasisRepr {
    fn from(b: SplineBasis) -> Self {
        BasisRepr {
            half_count: b.half_count,
            degree: b.degree,
            scale: b.scale,
            knots: b.knots,
        }
    }
}

impl SplineBasis {
    pub fn new(half_count: usize, degree: usize, scale: f64) -> Result<Self> {
        if half_count == 0 {
            return Err(SvError::invalid("spline basis needs K >= 1"));
        }
        if degree == 0 || degree > MAX_DEGREE {
            return Err(SvError::invalid(format!(
                "spline degree must lie in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(SvError::invalid(format!(
                "spline scale must be positive and finite, got {scale}"
            )));
        }
        let count = 2 * half_count + 1;
        let n_knots = count + degree + 1;
        let last = (n_knots - 1) as f64;
        let mut knots: Vec<f64> = (0..n_knots)
            .map(|j| scale * (TAIL_STRETCH * (2.0 * j as f64 / last - 1.0)).sinh())
            .collect();
        // exact symmetry, so symmetric weights give an exactly symmetric density
        for j in 0..n_knots / 2 {
            let v = 0.5 * (knots[n_knots - 1 - j] - knots[j]);
            knots[j] = -v;
            knots[n_knots - 1 - j] = v;
        }
        if n_knots % 2 == 1 {
            knots[n_knots / 2] = 0.0;
        }

        let first_gap = knots[1] - knots[0];
        let last_gap = knots[n_knots - 1] - knots[n_knots - 2];
        let mut padded = Vec::with_capacity(n_knots + 2 * degree);
        padded.extend((0..degree).rev().map(|p| knots[0] - first_gap * (p + 1) as f64));
        padded.extend_from_slice(&knots);
        padded.extend((0..degree).map(|p| knots[n_knots - 1] + last_gap * (p + 1) as f64));

        let normalizers = (0..count)
            .map(|k| (knots[k + degree + 1] - knots[k]) / (degree + 1) as f64)
            .collect();
        Ok(Self {
            half_count,
            degree,
            scale,
            knots,
            padded,
            normalizers,
        })
    }

    /// Basis whose outermost knots sit at `+-half_width`.
    pub fn with_half_width(half_count: usize, degree: usize, half_width: f64) -> Result<Self> {
        Self::new(half_count, degree, half_width / TAIL_STRETCH.sinh())
    }

    pub fn half_count(&self) -> usize {
        self.half_count
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Integrals of the raw B-splines, `(t_{k+d+1} - t_k) / (d + 1)`.
    pub fn normalizers(&self) -> &[f64] {
        &self.normalizers
    }

    pub fn basis_count(&self) -> usize {
        2 * self.half_count + 1
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Index of the knot span `[t_r, t_{r+1})` containing `x`.
    fn span(&self, x: f64) -> Option<usize> {
        let (lo, hi) = self.support();
        if !(x >= lo && x < hi) {
            return None;
        }
        // partition_point gives the first knot > x
        let r = self.knots.partition_point(|&t| t <= x) - 1;
        Some(r.min(self.knots.len() - 2))
    }

    /// Calls `f(k, psi_k(x))` for each standardized basis function that can be
    /// nonzero at `x`.
    pub fn for_each_nonzero(&self, x: f64, mut f: impl FnMut(usize, f64)) {
        let Some(r) = self.span(x) else { return };
        let d = self.degree;
        let s = r + d;
        let p = &self.padded;
        let mut n = [0.0f64; MAX_DEGREE + 1];
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=d {
            left[j] = x - p[s + 1 - j];
            right[j] = p[s + j] - x;
            let mut saved = 0.0;
            for q in 0..j {
                let temp = n[q] / (right[q + 1] + left[j - q]);
                n[q] = saved + right[q + 1] * temp;
                saved = left[j - q] * temp;
            }
            n[j] = saved;
        }
        // n[q] is the padded basis s - d + q, i.e. real basis r - d + q
        let count = self.basis_count();
        for (q, &v) in n.iter().enumerate().take(d + 1) {
            let k = (r + q) as isize - d as isize;
            if k >= 0 && (k as usize) < count {
                let k = k as usize;
                f(k, v / self.normalizers[k]);
            }
        }
    }

    /// All `2K + 1` standardized basis values at `x`.
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.basis_count()];
        self.for_each_nonzero(x, |k, v| out[k] = v);
        out
    }
}

/// Softmax with max-subtraction. Rejects non-finite logits.
pub fn logits_to_weights(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(SvError::invalid("empty logit vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(SvError::invalid("logits must be finite"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|&b| (b - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub order: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            order: 2,
        }
    }
}

impl PenaltyConfig {
    pub fn new(lambda: f64, order: usize) -> Result<Self> {
        let c = Self { lambda, order };
        c.validate(usize::MAX)?;
        Ok(c)
    }

    pub fn validate(&self, basis_count: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(SvError::invalid(format!(
                "smoothing parameter must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.order == 0 || self.order >= basis_count {
            return Err(SvError::invalid(format!(
                "difference order {} must lie in 1..{basis_count}",
                self.order
            )));
        }
        Ok(())
    }
}

fn difference_coefficients(order: usize) -> Vec<f64> {
    // (-1)^(q - j) * C(q, j), j = 0..=q
    let mut c = vec![0.0; order + 1];
    let mut binom = 1.0;
    for j in 0..=order {
        let sign = if (order - j).is_multiple_of(2) { 1.0 } else { -1.0 };
        c[j] = sign * binom;
        binom = binom * (order - j) as f64 / (j + 1) as f64;
    }
    c
}

/// `q`-th order differences of `v`.
pub fn differences(v: &[f64], order: usize) -> Vec<f64> {
    if order >= v.len() {
        return Vec::new();
    }
    let c = difference_coefficients(order);
    (0..v.len() - order)
        .map(|r| c.iter().enumerate().map(|(j, cj)| cj * v[r + j]).sum())
        .collect()
}

/// `(lambda / 2) * sum (Delta^q a_k)^2`, differences taken on the weights.
pub fn penalty_value(weights: &[f64], config: &PenaltyConfig) -> Result<f64> {
    config.validate(weights.len())?;
    let d = differences(weights, config.order);
    Ok(0.5 * config.lambda * d.iter().map(|v| v * v).sum::<f64>())
}

/// Gradient of [`penalty_value`] with respect to the weights: `lambda * D^T D a`.
pub fn penalty_gradient(weights: &[f64], config: &PenaltyConfig) -> Result<Vec<f64>> {
    config.validate(weights.len())?;
    let c = difference_coefficients(config.order);
    let d = differences(weights, config.order);
    let mut g = vec![0.0; weights.len()];
    for (r, dr) in d.iter().enumerate() {
        for (j, cj) in c.iter().enumerate() {
            g[r + j] += config.lambda * dr * cj;
        }
    }
    Ok(g)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// A spline mixture density with its weights and per-span masses cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityRepr", into = "DensityRepr")]
pub struct SplineDensity {
    basis: SplineBasis,
    logits: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DensityRepr {
    basis: SplineBasis,
    logits: Vec<f64>,
}

impl TryFrom<DensityRepr> for SplineDensity {
    type Error = SvError;

    fn try_from(r: DensityRepr) -> Result<Self> {
        SplineDensity::new(r.basis, r.logits)
    }
}

impl From<SplineDensity> for DensityRepr {
    fn from(d: SplineDensity) -> Self {
        DensityRepr {
            basis: d.basis,
            logits: d.logits,
        }
    }
}

impl SplineDensity {
    /// `logits` holds all `2K + 1` entries, central one included.
    pub fn new(basis: SplineBasis, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != basis.basis_count() {
            return Err(SvError::invalid(format!(
                "expected {} logits, got {}",
                basis.basis_count(),
                logits.len()
            )));
        }
        let weights = logits_to_weights(&logits)?;
        // a degree-d polynomial is integrated exactly by ceil((d + 1) / 2) points
        let (gl_nodes, gl_weights) = gauss_legendre(basis.degree / 2 + 1);
        let mut d = Self {
            basis,
            logits,
            weights,
            cumulative: Vec::new(),
            gl_nodes,
            gl_weights,
        };
        let knots = d.basis.knots.clone();
        let mut cumulative = Vec::with_capacity(knots.len());
        cumulative.push(0.0);
        let mut acc = 0.0;
        for w in knots.windows(2) {
            acc += d.integrate_piece(w[0], w[1]);
            cumulative.push(acc);
        }
        d.cumulative = cumulative;
        Ok(d)
    }

    /// Uniform weights: every logit zero.
    pub fn uniform(basis: SplineBasis) -> Self {
        let n = basis.basis_count();
        Self::new(basis, vec![0.0; n]).expect("zero logits are valid")
    }

    /// Builds the density from the `2K` free logits, inserting the pinned zero.
    pub fn from_free_logits(basis: SplineBasis, free: &[f64]) -> Result<Self> {
        let k = basis.half_count();
        if free.len() != 2 * k {
            return Err(SvError::invalid(format!(
                "expected {} free logits, got {}",
                2 * k,
                free.len()
            )));
        }
        let mut logits = Vec::with_capacity(2 * k + 1);
        logits.extend_from_slice(&free[..k]);
        logits.push(0.0);
        logits.extend_from_slice(&free[k..]);
        Self::new(basis, logits)
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Logits with the central (pinned) entry removed.
    pub fn free_logits(&self) -> Vec<f64> {
        let k = self.basis.half_count();
        let centre = self.logits[k];
        self.logits
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, v)| v - centre)
            .collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let mut s = 0.0;
        self.basis.for_each_nonzero(x, |k, v| s += self.weights[k] * v);
        s
    }

    fn integrate_piece(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.gl_nodes
            .iter()
            .zip(&self.gl_weights)
            .map(|(z, w)| w * self.pdf(mid + half * z))
            .sum::<f64>()
            * half
    }

    /// Exact up to rounding: the density is a polynomial on each knot span.
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.basis.support();
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return self.cumulative[self.cumulative.len() - 1].min(1.0);
        }
        let r = self.basis.span(x).expect("inside support");
        let v = self.cumulative[r] + self.integrate_piece(self.basis.knots[r], x);
        v.clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.moment(|x| x)
    }

    /// Central moments give skewness `m3 / m2^1.5`.
    pub fn skewness(&self) -> f64 {
        let mu = self.mean();
        let m2 = self.moment(|x| (x - mu).powi(2));
        let m3 = self.moment(|x| (x - mu).powi(3));
        m3 / m2.powf(1.5)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.moment(|x| (x - mu).powi(2))
    }

    fn moment(&self, g: impl Fn(f64) -> f64) -> f64 {
        // integrand is a polynomial of degree <= d + 3 per span
        let (nodes, weights) = gauss_legendre(self.basis.degree / 2 + 3);
        self.basis
            .knots
            .windows(2)
            .map(|w| {
                let half = 0.5 * (w[1] - w[0]);
                let mid = 0.5 * (w[0] + w[1]);
                nodes
                    .iter()
                    .zip(&weights)
                    .map(|(z, wt)| {
                        let x = mid + half * z;
                        wt * g(x) * self.pdf(x)
                    })
                    .sum::<f64>()
                    * half
            })
            .sum()
    }

    /// Inverse CDF by bisection; used for simulation.
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = self.basis.support();
        let u = u.clamp(0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// `sum_k a_k psi_k(x)` for explicit weights.
pub fn density_eval(basis: &SplineBasis, weights: &[f64], x: f64) -> f64 {
    let mut s = 0.0;
    basis.for_each_nonzero(x, |k, v| s += weights[k] * v);
    s
}

/// Mixture CDF for explicit weights (must be a valid probability vector).
pub fn density_cdf(basis: &SplineBasis, weights: &[f64], x: f64) -> Result<f64> {
    if weights.len() != basis.basis_count() || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(SvError::invalid("weights must be positive, one per basis function"));
    }
    let logits: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    Ok(SplineDensity::new(basis.clone(), logits)?.cdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson on a fine grid between each pair of knots.
    fn simpson(f: impl Fn(f64) -> f64, knots: &[f64], per_span: usize) -> f64 {
        let mut total = 0.0;
        for w in knots.windows(2) {
            let h = (w[1] - w[0]) / per_span as f64;
            let mut s = f(w[0]) + f(w[1] - 1e-15 * w[1].abs().max(1.0));
            for i in 1..per_span {
                let x = w[0] + i as f64 * h;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            total += s * h / 3.0;
        }
        total
    }

    #[test]
    fn basis_counts() {
        assert_eq!(SplineBasis::new(15, 3, 1.0).unwrap().basis_count(), 31);
        assert_eq!(SplineBasis::new(20, 3, 1.0).unwrap().basis_count(), 41);
        assert!(SplineBasis::new(0, 3, 1.0).is_err());
        assert!(SplineBasis::new(3, 3, 0.0).is_err());
        assert!(SplineBasis::new(3, 3, -2.0).is_err());
    }

    #[test]
    fn knots_symmetric_and_widening() {
        let b = SplineBasis::new(10, 3, 0.02).unwrap();
        let t = b.knots();
        let n = t.len();
        for j in 0..n {
            assert_abs_diff_eq!(t[j], -t[n - 1 - j], epsilon = 1e-15);
        }
        let gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| *g > 0.0));
        // spacing grows from the centre outwards
        for j in n / 2..gaps.len() - 1 {
            assert!(gaps[j + 1] > gaps[j]);
        }
        assert!(gaps[gaps.len() - 1] / gaps[gaps.len() / 2] > 3.0);
    }

    #[test]
    fn standardized_basis_integrates_to_one() {
        for &(k, d) in &[(15usize, 3usize), (5, 1), (4, 2), (6, 5)] {
            let b = SplineBasis::new(k, d, 0.7).unwrap();
            for j in 0..b.basis_count() {
                let integral = simpson(|x| b.eval_all(x)[j], b.knots(), 400);
                assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn partition_of_unity_in_interior() {
        // raw B-splines sum to one where all d+1 neighbours exist
        let b = SplineBasis::new(6, 3, 1.0).unwrap();
        let t = b.knots();
        let x = 0.5 * (t[5] + t[6]);
        let mut raw = 0.0;
        b.for_each_nonzero(x, |k, v| raw += v * b.normalizers()[k]);
        assert_abs_diff_eq!(raw, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn softmax_examples() {
        let w = logits_to_weights(&[0.0, 0.0, 0.0]).unwrap();
        for v in &w {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let w = logits_to_weights(&[2f64.ln(), 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
        let w = logits_to_weights(&[700.0, 0.0, -700.0]).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(logits_to_weights(&[0.0, f64::NAN]).is_err());
        assert!(logits_to_weights(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn density_outside_support_is_zero() {
        let d = SplineDensity::uniform(SplineBasis::new(4, 3, 1.0).unwrap());
        let (lo, hi) = d.basis().support();
        assert_eq!(d.pdf(hi + 1e-9), 0.0);
        assert_eq!(d.pdf(lo - 1.0), 0.0);
        assert_eq!(d.cdf(lo - 1.0), 0.0);
        assert_eq!(d.cdf(hi + 5.0), 1.0);
    }

    #[test]
    fn single_weight_degenerates_to_basis_function() {
        let b = SplineBasis::new(3, 3, 1.0).unwrap();
        let mut w = vec![0.0; 7];
        w[2] = 1.0;
        for i in 0..50 {
            let x = -4.0 + 0.16 * i as f64;
            assert_abs_diff_eq!(density_eval(&b, &w, x), b.eval_all(x)[2], epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_weights_median_at_zero() {
        let b = SplineBasis::new(5, 3, 0.3).unwrap();
        let logits = vec![-2.0, -1.0, -0.5, 0.1, 0.4, 0.0, 0.4, 0.1, -0.5, -1.0, -2.0];
        let d = SplineDensity::new(b, logits).unwrap();
        assert_abs_diff_eq!(d.cdf(0.0), 0.5, epsilon = 1e-13);
    }

    #[test]
    fn cdf_differentiates_to_pdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = SplineBasis::new(8, 3, 0.5).unwrap();
        let logits: Vec<f64> = (0..17).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = SplineDensity::new(b, logits).unwrap();
        let (lo, hi) = d.basis().support();
        let h = 1e-6;
        for i in 1..200 {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            let fd = (d.cdf(x + h) - d.cdf(x - h)) / (2.0 * h);
            assert!((fd - d.pdf(x)).abs() < 1e-5, "x={x}: {fd} vs {}", d.pdf(x));
        }
    }

    #[test]
    fn penalty_examples() {
        let cfg = PenaltyConfig::new(2.0, 2).unwrap();
        let v = penalty_value(&[0.1, 0.2, 0.4, 0.2, 0.1], &cfg).unwrap();
        assert_abs_diff_eq!(v, 0.18, epsilon = 1e-15);
        assert_eq!(penalty_value(&[0.2; 5], &cfg).unwrap(), 0.0);
        let lin: Vec<f64> = (0..7).map(|k| 0.05 + 0.01 * k as f64).collect();
        assert_abs_diff_eq!(penalty_value(&lin, &cfg).unwrap(), 0.0, epsilon = 1e-30);
        let bad = PenaltyConfig { lambda: 1.0, order: 5 };
        assert!(penalty_value(&[0.2; 5], &bad).is_err());
        assert!(PenaltyConfig::new(-1.0, 2).is_err());
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let cfg = PenaltyConfig::new(3.0, 2).unwrap();
        let a = [0.05, 0.1, 0.3, 0.25, 0.2, 0.1];
        let g = penalty_gradient(&a, &cfg).unwrap();
        for i in 0..a.len() {
            let mut up = a;
            let mut dn = a;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (penalty_value(&up, &cfg).unwrap() - penalty_value(&dn, &cfg).unwrap()) / 2e-6;
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn free_logit_round_trip() {
        let b = SplineBasis::new(2, 3, 1.0).unwrap();
        let d = SplineDensity::from_free_logits(b, &[0.1, -0.2, 0.3, 0.4]).unwrap();
        assert_eq!(d.logits(), &[0.1, -0.2, 0.0, 0.3, 0.4]);
        assert_eq!(d.free_logits(), vec![0.1, -0.2, 0.3, 0.4]);
    }

    #[test]
    fn json_round_trip() {
        let b = SplineBasis::new(3, 3, 0.4).unwrap();
        let d = SplineDensity::new(b, vec![0.1, 0.2, -0.3, 0.0, 0.5, 1.0, -1.0]).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: SplineDensity = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = SplineDensity::new(
            SplineBasis::new(3, 3, 0.4).unwrap(),
            vec![0.1, 0.2, -0.3, 0.0, 0.5, 1.0, -1.0],
        )
        .unwrap();
        for &u in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            assert_abs_diff_eq!(d.cdf(d.quantile(u)), u, epsilon = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_simplex(logits in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let w = logits_to_weights(&logits).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|v| *v > 0.0));
        }

        #[test]
        fn softmax_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 2..20), c in -30.0f64..30.0) {
            let a = logits_to_weights(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let b = logits_to_weights(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn mixture_integrates_to_one(logits in prop::collection::vec(-3.0f64..3.0, 11)) {
            let d = SplineDensity::new(SplineBasis::new(5, 3, 0.8).unwrap(), logits).unwrap();
            let integral = simpson(|x| d.pdf(x), d.basis().knots(), 200);
            prop_assert!((integral - 1.0).abs() < 1e-8);
            prop_assert!((d.cdf(1e9) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cdf_monotone(logits in prop::collection::vec(-3.0f64..3.0, 9)) {
            let d = SplineDensity::new(SplineBasis::new(4, 3, 1.0).unwrap(), logits).unwrap();
            let mut prev = 0.0;
            for i in 0..400 {
                let c = d.cdf(-8.0 + 0.04 * i as f64);
                prop_assert!(c >= prev - 1e-15);
                prev = c;
            }
        }

        #[test]
        fn penalty_reversal_invariant(w in prop::collection::vec(0.0f64..1.0, 3..30), lambda in 0.0f64..1e4) {
            let cfg = PenaltyConfig::new(lambda, 2).unwrap();
            let rev: Vec<f64> = w.iter().rev().cloned().collect();
            let a = penalty_value(&w, &cfg).unwrap();
            let b = penalty_value(&rev, &cfg).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
            prop_assert!(a >= 0.0);
        }
    }
}
