//! Independent r-trend priors, the two-level hierarchical prior with the
//! country-level mean integrated out, and the empirical-Bayes estimate of
//! the pooling ratio `lambda`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{ParamVector, N_PARAMS, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::normal::{self, LN_SQRT_2PI};

/// Default within/between variance ratios in `ParamVector` order.
pub const DEFAULT_LAMBDA: [f64; N_PARAMS] = [0.35, 0.24, 2.15, 0.40, 0.28, 2.19, 0.61, 0.12];

/// `t0 ~ Uniform[lo, hi]` and independent normals (mean, sd) for the other
/// seven coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentPrior {
    pub t0_range: (f64, f64),
    /// `(mean, sd)` for `t1, log_r0, beta0..beta4`, in that order.
    pub normals: [(f64, f64); N_PARAMS - 1],
}

impl Default for IndependentPrior {
    fn default() -> Self {
        IndependentPrior {
            t0_range: (1970.0, 1990.0),
            normals: [
                (20.0, 4.5),
                (0.42, 0.23),
                (0.46, 0.12),
                (0.17, 0.07),
                (-0.68, 0.24),
                (-0.038, 0.009),
                (0.14, 0.045),
            ],
        }
    }
}

impl IndependentPrior {
    pub fn mean(&self) -> ParamVector {
        ParamVector::from_array(self.gaussian_mean())
    }

    pub fn in_support(&self, theta: &ParamVector) -> bool {
        theta.t0 >= self.t0_range.0 && theta.t0 <= self.t0_range.1
    }

    pub fn log_density(&self, theta: &ParamVector) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let a = theta.to_array();
        let (lo, hi) = self.t0_range;
        let mut lp = -(hi - lo).ln();
        for (x, &(m, s)) in a[1..].iter().zip(self.normals.iter()) {
            lp += normal::log_density(*x, m, s);
        }
        lp
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let (lo, hi) = self.t0_range;
        let mut a = [0.0; N_PARAMS];
        a[0] = Uniform::new_inclusive(lo, hi).expect("valid t0 range").sample(rng);
        for (slot, &(m, s)) in a[1..].iter_mut().zip(self.normals.iter()) {
            *slot = Normal::new(m, s).expect("positive sd").sample(rng);
        }
        ParamVector::from_array(a)
    }

    /// Means with `t0` replaced by the midpoint of its range.
    pub fn gaussian_mean(&self) -> [f64; N_PARAMS] {
        let mut out = [0.0; N_PARAMS];
        out[0] = 0.5 * (self.t0_range.0 + self.t0_range.1);
        for (o, &(m, _)) in out[1..].iter_mut().zip(self.normals.iter()) {
            *o = m;
        }
        out
    }

    /// Standard deviations with `t0` replaced by `width / sqrt(12)`.
    pub fn gaussian_sd(&self) -> [f64; N_PARAMS] {
        let mut out = [0.0; N_PARAMS];
        out[0] = (self.t0_range.1 - self.t0_range.0) / 12f64.sqrt();
        for (o, &(_, s)) in out[1..].iter_mut().zip(self.normals.iter()) {
            *o = s;
        }
        out
    }

    /// Log density of the product of Gaussian marginals (Gaussianized
    /// `t0`), restricted to the `t0` support.
    pub fn gaussian_log_density(&self, theta: &ParamVector) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let (m, s) = (self.gaussian_mean(), self.gaussian_sd());
        theta
            .to_array()
            .iter()
            .zip(m.iter().zip(s.iter()))
            .map(|(x, (m, s))| normal::log_density(*x, *m, *s))
            .sum()
    }
}

/// Per-coordinate hyperparameters of the hierarchical prior.
///
/// `theta_ij | mu_j ~ N(mu_j, sigma1_j^2)` and `mu_j ~ N(mu0_j, sigma0_j^2)`,
/// so each coordinate's marginal is `N(mu0_j, sigma0_j^2 + sigma1_j^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierPriorConfig {
    pub mu0: [f64; N_PARAMS],
    /// Between-area (country-level) SD.
    pub sigma0: [f64; N_PARAMS],
    /// Within-country, area-level SD.
    pub sigma1: [f64; N_PARAMS],
    /// Hard support for `t0`, carried over from the independent prior.
    pub t0_range: (f64, f64),
}

impl Default for HierPriorConfig {
    fn default() -> Self {
        Self::from_lambda(&IndependentPrior::default(), &DEFAULT_LAMBDA)
            .expect("default lambda is positive")
    }
}

impl HierPriorConfig {
    /// Splits each (Gaussianized) prior variance as
    /// `sigma1^2 = v lambda / (1 + lambda)`, `sigma0^2 = v / (1 + lambda)`.
    pub fn from_lambda(prior: &IndependentPrior, lambda: &[f64; N_PARAMS]) -> Result<Self> {
        if let Some((j, l)) = lambda
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::Argument(format!(
                "lambda for {} must be positive and finite, got {l}",
                PARAM_NAMES[j]
            )));
        }
        let sd = prior.gaussian_sd();
        let mut sigma0 = [0.0; N_PARAMS];
        let mut sigma1 = [0.0; N_PARAMS];
        for j in 0..N_PARAMS {
            let total = sd[j] * sd[j];
            sigma0[j] = (total / (1.0 + lambda[j])).sqrt();
            sigma1[j] = (total * lambda[j] / (1.0 + lambda[j])).sqrt();
        }
        Ok(HierPriorConfig {
            mu0: prior.gaussian_mean(),
            sigma0,
            sigma1,
            t0_range: prior.t0_range,
        })
    }

    pub fn lambda(&self) -> [f64; N_PARAMS] {
        std::array::from_fn(|j| (self.sigma1[j] / self.sigma0[j]).powi(2))
    }

    pub fn marginal_sd(&self, j: usize) -> f64 {
        self.sigma0[j].hypot(self.sigma1[j])
    }

    fn in_support(&self, theta: &ParamVector) -> bool {
        theta.t0 >= self.t0_range.0 && theta.t0 <= self.t0_range.1
    }
}

/// Log density of `K` values of one coordinate under the two-level model with
/// the country mean integrated out: the exact `K`-variate Gaussian with mean
/// `mu0` and covariance `sigma1^2 I + sigma0^2 J`.
pub fn hier_coord_logpdf(values: &[f64], mu0: f64, sigma0: f64, sigma1: f64) -> f64 {
    let k = values.len() as f64;
    let v1 = sigma1 * sigma1;
    let v0 = sigma0 * sigma0;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for &x in values {
        let d = x - mu0;
        sum += d;
        sumsq += d * d;
    }
    let denom = v1 + k * v0;
    let quad = (sumsq - v0 * sum * sum / denom) / v1;
    // det = v1^(K-1) (v1 + K v0)
    let logdet = (k - 1.0) * v1.ln() + denom.ln();
    -0.5 * (quad + logdet) - k * LN_SQRT_2PI
}

/// Joint hierarchical log prior of `K` areas' parameters.
pub fn hier_logprior(thetas: &[ParamVector], cfg: &HierPriorConfig) -> Result<f64> {
    if thetas.is_empty() {
        return Err(Error::Argument("hierarchical prior needs at least one area".into()));
    }
    if !thetas.iter().all(|t| cfg.in_support(t)) {
        return Ok(f64::NEG_INFINITY);
    }
    let arrays: Vec<[f64; N_PARAMS]> = thetas.iter().map(|t| t.to_array()).collect();
    let mut column = vec![0.0; thetas.len()];
    let mut lp = 0.0;
    for j in 0..N_PARAMS {
        for (c, a) in column.iter_mut().zip(arrays.iter()) {
            *c = a[j];
        }
        lp += hier_coord_logpdf(&column, cfg.mu0[j], cfg.sigma0[j], cfg.sigma1[j]);
    }
    Ok(lp)
}

/// `log pi_HR(theta_1..K) - sum_i log pi(theta_i)`.
///
/// Both densities use the Gaussianized `t0` marginal, so the ratio is one
/// at `K = 1` and tends to a constant as `lambda` grows; the uniform `t0`
/// support is still enforced.
pub fn log_prior_ratio(thetas: &[&[f64]], cfg: &HierPriorConfig) -> f64 {
    let k = thetas.len();
    if k == 0 {
        return 0.0;
    }
    let (lo, hi) = cfg.t0_range;
    if thetas
        .iter()
        .any(|t| !(t[ParamVector::T0] >= lo && t[ParamVector::T0] <= hi))
    {
        return f64::NEG_INFINITY;
    }
    if k == 1 {
        return 0.0;
    }
    gaussian_coord_ratio(thetas, &cfg.mu0, &cfg.sigma0, &cfg.sigma1)
}

/// Prior ratio summed over coordinates for arbitrary-dimension Gaussian
/// hierarchies.
pub fn gaussian_coord_ratio(
    thetas: &[&[f64]],
    mu0: &[f64],
    sigma0: &[f64],
    sigma1: &[f64],
) -> f64 {
    let mut column = vec![0.0; thetas.len()];
    let mut out = 0.0;
    for j in 0..mu0.len() {
        for (c, t) in column.iter_mut().zip(thetas.iter()) {
            *c = t[j];
        }
        let sd = sigma0[j].hypot(sigma1[j]);
        let indep: f64 = column
            .iter()
            .map(|&x| normal::log_density(x, mu0[j], sd))
            .sum();
        out += hier_coord_logpdf(&column, mu0[j], sigma0[j], sigma1[j]) - indep;
    }
    out
}

/// Variance components of one parameter across country groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub between: f64,
    pub within: f64,
}

/// One-way random-effects ANOVA (method of moments). Unbalanced groups use
/// the usual effective group size `n0 = (N - sum n_g^2 / N) / (G - 1)`.
/// The between-group variance may come out negative.
pub fn variance_components(groups: &[Vec<f64>]) -> Result<VarianceComponents> {
    let g = groups.len();
    if g < 2 || groups.iter().any(|grp| grp.len() < 2) {
        return Err(Error::Argument(
            "need at least two groups with at least two members each".into(),
        ));
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n_total as f64;
    let mut ss_within = 0.0;
    let mut ss_between = 0.0;
    for grp in groups {
        let m = grp.iter().sum::<f64>() / grp.len() as f64;
        // pairwise form: exactly zero for identical members
        let mut pairs = 0.0;
        for (a, x) in grp.iter().enumerate() {
            for y in &grp[a + 1..] {
                pairs += (x - y) * (x - y);
            }
        }
        ss_within += pairs / grp.len() as f64;
        ss_between += grp.len() as f64 * (m - grand) * (m - grand);
    }
    let ms_within = ss_within / (n_total - g) as f64;
    let ms_between = ss_between / (g - 1) as f64;
    let n0 = (n_total as f64
        - groups.iter().map(|grp| (grp.len() * grp.len()) as f64).sum::<f64>() / n_total as f64)
        / (g - 1) as f64;
    Ok(VarianceComponents {
        between: (ms_between - ms_within) / n0,
        within: ms_within,
    })
}

/// `lambda = sigma_within^2 / sigma_between^2`; `+inf` when the between SD is
/// not positive.
pub fn lambda_from_sds(sigma_between: f64, sigma_within: f64) -> f64 {
    if sigma_between > 0.0 {
        (sigma_within / sigma_between).powi(2)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    pub lambda: [f64; N_PARAMS],
    pub sigma_between: [f64; N_PARAMS],
    pub sigma_within: [f64; N_PARAMS],
}

/// Empirical-Bayes `lambda` from per-area posterior medians grouped by
/// country.
pub fn empirical_lambda(medians_by_country: &[Vec<ParamVector>]) -> Result<LambdaEstimate> {
    let mut est = LambdaEstimate {
        lambda: [0.0; N_PARAMS],
        sigma_between: [0.0; N_PARAMS],
        sigma_within: [0.0; N_PARAMS],
    };
    for j in 0..N_PARAMS {
        let groups: Vec<Vec<f64>> = medians_by_country
            .iter()
            .map(|c| c.iter().map(|p| p.to_array()[j]).collect())
            .collect();
        let vc = variance_components(&groups)?;
        if vc.between <= 0.0 {
            log::warn!(
                "between-country variance for {} is not positive ({}); lambda set to +inf",
                PARAM_NAMES[j],
                vc.between
            );
        }
        est.sigma_between[j] = vc.between.max(0.0).sqrt();
        est.sigma_within[j] = vc.within.sqrt();
        est.lambda[j] = lambda_from_sds(est.sigma_between[j], est.sigma_within[j]);
    }
    Ok(est)
}
