//! Incremental mixture importance sampling (IMIS) for one area's posterior,
//! and multinomial resampling of weighted ensembles.
//!
//! Sampling starts from the prior. Each iteration places a Gaussian at the
//! current highest-weight draw, with covariance taken from its `B` nearest
//! neighbours (prior-standardized Euclidean distance) weighted by
//! `(w_i + 1/N) / 2`, and draws `B` new points from it. The sampling density
//! is the defensive mixture `(n0 prior + B sum_k N_k) / (n0 + kB)`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AreaDataset, ParamVector, N_PARAMS};
use crate::error::{Error, Result};
use crate::likelihood::{total_loglik, ModelConfig};
use crate::normal::LN_SQRT_2PI;
use crate::par;
use crate::priors::IndependentPrior;

/// A posterior the sampler can target: a prior it can draw from and a
/// log-likelihood. The epidemic model is one implementation; tests plug in
/// conjugate toys.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn log_prior(&self, x: &[f64]) -> f64;
    /// Per-coordinate prior scale, used for neighbour distances and for
    /// covariance regularization.
    fn prior_sd(&self) -> Vec<f64>;
    fn log_likelihood(&self, x: &[f64]) -> f64;
}

/// One area's r-trend posterior.
pub struct EpidemicTarget<'a> {
    pub dataset: &'a AreaDataset,
    pub prior: &'a IndependentPrior,
    pub model: &'a ModelConfig,
}

impl<'a> EpidemicTarget<'a> {
    pub fn new(
        dataset: &'a AreaDataset,
        prior: &'a IndependentPrior,
        model: &'a ModelConfig,
    ) -> Result<Self> {
        model.validate()?;
        let demog = &dataset.demography;
        if (demog.year_start() as f64) > prior.t0_range.0
            || (demog.year_end() as f64) < prior.t0_range.1
        {
            return Err(Error::Validation(format!(
                "area {}: demography [{}, {}] must cover the t0 prior range [{}, {}]",
                dataset.area_id,
                demog.year_start(),
                demog.year_end(),
                prior.t0_range.0,
                prior.t0_range.1
            )));
        }
        Ok(EpidemicTarget {
            dataset,
            prior,
            model,
        })
    }
}

impl Target for EpidemicTarget<'_> {
    fn dim(&self) -> usize {
        N_PARAMS
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.prior.sample(rng).to_array().to_vec()
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        self.prior.log_density(&ParamVector::from_slice(x))
    }

    fn prior_sd(&self) -> Vec<f64> {
        self.prior.gaussian_sd().to_vec()
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        total_loglik(&ParamVector::from_slice(x), self.dataset, self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImisConfig {
    pub n_initial: usize,
    /// Draws per added mixture component (`B`); also the neighbour count.
    pub n_per_iter: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Stop once the largest normalized weight falls below this.
    pub stop_max_weight: f64,
    /// Normalized weight below which draws are not stored.
    pub storage_threshold: f64,
}

impl Default for ImisConfig {
    fn default() -> Self {
        ImisConfig {
            n_initial: 10_000,
            n_per_iter: 1_000,
            max_iterations: 100,
            seed: 1,
            stop_max_weight: 0.05,
            storage_threshold: 1e-6,
        }
    }
}

impl ImisConfig {
    fn validate(&self) -> Result<()> {
        if self.n_initial == 0 || self.n_per_iter < 2 {
            return Err(Error::Argument(
                "n_initial must be positive and n_per_iter at least 2".into(),
            ));
        }
        if !(self.stop_max_weight > 0.0 && self.stop_max_weight <= 1.0) {
            return Err(Error::Argument("stop_max_weight must be in (0, 1]".into()));
        }
        if !(self.storage_threshold >= 0.0 && self.storage_threshold < 1.0) {
            return Err(Error::Argument("storage_threshold must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImisDiagnostics {
    /// Number of Gaussian components added.
    pub iterations: usize,
    pub total_draws: usize,
    pub stored_draws: usize,
    pub max_weight: f64,
    pub ess: f64,
    /// Expected fraction of distinct draws when resampling `total_draws`
    /// times from the final weights.
    pub expected_unique_fraction: f64,
    /// ESS before each iteration and after the last one.
    pub ess_history: Vec<f64>,
    pub max_weight_history: Vec<f64>,
}

/// Weighted posterior draws with everything pooling needs later.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    dim: usize,
    samples: Vec<f64>,
    log_weights: Vec<f64>,
    pub loglik: Vec<f64>,
    pub sampler_logdensity: Vec<f64>,
    pub diagnostics: ImisDiagnostics,
}

impl WeightedEnsemble {
    /// Builds an ensemble from raw parts, normalizing the log-weights.
    pub fn from_parts(
        dim: usize,
        samples: Vec<f64>,
        log_weights: Vec<f64>,
        loglik: Vec<f64>,
        sampler_logdensity: Vec<f64>,
        diagnostics: ImisDiagnostics,
    ) -> Result<Self> {
        let n = log_weights.len();
        if dim == 0 || samples.len() != n * dim || loglik.len() != n || sampler_logdensity.len() != n
        {
            return Err(Error::Validation("ensemble columns have inconsistent lengths".into()));
        }
        if n == 0 {
            return Err(Error::Validation("ensemble is empty".into()));
        }
        let log_weights = normalize_log_weights(&log_weights).ok_or(Error::DegenerateWeights)?;
        Ok(WeightedEnsemble {
            dim,
            samples,
            log_weights,
            loglik,
            sampler_logdensity,
            diagnostics,
        })
    }

    /// Equal-weight ensemble, e.g. from MCMC output.
    pub fn equal_weights(dim: usize, samples: Vec<f64>) -> Result<Self> {
        let n = samples.len() / dim.max(1);
        Self::from_parts(
            dim,
            samples,
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            ImisDiagnostics::default(),
        )
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// Panics unless the ensemble is 8-dimensional.
    pub fn params(&self, i: usize) -> ParamVector {
        ParamVector::from_slice(self.sample(i))
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights())
    }

    pub fn weighted_mean(&self) -> Vec<f64> {
        let w = self.weights();
        let mut m = vec![0.0; self.dim];
        for (i, wi) in w.iter().enumerate() {
            for (mj, x) in m.iter_mut().zip(self.sample(i)) {
                *mj += wi * x;
            }
        }
        m
    }

    /// Self-normalized importance estimate of `E[f]`.
    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * f(self.sample(i)))
            .sum()
    }
}

/// `1 / sum w_i^2` for normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Subtracts the log-sum-exp; `None` when every entry is `-inf` or any is
/// NaN. Input that is already normalized to within `1e-12` is returned as is,
/// so reading back a written ensemble is exact.
pub fn normalize_log_weights(lw: &[f64]) -> Option<Vec<f64>> {
    if lw.iter().any(|x| x.is_nan()) {
        return None;
    }
    let z = log_sum_exp(lw);
    if !z.is_finite() {
        return None;
    }
    if z.abs() < 1e-12 {
        return Some(lw.to_vec());
    }
    Some(lw.iter().map(|x| x - z).collect())
}

struct GaussianComponent {
    mean: Vec<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianComponent {
    fn new(mean: Vec<f64>, chol: DMatrix<f64>) -> Self {
        let d = mean.len();
        let log_norm = -(0..d).map(|i| chol[(i, i)].ln()).sum::<f64>() - d as f64 * LN_SQRT_2PI;
        GaussianComponent {
            mean,
            chol,
            log_norm,
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut z = vec![0.0; d];
        let mut sq = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.chol[(i, k)] * z[k];
            }
            z[i] = s / self.chol[(i, i)];
            sq += z[i] * z[i];
        }
        -0.5 * sq + self.log_norm
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.mean.len();
        let e = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
        let v = &self.chol * e;
        self.mean.iter().zip(v.iter()).map(|(m, x)| m + x).collect()
    }
}

/// Weighted covariance about `center`, Cholesky-factored with escalating
/// diagonal regularization if needed.
fn neighbour_covariance(
    center: &[f64],
    rows: &[&[f64]],
    weights: &[f64],
    prior_sd: &[f64],
) -> DMatrix<f64> {
    let d = center.len();
    let total: f64 = weights.iter().sum();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (x, w) in rows.iter().zip(weights) {
        let w = w / total;
        for a in 0..d {
            let da = x[a] - center[a];
            for b in 0..=a {
                cov[(a, b)] += w * da * (x[b] - center[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let mut eps = 1e-6;
    loop {
        log::warn!("singular neighbour covariance; adding {eps:e} x prior variance to the diagonal");
        let mut reg = cov.clone();
        for a in 0..d {
            reg[(a, a)] += eps * prior_sd[a] * prior_sd[a];
        }
        if let Some(ch) = reg.cholesky() {
            return ch.l();
        }
        eps *= 10.0;
    }
}

/// Runs IMIS on an arbitrary target.
pub fn imis<T: Target>(target: &T, cfg: &ImisConfig) -> Result<WeightedEnsemble> {
    cfg.validate()?;
    let dim = target.dim();
    let prior_sd = target.prior_sd();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut samples: Vec<f64> = Vec::with_capacity((cfg.n_initial + cfg.n_per_iter) * dim);
    for _ in 0..cfg.n_initial {
        samples.extend(target.sample_prior(&mut rng));
    }
    let evaluate = |chunk: &[f64]| -> Vec<(f64, f64)> {
        par::map_range(chunk.len() / dim, |i| {
            let x = &chunk[i * dim..(i + 1) * dim];
            let lp = target.log_prior(x);
            let ll = if lp.is_finite() {
                target.log_likelihood(x)
            } else {
                f64::NEG_INFINITY
            };
            (lp, ll)
        })
    };
    let (mut log_prior, mut loglik): (Vec<f64>, Vec<f64>) = evaluate(&samples).into_iter().unzip();
    // log sum_k N_k(x_i) over Gaussian components added so far
    let mut log_gauss = vec![f64::NEG_INFINITY; cfg.n_initial];
    let mut components: Vec<GaussianComponent> = Vec::new();
    let mut diag = ImisDiagnostics::default();

    let mut log_q: Vec<f64>;
    let mut log_w: Vec<f64>;
    loop {
        let n = log_prior.len();
        let k = components.len();
        let ln_prior_mass = (cfg.n_initial as f64 / n as f64).ln();
        let ln_comp_mass = (cfg.n_per_iter as f64 / n as f64).ln();
        log_q = (0..n)
            .map(|i| {
                if k == 0 {
                    log_prior[i]
                } else {
                    log_sum_exp(&[ln_prior_mass + log_prior[i], ln_comp_mass + log_gauss[i]])
                }
            })
            .collect();
        let raw: Vec<f64> = (0..n)
            .map(|i| {
                if log_prior[i] == f64::NEG_INFINITY || loglik[i] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    log_prior[i] + loglik[i] - log_q[i]
                }
            })
            .collect();
        log_w = normalize_log_weights(&raw).ok_or(Error::NoAdmissibleDraws)?;
        let (imax, lmax) = log_w
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        let w: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();
        diag.ess_history.push(ess(&w));
        diag.max_weight_history.push(lmax.exp());
        if lmax.exp() < cfg.stop_max_weight || k >= cfg.max_iterations {
            break;
        }

        // neighbours of the heaviest draw
        let center: Vec<f64> = samples[imax * dim..(imax + 1) * dim].to_vec();
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let x = &samples[i * dim..(i + 1) * dim];
                let d2 = x
                    .iter()
                    .zip(&center)
                    .zip(&prior_sd)
                    .map(|((a, b), s)| ((a - b) / s).powi(2))
                    .sum::<f64>();
                (d2, i)
            })
            .collect();
        let b = cfg.n_per_iter.min(n);
        if b < n {
            dist.select_nth_unstable_by(b - 1, |a, c| a.0.total_cmp(&c.0).then(a.1.cmp(&c.1)));
        }
        let neigh = &dist[..b];
        let rows: Vec<&[f64]> = neigh
            .iter()
            .map(|&(_, i)| &samples[i * dim..(i + 1) * dim])
            .collect();
        let nw: Vec<f64> = neigh
            .iter()
            .map(|&(_, i)| 0.5 * (w[i] + 1.0 / n as f64))
            .collect();
        let chol = neighbour_covariance(&center, &rows, &nw, &prior_sd);
        let comp = GaussianComponent::new(center, chol);

        let mut fresh: Vec<f64> = Vec::with_capacity(cfg.n_per_iter * dim);
        for _ in 0..cfg.n_per_iter {
            fresh.extend(comp.draw(&mut rng));
        }
        let (lp_new, ll_new): (Vec<f64>, Vec<f64>) = evaluate(&fresh).into_iter().unzip();

        // existing draws gain the new component
        par::for_each_mut(&mut log_gauss, |i, g| {
            let x = &samples[i * dim..(i + 1) * dim];
            *g = log_sum_exp(&[*g, comp.log_density(x)]);
        });
        components.push(comp);
        let comps = &components;
        let new_gauss = par::map_range(cfg.n_per_iter, |i| {
            let x = &fresh[i * dim..(i + 1) * dim];
            let lds: Vec<f64> = comps.iter().map(|c| c.log_density(x)).collect();
            log_sum_exp(&lds)
        });
        samples.extend_from_slice(&fresh);
        log_prior.extend(lp_new);
        loglik.extend(ll_new);
        log_gauss.extend(new_gauss);
        log::debug!(
            "imis iteration {}: max weight {:.4}, ess {:.1}",
            components.len(),
            lmax.exp(),
            diag.ess_history.last().copied().unwrap_or(0.0)
        );
    }

    let n = log_w.len();
    let w: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();
    diag.iterations = components.len();
    diag.total_draws = n;
    diag.max_weight = w.iter().copied().fold(0.0, f64::max);
    diag.ess = ess(&w);
    diag.expected_unique_fraction =
        w.iter().map(|wi| 1.0 - (1.0 - wi).powf(n as f64)).sum::<f64>() / n as f64;

    let keep: Vec<usize> = (0..n).filter(|&i| w[i] > cfg.storage_threshold).collect();
    diag.stored_draws = keep.len();
    let mut kept_samples = Vec::with_capacity(keep.len() * dim);
    for &i in &keep {
        kept_samples.extend_from_slice(&samples[i * dim..(i + 1) * dim]);
    }
    WeightedEnsemble::from_parts(
        dim,
        kept_samples,
        keep.iter().map(|&i| log_w[i]).collect(),
        keep.iter().map(|&i| loglik[i]).collect(),
        keep.iter().map(|&i| log_q[i]).collect(),
        diag,
    )
}

/// Fits one area's independent-model posterior.
pub fn imis_fit(
    ds: &AreaDataset,
    prior: &IndependentPrior,
    model: &ModelConfig,
    cfg: &ImisConfig,
) -> Result<WeightedEnsemble> {
    let target = EpidemicTarget::new(ds, prior, model).map_err(|e| e.in_area(&ds.area_id))?;
    imis(&target, cfg).map_err(|e| e.in_area(&ds.area_id))
}

/// Multinomial draw of `n` indices with probabilities `weights`.
pub fn resample_indices(weights: &[f64], n: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|_| Error::DegenerateWeights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Multinomial resample of an 8-dimensional ensemble.
pub fn resample(ens: &WeightedEnsemble, n: usize, seed: u64) -> Result<Vec<ParamVector>> {
    if n == 0 {
        return Err(Error::Argument("resample size must be at least 1".into()));
    }
    if ens.dim() != N_PARAMS {
        return Err(Error::Argument(format!(
            "expected {N_PARAMS}-dimensional ensemble, got {}",
            ens.dim()
        )));
    }
    Ok(resample_indices(&ens.weights(), n, seed)?
        .into_iter()
        .map(|i| ens.params(i))
        .collect())
}
