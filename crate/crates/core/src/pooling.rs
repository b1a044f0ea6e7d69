//! Hierarchical joint posterior across areas, built from independently fitted
//! ensembles by importance reweighting.
//!
//! Candidate tuples draw one stored sample per area, each with probability
//! equal to its independent-model weight. The product of area weights in the
//! joint importance weight then cancels against the proposal probability,
//! leaving only the prior ratio `pi_HR / pi`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{AreaDataset, ParamVector, N_PARAMS};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::likelihood::{project_area, ModelConfig};
use crate::par;
use crate::priors::{gaussian_coord_ratio, log_prior_ratio, HierPriorConfig};
use crate::sampler::{ess, normalize_log_weights, resample_indices, WeightedEnsemble};

const CHUNK: usize = 1 << 14;

/// ESS below which reweighting logs a warning.
pub const ESS_WARN: f64 = 500.0;

/// `log pi_HR(theta_1..K) - sum_i log pi(theta_i)` for one candidate tuple.
pub trait JointPrior: Sync {
    fn log_ratio(&self, thetas: &[&[f64]]) -> f64;
}

impl JointPrior for HierPriorConfig {
    fn log_ratio(&self, thetas: &[&[f64]]) -> f64 {
        log_prior_ratio(thetas, self)
    }
}

/// Ratio fixed at one: the joint posterior of the independent model.
pub struct IndependentJoint;

impl JointPrior for IndependentJoint {
    fn log_ratio(&self, _thetas: &[&[f64]]) -> f64 {
        0.0
    }
}

/// Unbounded Gaussian two-level hierarchy of any dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHierarchy {
    pub mu0: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
}

impl JointPrior for GaussianHierarchy {
    fn log_ratio(&self, thetas: &[&[f64]]) -> f64 {
        if thetas.len() < 2 {
            return 0.0;
        }
        gaussian_coord_ratio(thetas, &self.mu0, &self.sigma0, &self.sigma1)
    }
}

/// Candidate joint samples: `m` rows of `k` sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tuples {
    k: usize,
    idx: Vec<u32>,
}

impl Tuples {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.idx.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn row(&self, t: usize) -> &[u32] {
        &self.idx[t * self.k..(t + 1) * self.k]
    }
}

/// Draws `m` candidate tuples; area `i`'s index is drawn from that area's
/// weights. Chunks use independent ChaCha streams, so the result depends
/// only on `seed`.
pub fn combine(ensembles: &[&WeightedEnsemble], m: usize, seed: u64) -> Result<Tuples> {
    let k = ensembles.len();
    if k == 0 {
        return Err(Error::Argument("combine needs at least one ensemble".into()));
    }
    if m == 0 {
        return Err(Error::Argument("candidate count must be positive".into()));
    }
    if ensembles.iter().any(|e| e.is_empty()) {
        return Err(Error::Argument("every ensemble must be nonempty".into()));
    }
    let dists: Vec<WeightedIndex<f64>> = ensembles
        .iter()
        .map(|e| WeightedIndex::new(e.weights()).map_err(|_| Error::DegenerateWeights))
        .collect::<Result<_>>()?;
    let n_chunks = m.div_ceil(CHUNK);
    let chunks = par::map_range(n_chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let rows = CHUNK.min(m - c * CHUNK);
        let mut out = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            for d in &dists {
                out.push(d.sample(&mut rng) as u32);
            }
        }
        out
    });
    Ok(Tuples {
        k,
        idx: chunks.concat(),
    })
}

/// Reweighted joint ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEnsemble {
    pub tuples: Tuples,
    log_weights: Vec<f64>,
    pub ess: f64,
}

impl JointEnsemble {
    pub fn k(&self) -> usize {
        self.tuples.k()
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Weighted mean of one area's parameters.
    pub fn area_mean(&self, ensembles: &[&WeightedEnsemble], area: usize) -> Vec<f64> {
        let dim = ensembles[area].dim();
        let mut m = vec![0.0; dim];
        for (t, lw) in self.log_weights.iter().enumerate() {
            let w = lw.exp();
            let x = ensembles[area].sample(self.tuples.row(t)[area] as usize);
            for (mj, xj) in m.iter_mut().zip(x) {
                *mj += w * xj;
            }
        }
        m
    }

    /// Multinomial resample of tuple indices.
    pub fn resample(&self, n: usize, seed: u64) -> Result<Vec<usize>> {
        resample_indices(&self.weights(), n, seed)
    }
}

/// Importance weights of candidate tuples under the hierarchical prior.
pub fn reweight(
    tuples: Tuples,
    ensembles: &[&WeightedEnsemble],
    prior: &dyn JointPrior,
) -> Result<JointEnsemble> {
    if tuples.k() != ensembles.len() {
        return Err(Error::Argument(format!(
            "tuples have {} areas but {} ensembles were given",
            tuples.k(),
            ensembles.len()
        )));
    }
    let k = tuples.k();
    let raw = par::map_range(tuples.len(), |t| {
        let row = tuples.row(t);
        let thetas: Vec<&[f64]> = (0..k).map(|i| ensembles[i].sample(row[i] as usize)).collect();
        // sum_i log w_i + log ratio - log proposal; the first and last cancel
        prior.log_ratio(&thetas)
    });
    let log_weights = normalize_log_weights(&raw).ok_or(Error::DegenerateWeights)?;
    let w: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
    let ess = ess(&w);
    if ess < ESS_WARN {
        log::warn!("joint ensemble ESS is {ess:.1} (< {ESS_WARN}); consider more candidates");
    }
    Ok(JointEnsemble {
        tuples,
        log_weights,
        ess,
    })
}

/// Pointwise central 90% band and median of one area's prevalence.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaBand {
    pub area_id: String,
    pub years: Vec<i32>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
}

/// Resampled joint draws projected through each area's model.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledTrajectories {
    /// `draws[d][i]` is area `i`'s parameters in joint draw `d`.
    pub draws: Vec<Vec<ParamVector>>,
    /// `prevalence[i][d][y]`.
    pub prevalence: Vec<Vec<Vec<f64>>>,
    pub bands: Vec<AreaBand>,
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Projects the distinct samples of `area` named in `indices` over the full
/// demography range. Entries stay `None` for unused samples and for draws
/// whose projection fails (typically r-trend overflow past the data years).
fn project_unique(
    area: usize,
    indices: &[usize],
    ensembles: &[&WeightedEnsemble],
    datasets: &[&AreaDataset],
    model: &ModelConfig,
) -> Vec<Option<Trajectory>> {
    let mut uniq: Vec<usize> = indices.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let projected = par::map(&uniq, |&s| {
        project_area(&ensembles[area].params(s), datasets[area], None, &model.dynamics)
    });
    let mut out = vec![None; ensembles[area].len()];
    for (s, t) in uniq.into_iter().zip(projected) {
        match t {
            Ok(t) => out[s] = Some(t),
            Err(e) => log::debug!("area {}: sample {s} not projectable: {e}", datasets[area].area_id),
        }
    }
    out
}

/// Projections for every area over the given tuples, and the tuples whose
/// areas all projected.
fn project_tuples(
    joint: &JointEnsemble,
    tuples: &[usize],
    ensembles: &[&WeightedEnsemble],
    datasets: &[&AreaDataset],
    model: &ModelConfig,
) -> Result<(Vec<Vec<Option<Trajectory>>>, Vec<usize>)> {
    let k = joint.k();
    let proj: Vec<Vec<Option<Trajectory>>> = (0..k)
        .map(|i| {
            let idx: Vec<usize> = tuples.iter().map(|&t| joint.tuples.row(t)[i] as usize).collect();
            project_unique(i, &idx, ensembles, datasets, model)
        })
        .collect();
    let kept: Vec<usize> = tuples
        .iter()
        .copied()
        .filter(|&t| {
            let row = joint.tuples.row(t);
            (0..k).all(|i| proj[i][row[i] as usize].is_some())
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::NoAdmissibleDraws);
    }
    if kept.len() < tuples.len() {
        log::warn!(
            "{} of {} joint draws could not be projected over the full demography range and were dropped",
            tuples.len() - kept.len(),
            tuples.len()
        );
    }
    Ok((proj, kept))
}

fn check_areas(joint: &JointEnsemble, ensembles: &[&WeightedEnsemble], datasets: &[&AreaDataset]) -> Result<()> {
    if ensembles.len() != joint.k() || datasets.len() != joint.k() {
        return Err(Error::Argument(
            "joint ensemble, ensembles and datasets disagree on the number of areas".into(),
        ));
    }
    if ensembles.iter().any(|e| e.dim() != N_PARAMS) {
        return Err(Error::Argument("trajectories need 8-parameter ensembles".into()));
    }
    Ok(())
}

/// Resamples `n_draws` joint tuples and projects every area over its full
/// demography range. Draws that cannot be projected are dropped.
pub fn pooled_trajectories(
    joint: &JointEnsemble,
    ensembles: &[&WeightedEnsemble],
    datasets: &[&AreaDataset],
    model: &ModelConfig,
    n_draws: usize,
    seed: u64,
) -> Result<PooledTrajectories> {
    check_areas(joint, ensembles, datasets)?;
    if n_draws == 0 {
        return Err(Error::Argument("n_draws must be positive".into()));
    }
    let picks = joint.resample(n_draws, seed)?;
    let (proj, kept) = project_tuples(joint, &picks, ensembles, datasets, model)?;
    let k = joint.k();
    let draws: Vec<Vec<ParamVector>> = kept
        .iter()
        .map(|&t| {
            let row = joint.tuples.row(t);
            (0..k).map(|i| ensembles[i].params(row[i] as usize)).collect()
        })
        .collect();

    let mut prevalence = Vec::with_capacity(k);
    let mut bands = Vec::with_capacity(k);
    for i in 0..k {
        let per_draw: Vec<Vec<f64>> = kept
            .iter()
            .map(|&t| {
                let s = joint.tuples.row(t)[i] as usize;
                proj[i][s].as_ref().expect("kept draws are projected").prevalence.clone()
            })
            .collect();
        let s0 = joint.tuples.row(kept[0])[i] as usize;
        let years = proj[i][s0].as_ref().expect("projected").years.clone();
        let mut band = AreaBand {
            area_id: datasets[i].area_id.clone(),
            years: years.clone(),
            q05: Vec::with_capacity(years.len()),
            q50: Vec::with_capacity(years.len()),
            q95: Vec::with_capacity(years.len()),
        };
        let mut col = vec![0.0; per_draw.len()];
        for y in 0..years.len() {
            for (c, d) in col.iter_mut().zip(&per_draw) {
                *c = d[y];
            }
            col.sort_by(f64::total_cmp);
            band.q05.push(quantile_sorted(&col, 0.05));
            band.q50.push(quantile_sorted(&col, 0.50));
            band.q95.push(quantile_sorted(&col, 0.95));
        }
        prevalence.push(per_draw);
        bands.push(band);
    }
    Ok(PooledTrajectories {
        draws,
        prevalence,
        bands,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    Prevalence,
    Incidence,
}

impl Output {
    pub fn name(self) -> &'static str {
        match self {
            Output::Prevalence => "prevalence",
            Output::Incidence => "incidence",
        }
    }
}

/// Weighted Pearson correlation of `x` and `y`; `None` when either has zero
/// variance.
pub fn weighted_correlation(x: &[f64], y: &[f64], w: &[f64]) -> Option<f64> {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for ((a, b), wi) in x.iter().zip(y).zip(w) {
        let (dx, dy) = (a - mx, b - my);
        sxy += wi * dx * dy;
        sxx += wi * dx * dx;
        syy += wi * dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `K x K` weighted correlation of an output at `year` across joint tuples.
/// Entries are `None` where an area's output has no variance. Tuples that
/// cannot be projected are left out.
pub fn cross_area_correlation(
    joint: &JointEnsemble,
    ensembles: &[&WeightedEnsemble],
    datasets: &[&AreaDataset],
    model: &ModelConfig,
    output: Output,
    year: i32,
) -> Result<Vec<Vec<Option<f64>>>> {
    check_areas(joint, ensembles, datasets)?;
    let k = joint.k();
    let w_all = joint.weights();
    let live: Vec<usize> = (0..joint.len()).filter(|&t| w_all[t] > 0.0).collect();
    let (proj, kept) = project_tuples(joint, &live, ensembles, datasets, model)?;
    let w: Vec<f64> = kept.iter().map(|&t| w_all[t]).collect();
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut v = Vec::with_capacity(kept.len());
        for &t in &kept {
            let s = joint.tuples.row(t)[i] as usize;
            let tr = proj[i][s].as_ref().expect("kept draws are projected");
            let val = match output {
                Output::Prevalence => tr.prevalence_at(year),
                Output::Incidence => tr.incidence_at(year),
            }
            .ok_or_else(|| {
                Error::Argument(format!(
                    "year {year} outside area {}'s projection",
                    datasets[i].area_id
                ))
            })?;
            v.push(val);
        }
        values.push(v);
    }
    let mut out = vec![vec![None; k]; k];
    for a in 0..k {
        let self_corr = weighted_correlation(&values[a], &values[a], &w);
        out[a][a] = self_corr.map(|_| 1.0);
        for b in (a + 1)..k {
            let r = weighted_correlation(&values[a], &values[b], &w);
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    Ok(out)
}
