//! Truncation protocol, expected log-likelihood scoring and synthetic data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{data_years, AncObservation, AreaDataset, Demography, NpbsObservation, ParamVector};
use crate::dynamics::{project, DynamicsConfig};
use crate::error::{Error, Result};
use crate::likelihood::{total_loglik, ModelConfig};
use crate::normal;
use crate::par;
use crate::pooling::{combine, reweight, JointPrior};
use crate::priors::IndependentPrior;
use crate::sampler::{imis_fit, resample, ImisConfig, WeightedEnsemble};

/// Sizes of the three contiguous blocks of `n` data years: the first has
/// `ceil(n/3)`, the rest is split evenly with any extra year in the middle.
pub fn block_sizes(n: usize) -> [usize; 3] {
    let first = n.div_ceil(3);
    let rest = n - first;
    let last = rest / 2;
    [first, rest - last, last]
}

/// Keeps ANC rows whose year lies in the middle third of the data years and
/// only the earliest NPBS observation.
pub fn truncate(ds: &AreaDataset) -> Result<AreaDataset> {
    let years = data_years(ds);
    if years.len() < 3 {
        return Err(Error::Truncation(format!(
            "area {} has {} data years, need at least 3",
            ds.area_id,
            years.len()
        )));
    }
    let [first, middle, _] = block_sizes(years.len());
    let lo = years[first];
    let hi = years[first + middle - 1];
    let anc = ds
        .anc
        .iter()
        .filter(|o| (lo..=hi).contains(&o.year))
        .cloned()
        .collect();
    let mut npbs = Vec::new();
    if let Some(earliest) = ds.npbs.iter().map(|o| o.year).min() {
        npbs.extend(ds.npbs.iter().find(|o| o.year == earliest).cloned());
    }
    Ok(AreaDataset::new_unchecked(
        ds.area_id.clone(),
        anc,
        npbs,
        ds.demography.clone(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLoglik {
    /// Mean of the full-data log-likelihood over samples; `-inf` if any
    /// sample is inadmissible.
    pub mean: f64,
    pub inadmissible_fraction: f64,
}

pub fn expected_loglik(
    samples: &[ParamVector],
    ds: &AreaDataset,
    model: &ModelConfig,
) -> Result<ExpectedLoglik> {
    if samples.is_empty() {
        return Err(Error::Argument("expected_loglik needs at least one sample".into()));
    }
    let ll = par::map(samples, |p| total_loglik(p, ds, model));
    let bad = ll.iter().filter(|x| !x.is_finite()).count();
    let mean = if bad > 0 {
        f64::NEG_INFINITY
    } else {
        ll.iter().sum::<f64>() / ll.len() as f64
    };
    Ok(ExpectedLoglik {
        mean,
        inadmissible_fraction: bad as f64 / ll.len() as f64,
    })
}

/// Observation model used to generate synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sigma_site: f64,
    /// Extra per-observation probit noise; zero reproduces the plain
    /// site-effect model.
    pub sigma_extra: f64,
    pub anc_sample_size: u32,
    /// Survey years; empty means the last ANC year.
    pub npbs_years: Vec<i32>,
    /// Survey size; zero disables the survey.
    pub npbs_sample_size: u32,
    pub dynamics: DynamicsConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sigma_site: 0.15,
            sigma_extra: 0.0,
            anc_sample_size: 300,
            npbs_years: Vec::new(),
            npbs_sample_size: 5000,
            dynamics: DynamicsConfig::default(),
        }
    }
}

/// Generates ANC and NPBS observations from the trajectory of `truth`.
pub fn simulate_dataset(
    area_id: &str,
    truth: &ParamVector,
    demog: &Demography,
    site_count: usize,
    years: &[i32],
    seed: u64,
    cfg: &SimConfig,
) -> Result<AreaDataset> {
    if years.is_empty() {
        return Err(Error::Argument("simulate_dataset needs at least one year".into()));
    }
    let npbs_years: Vec<i32> = if cfg.npbs_sample_size == 0 {
        Vec::new()
    } else if cfg.npbs_years.is_empty() {
        vec![*years.iter().max().expect("nonempty")]
    } else {
        cfg.npbs_years.clone()
    };
    let last = years.iter().chain(&npbs_years).copied().max().expect("nonempty");
    let first = years.iter().chain(&npbs_years).copied().min().expect("nonempty");
    if !demog.covers(first) || !demog.covers(last) {
        return Err(Error::Argument(format!(
            "years {first}..{last} not covered by demography {}..{}",
            demog.year_start(),
            demog.year_end()
        )));
    }
    if !(cfg.sigma_site >= 0.0 && cfg.sigma_extra >= 0.0) || cfg.anc_sample_size == 0 {
        return Err(Error::Argument("invalid simulation settings".into()));
    }
    let end = last.max(truth.t0.ceil() as i32).min(demog.year_end());
    let traj = project(truth, demog, demog.year_start(), end, &cfg.dynamics)?;
    let rho = |y: i32| traj.prevalence_at(y).expect("year within projection");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let site_sd = Normal::new(0.0, cfg.sigma_site).map_err(|e| Error::Argument(e.to_string()))?;
    let extra_sd = Normal::new(0.0, cfg.sigma_extra).map_err(|e| Error::Argument(e.to_string()))?;
    let n = cfg.anc_sample_size;
    let mut anc = Vec::with_capacity(site_count * years.len());
    for s in 0..site_count {
        let b = site_sd.sample(&mut rng);
        let site_id = format!("site{:02}", s + 1);
        for &y in years {
            let eta = normal::quantile(rho(y)) + truth.beta4 + b + extra_sd.sample(&mut rng);
            let p = normal::cdf(eta);
            let x = draw_binomial(n, p, &mut rng)?;
            anc.push(AncObservation {
                site_id: site_id.clone(),
                year: y,
                prevalence: x as f64 / n as f64,
                sample_size: n,
            });
        }
    }
    let m = cfg.npbs_sample_size;
    let mut npbs = Vec::with_capacity(npbs_years.len());
    for &y in &npbs_years {
        let x = draw_binomial(m, rho(y), &mut rng)?;
        let smoothed = (x as f64 + 0.5) / (m as f64 + 1.0);
        npbs.push(NpbsObservation {
            year: y,
            prevalence: x as f64 / m as f64,
            std_error: (smoothed * (1.0 - smoothed) / m as f64).sqrt(),
        });
    }
    AreaDataset::new(area_id, anc, npbs, demog.clone())
}

fn draw_binomial(n: u32, p: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    let d = Binomial::new(n as u64, p.clamp(0.0, 1.0)).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(d.sample(rng))
}

/// The three expected log-likelihoods of one area for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    /// Full data scored with parameters fitted to full data.
    pub full_full: ExpectedLoglik,
    /// Full data scored with parameters fitted to truncated data.
    pub full_trunc: ExpectedLoglik,
    /// Truncated data scored with parameters fitted to truncated data.
    pub trunc_trunc: ExpectedLoglik,
}

/// Scores posterior samples from the full-data and truncated-data fits.
pub fn scenario_metrics(
    full: &AreaDataset,
    truncated: &AreaDataset,
    samples_full: &[ParamVector],
    samples_trunc: &[ParamVector],
    model: &ModelConfig,
) -> Result<ScenarioMetrics> {
    Ok(ScenarioMetrics {
        full_full: expected_loglik(samples_full, full, model)?,
        full_trunc: expected_loglik(samples_trunc, full, model)?,
        trunc_trunc: expected_loglik(samples_trunc, truncated, model)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub area: String,
    pub n_data_years: usize,
    pub n_anc_sites: usize,
    pub independent: ScenarioMetrics,
    pub hierarchical: ScenarioMetrics,
}

impl ScenarioRow {
    /// Hierarchical minus independent, per metric.
    pub fn differences(&self) -> [f64; 3] {
        let (h, i) = (&self.hierarchical, &self.independent);
        [
            h.full_full.mean - i.full_full.mean,
            h.full_trunc.mean - i.full_trunc.mean,
            h.trunc_trunc.mean - i.trunc_trunc.mean,
        ]
    }
}

/// Settings for one scenario run over a country.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub prior: IndependentPrior,
    pub model: ModelConfig,
    pub imis: ImisConfig,
    pub candidates: usize,
    /// Posterior draws used for each expected log-likelihood.
    pub draws: usize,
    pub seed: u64,
}

/// Fits every area independently on full and truncated data, pools with
/// `joint` under both scenarios and scores each area.
///
/// Scenario one pools all areas on full data. Scenario two, run once per
/// area, truncates that area and keeps the others on full data.
pub fn scenario_table(
    areas: &[AreaDataset],
    joint: &dyn JointPrior,
    cfg: &ScenarioConfig,
) -> Result<Vec<ScenarioRow>> {
    if areas.len() < 2 {
        return Err(Error::Argument("scenario table needs at least two areas".into()));
    }
    let truncated: Vec<AreaDataset> = areas
        .iter()
        .map(truncate)
        .collect::<Result<_>>()?;
    let fit = |ds: &AreaDataset, salt: u64| {
        let imis = ImisConfig {
            seed: mix(cfg.seed, salt),
            ..cfg.imis.clone()
        };
        imis_fit(ds, &cfg.prior, &cfg.model, &imis)
    };
    let k = areas.len();
    let mut full_fits = Vec::with_capacity(k);
    let mut trunc_fits = Vec::with_capacity(k);
    for (i, (ds, tr)) in areas.iter().zip(&truncated).enumerate() {
        full_fits.push(fit(ds, 2 * i as u64)?);
        trunc_fits.push(fit(tr, 2 * i as u64 + 1)?);
    }

    let draw_seed = mix(cfg.seed, 1 << 32);
    let pooled = |ens: &[&WeightedEnsemble], area: usize, salt: u64| -> Result<Vec<ParamVector>> {
        let tuples = combine(ens, cfg.candidates, mix(cfg.seed, salt))?;
        let j = reweight(tuples, ens, joint).map_err(|e| e.in_area(&areas[area].area_id))?;
        Ok(j.resample(cfg.draws, draw_seed)?
            .into_iter()
            .map(|t| ens[area].params(j.tuples.row(t)[area] as usize))
            .collect())
    };

    let all_full: Vec<&WeightedEnsemble> = full_fits.iter().collect();
    let scenario_one = combine(&all_full, cfg.candidates, mix(cfg.seed, 1 << 33))?;
    let scenario_one = reweight(scenario_one, &all_full, joint)?;
    let one_draws = scenario_one.resample(cfg.draws, draw_seed)?;

    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let indep_full = resample(&full_fits[i], cfg.draws, draw_seed)?;
        let indep_trunc = resample(&trunc_fits[i], cfg.draws, draw_seed)?;
        let hier_full: Vec<ParamVector> = one_draws
            .iter()
            .map(|&t| full_fits[i].params(scenario_one.tuples.row(t)[i] as usize))
            .collect();
        let mut mixed = all_full.clone();
        mixed[i] = &trunc_fits[i];
        let hier_trunc = pooled(&mixed, i, (1 << 34) + i as u64)?;

        let (ds, tr) = (&areas[i], &truncated[i]);
        rows.push(ScenarioRow {
            area: ds.area_id.clone(),
            n_data_years: data_years(ds).len(),
            n_anc_sites: ds.n_anc_sites(),
            independent: scenario_metrics(ds, tr, &indep_full, &indep_trunc, &cfg.model)?,
            hierarchical: scenario_metrics(ds, tr, &hier_full, &hier_trunc, &cfg.model)?,
        });
    }
    Ok(rows)
}

fn mix(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// CSV report with columns
/// `area,n_data_years,n_anc_sites,d_full_full,d_full_trunc,d_trunc_trunc`.
pub fn scenario_csv(rows: &[ScenarioRow]) -> String {
    let mut out = String::from("area,n_data_years,n_anc_sites,d_full_full,d_full_trunc,d_trunc_trunc\n");
    for r in rows {
        let d = r.differences();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.area, r.n_data_years, r.n_anc_sites, d[0], d[1], d[2]
        ));
    }
    out
}
