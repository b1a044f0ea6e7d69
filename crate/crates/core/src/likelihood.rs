//! Probit-scale likelihood of clinic (ANC) and household-survey (NPBS)
//! prevalence given a model trajectory.
//!
//! Each clinic's series shares a normal site effect on the probit scale.
//! Integrating it out gives a compound-symmetric covariance
//! `diag(v_t + sigma_extra^2) + sigma_site^2 J`, whose log-density is
//! evaluated in closed form with the Sherman-Morrison identity.

use serde::{Deserialize, Serialize};

use crate::data::{AncObservation, AreaDataset, NpbsObservation, ParamVector};
use crate::dynamics::{project, DynamicsConfig, Trajectory};
use crate::error::{Error, Result};
use crate::normal::{self, LN_SQRT_2PI};

/// NPBS prevalences are clipped into `[EPS, 1 - EPS]` before the probit.
const NPBS_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub sigma_site: f64,
    pub sigma_extra: f64,
    /// Continuity correction added to positive and negative counts.
    pub continuity: f64,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            sigma_site: 0.15,
            sigma_extra: 0.05,
            continuity: 0.5,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_site > 0.0 && self.sigma_extra > 0.0) {
            return Err(Error::Argument(
                "likelihood standard deviations must be positive".into(),
            ));
        }
        if !(self.continuity >= 0.0) {
            return Err(Error::Argument("continuity correction must be >= 0".into()));
        }
        Ok(())
    }
}

/// Dynamics plus observation-model settings: everything needed to turn a
/// parameter vector into a log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dynamics: DynamicsConfig,
    pub likelihood: LikelihoodConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.likelihood.validate()?;
        let d = &self.dynamics;
        if !(d.dt > 0.0 && d.dt <= 1.0) || ((1.0 / d.dt).round() * d.dt - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "dt = {} must divide one year evenly",
                d.dt
            )));
        }
        if !(0.0..1.0).contains(&d.seed_fraction) || d.hiv_death_rate < 0.0 {
            return Err(Error::Argument("invalid seed fraction or death rate".into()));
        }
        Ok(())
    }
}

/// Observed prevalence on the probit scale with its delta-method variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitObs {
    pub w: f64,
    pub v: f64,
}

/// `p* = (p n + c) / (n + 2c)`, `w = probit(p*)`,
/// `v = p*(1 - p*) / (n phi(w)^2)`.
pub fn probit_transform(p: f64, n: u32, c: f64) -> ProbitObs {
    let n = n as f64;
    let ps = (p * n + c) / (n + 2.0 * c);
    let w = normal::quantile(ps);
    let dens = normal::pdf(w);
    ProbitObs {
        w,
        v: ps * (1.0 - ps) / (n * dens * dens),
    }
}

/// Log-density of residuals `d ~ N(0, diag(diag) + s^2 J)`.
pub fn compound_symmetric_logpdf(d: &[f64], diag: &[f64], sigma_site: f64) -> f64 {
    if d.iter().any(|x| !x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let s2 = sigma_site * sigma_site;
    let (mut quad, mut logdet, mut sum_inv, mut sum_d) = (0.0, 0.0, 0.0, 0.0);
    for (&di, &vi) in d.iter().zip(diag) {
        quad += di * di / vi;
        logdet += vi.ln();
        sum_inv += 1.0 / vi;
        sum_d += di / vi;
    }
    let denom = 1.0 + s2 * sum_inv;
    quad -= s2 * sum_d * sum_d / denom;
    logdet += denom.ln();
    -0.5 * (quad + logdet) - d.len() as f64 * LN_SQRT_2PI
}

fn model_probit(traj: &Trajectory, year: i32) -> Option<f64> {
    traj.prevalence_at(year).map(normal::quantile)
}

/// Clinic log-likelihood summed over sites, site effects integrated out.
pub fn anc_loglik(
    traj: &Trajectory,
    anc: &[AncObservation],
    beta4: f64,
    cfg: &LikelihoodConfig,
) -> f64 {
    if anc.is_empty() {
        return 0.0;
    }
    if traj.clamped {
        return f64::NEG_INFINITY;
    }
    let extra = cfg.sigma_extra * cfg.sigma_extra;
    let mut sites: Vec<&str> = anc.iter().map(|o| o.site_id.as_str()).collect();
    sites.sort_unstable();
    sites.dedup();

    let mut total = 0.0;
    let mut d = Vec::new();
    let mut diag = Vec::new();
    for site in sites {
        d.clear();
        diag.clear();
        for o in anc.iter().filter(|o| o.site_id == site) {
            let Some(mu) = model_probit(traj, o.year) else {
                return f64::NEG_INFINITY;
            };
            let obs = probit_transform(o.prevalence, o.sample_size, cfg.continuity);
            d.push(obs.w - mu - beta4);
            diag.push(obs.v + extra);
        }
        total += compound_symmetric_logpdf(&d, &diag, cfg.sigma_site);
    }
    total
}

/// Survey log-likelihood: independent normals on the probit scale with the
/// standard error carried over by the delta method.
pub fn npbs_loglik(traj: &Trajectory, npbs: &[NpbsObservation]) -> f64 {
    if npbs.is_empty() {
        return 0.0;
    }
    if traj.clamped {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for o in npbs {
        let Some(mu) = model_probit(traj, o.year) else {
            return f64::NEG_INFINITY;
        };
        if !mu.is_finite() {
            return f64::NEG_INFINITY;
        }
        let w = normal::quantile(o.prevalence.clamp(NPBS_CLIP, 1.0 - NPBS_CLIP));
        let se = o.std_error / normal::pdf(w);
        total += normal::log_density(w, mu, se);
    }
    total
}

/// Last year any observation needs; projections stop there.
fn last_needed_year(ds: &AreaDataset) -> i32 {
    ds.anc
        .iter()
        .map(|o| o.year)
        .chain(ds.npbs.iter().map(|o| o.year))
        .max()
        .unwrap_or(ds.demography.year_start())
        .max(ds.demography.year_start())
}

/// Projects `params` over the dataset's demography years up to `year_end`
/// (or the demography end when `None`).
pub fn project_area(
    params: &ParamVector,
    ds: &AreaDataset,
    year_end: Option<i32>,
    cfg: &DynamicsConfig,
) -> Result<Trajectory> {
    let demog = &ds.demography;
    project(
        params,
        demog,
        demog.year_start(),
        year_end.unwrap_or(demog.year_end()),
        cfg,
    )
}

/// Full-data log-likelihood of one parameter draw; `-inf` for inadmissible
/// draws (overflow, clamped compartments, `t0` outside simulated years).
pub fn total_loglik(params: &ParamVector, ds: &AreaDataset, model: &ModelConfig) -> f64 {
    if ds.anc.is_empty() && ds.npbs.is_empty() {
        return 0.0;
    }
    let end = last_needed_year(ds).max(params.t0.ceil() as i32);
    let end = end.min(ds.demography.year_end());
    match project_area(params, ds, Some(end), &model.dynamics) {
        Ok(traj) => {
            anc_loglik(&traj, &ds.anc, params.beta4, &model.likelihood)
                + npbs_loglik(&traj, &ds.npbs)
        }
        Err(e) => {
            log::debug!("inadmissible draw: {e}");
            f64::NEG_INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Demography;
    use crate::priors::IndependentPrior;

    fn traj() -> Trajectory {
        let demog = Demography::balanced(1970, 2015, 1e6, 0.02, 2e4).unwrap();
        let p = ParamVector {
            t0: 1982.0,
            ..IndependentPrior::default().mean()
        };
        project(&p, &demog, 1970, 2015, &DynamicsConfig::default()).unwrap()
    }

    fn anc(site: &str, year: i32, p: f64, n: u32) -> AncObservation {
        AncObservation {
            site_id: site.into(),
            year,
            prevalence: p,
            sample_size: n,
        }
    }

    #[test]
    fn probit_half_is_symmetric() {
        let n = 1_000_000;
        let o = probit_transform(0.5, n, 0.5);
        assert!(o.w.abs() < 1e-12);
        let phi0 = normal::pdf(0.0);
        let expected = 0.25 / n as f64 / (phi0 * phi0);
        assert!((o.v - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn probit_zero_count() {
        let o = probit_transform(0.0, 100, 0.5);
        let ps: f64 = 0.5 / 101.0;
        assert!((ps - 0.004_950_495_049_504_95).abs() < 1e-15);
        assert!((o.w - normal::quantile(ps)).abs() < 1e-15);
        assert!(o.w.is_finite() && o.v.is_finite());
    }

    #[test]
    fn empty_lists_are_zero() {
        let t = traj();
        assert_eq!(anc_loglik(&t, &[], 0.1, &LikelihoodConfig::default()), 0.0);
        assert_eq!(npbs_loglik(&t, &[]), 0.0);
    }

    #[test]
    fn single_obs_small_site_sd_is_univariate() {
        let t = traj();
        let cfg = LikelihoodConfig {
            sigma_site: 1e-9,
            ..Default::default()
        };
        let o = anc("a", 2000, 0.2, 400);
        let got = anc_loglik(&t, std::slice::from_ref(&o), 0.14, &cfg);
        let obs = probit_transform(0.2, 400, 0.5);
        let mu = normal::quantile(t.prevalence_at(2000).unwrap()) + 0.14;
        let expected = normal::log_density(obs.w, mu, (obs.v + 0.05f64.powi(2)).sqrt());
        assert!((got - expected).abs() < 1e-12, "{got} {expected}");
    }

    #[test]
    fn npbs_zero_residual_is_normalizing_constant() {
        let t = traj();
        let rho = t.prevalence_at(2005).unwrap();
        let o = NpbsObservation {
            year: 2005,
            prevalence: rho,
            std_error: 0.01,
        };
        let se_p = 0.01 / normal::pdf(normal::quantile(rho));
        let expected = -se_p.ln() - LN_SQRT_2PI;
        assert!((npbs_loglik(&t, &[o]) - expected).abs() < 1e-12);
    }

    #[test]
    fn clamped_trajectory_is_inadmissible() {
        let mut t = traj();
        t.clamped = true;
        let o = anc("a", 2000, 0.2, 400);
        assert_eq!(
            anc_loglik(&t, &[o], 0.0, &LikelihoodConfig::default()),
            f64::NEG_INFINITY
        );
        let s = NpbsObservation {
            year: 2000,
            prevalence: 0.1,
            std_error: 0.01,
        };
        assert_eq!(npbs_loglik(&t, &[s]), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_model_prevalence_gives_neg_inf_not_nan() {
        let t = traj();
        let o = anc("a", 1975, 0.1, 100);
        let ll = anc_loglik(&t, &[o], 0.0, &LikelihoodConfig::default());
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn config_validation() {
        assert!(LikelihoodConfig {
            sigma_site: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
