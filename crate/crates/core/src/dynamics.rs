//! Simplified EPP compartment model driven by the r-trend infection-rate
//! recursion.
//!
//! The susceptible (`Z`) and infected (`Y`) 15-49 populations are integrated
//! with a fixed sub-year step. The infection rate `r` is held constant within
//! each calendar year and updated on year boundaries from the yearly
//! prevalence series.

use serde::{Deserialize, Serialize};

use crate::data::{Demography, DemographyRow, ParamVector};
use crate::error::{Error, Result};

/// Fixed-step scheme used for the compartment ODEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Sub-year step in years; must divide one year into a whole number of
    /// steps.
    pub dt: f64,
    /// Fraction of the population moved from `Z` to `Y` at `t0`.
    pub seed_fraction: f64,
    /// Constant per-capita HIV mortality among the infected, per year.
    pub hiv_death_rate: f64,
    pub integrator: Integrator,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            dt: 0.1,
            seed_fraction: 0.0025,
            hiv_death_rate: 0.1,
            integrator: Integrator::Rk4,
        }
    }
}

impl DynamicsConfig {
    fn steps_per_year(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::Argument(format!("dt must be in (0, 1], got {}", self.dt)));
        }
        let n = (1.0 / self.dt).round();
        if ((n * self.dt) - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "dt = {} does not divide one year evenly",
                self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Yearly model output, sampled at the start of each calendar year.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub years: Vec<i32>,
    pub susceptible: Vec<f64>,
    pub infected: Vec<f64>,
    pub population: Vec<f64>,
    pub prevalence: Vec<f64>,
    /// Infection rate in force during the year.
    pub infection_rate: Vec<f64>,
    pub incidence: Vec<f64>,
    pub hiv_deaths: Vec<f64>,
    /// Set when a compartment had to be clamped at zero; the likelihood
    /// treats such draws as inadmissible.
    pub clamped: bool,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Trajectory {
            years: Vec::with_capacity(n),
            susceptible: Vec::with_capacity(n),
            infected: Vec::with_capacity(n),
            population: Vec::with_capacity(n),
            prevalence: Vec::with_capacity(n),
            infection_rate: Vec::with_capacity(n),
            incidence: Vec::with_capacity(n),
            hiv_deaths: Vec::with_capacity(n),
            clamped: false,
        }
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn index_of(&self, year: i32) -> Option<usize> {
        let first = *self.years.first()?;
        let idx = year.checked_sub(first)?;
        (idx >= 0 && (idx as usize) < self.years.len()).then_some(idx as usize)
    }

    pub fn prevalence_at(&self, year: i32) -> Option<f64> {
        self.index_of(year).map(|i| self.prevalence[i])
    }

    pub fn incidence_at(&self, year: i32) -> Option<f64> {
        self.index_of(year).map(|i| self.incidence[i])
    }

    /// CSV with header `year,Z,Y,N,rho,r,incidence,hiv_deaths`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("year,Z,Y,N,rho,r,incidence,hiv_deaths\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.years[i],
                self.susceptible[i],
                self.infected[i],
                self.population[i],
                self.prevalence[i],
                self.infection_rate[i],
                self.incidence[i],
                self.hiv_deaths[i]
            ));
        }
        out
    }
}

/// One year of the r-trend recursion:
/// `r(t+1) = r(t) exp(beta1 (beta0 - r(t)) - beta2 rho(t) + beta3 gamma(t))`.
pub fn rtrend_step(r_t: f64, rho_t: f64, gamma_t: f64, params: &ParamVector) -> Result<f64> {
    let exponent =
        params.beta1 * (params.beta0 - r_t) - params.beta2 * rho_t + params.beta3 * gamma_t;
    let next = r_t * exponent.exp();
    if next.is_finite() && next > 0.0 {
        Ok(next)
    } else {
        Err(Error::Overflow {
            params: params.to_string(),
        })
    }
}

/// Stabilization driver for calendar year `year`:
/// `(rho(t+1) - rho(t)) (t - (t0 + t1))^+ / rho(t)`.
///
/// The positive part is measured from `t0 + t1`, i.e. `t1` years after the
/// epidemic starts. Zero when `rho(t)` is zero.
pub fn gamma_term(year: f64, rho_t: f64, rho_next: f64, params: &ParamVector) -> f64 {
    let lag = year - (params.t0 + params.t1);
    if lag <= 0.0 || rho_t <= 0.0 {
        return 0.0;
    }
    (rho_next - rho_t) * lag / rho_t
}

#[derive(Clone, Copy)]
struct Rates<'a> {
    demog: &'a DemographyRow,
    r: f64,
    alpha: f64,
}

fn derivs(z: f64, y: f64, k: Rates<'_>) -> (f64, f64) {
    let n = z + y;
    if n <= 0.0 {
        return (k.demog.entrants, 0.0);
    }
    let inc = k.r * y * z / n;
    let flow = (k.demog.migration - k.demog.a50) / n;
    let dz = k.demog.entrants - inc - k.demog.mu * z + flow * z;
    let dy = inc - k.alpha * y + flow * y;
    (dz, dy)
}

fn advance(z: f64, y: f64, h: f64, k: Rates<'_>, scheme: Integrator) -> (f64, f64) {
    match scheme {
        Integrator::Euler => {
            let (dz, dy) = derivs(z, y, k);
            (z + h * dz, y + h * dy)
        }
        Integrator::Rk4 => {
            let (a1, b1) = derivs(z, y, k);
            let (a2, b2) = derivs(z + 0.5 * h * a1, y + 0.5 * h * b1, k);
            let (a3, b3) = derivs(z + 0.5 * h * a2, y + 0.5 * h * b2, k);
            let (a4, b4) = derivs(z + h * a3, y + h * b3, k);
            (
                z + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
                y + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
            )
        }
    }
}

/// Forward-simulates one area over `[year_start, year_end]`, recording the
/// state at the start of every calendar year.
pub fn project(
    params: &ParamVector,
    demog: &Demography,
    year_start: i32,
    year_end: i32,
    cfg: &DynamicsConfig,
) -> Result<Trajectory> {
    if year_end < year_start {
        return Err(Error::Argument(format!(
            "empty year range [{year_start}, {year_end}]"
        )));
    }
    if !demog.covers(year_start) || !demog.covers(year_end) {
        return Err(Error::Argument(format!(
            "demography [{}, {}] does not cover [{year_start}, {year_end}]",
            demog.year_start(),
            demog.year_end()
        )));
    }
    if !params.is_finite() {
        return Err(Error::Argument(format!("non-finite parameters {params}")));
    }
    if params.t0 < year_start as f64 || params.t0 > year_end as f64 {
        return Err(Error::Argument(format!(
            "t0 = {} outside simulated years [{year_start}, {year_end}]",
            params.t0
        )));
    }
    let steps = cfg.steps_per_year()?;
    let h = 1.0 / steps as f64;

    let n_years = (year_end - year_start + 1) as usize;
    let mut traj = Trajectory::with_capacity(n_years);
    let mut z = demog.initial_population();
    let mut y = 0.0_f64;
    let mut seeded = false;
    let mut r = params.r0();
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Overflow {
            params: params.to_string(),
        });
    }

    for year in year_start..=year_end {
        let n = z + y;
        let rho = if n > 0.0 { y / n } else { 0.0 };
        traj.years.push(year);
        traj.susceptible.push(z);
        traj.infected.push(y);
        traj.population.push(n);
        traj.prevalence.push(rho);
        traj.infection_rate.push(r);
        traj.incidence.push(if n > 0.0 { r * y * z / n } else { 0.0 });
        traj.hiv_deaths.push(cfg.hiv_death_rate * y);
        if year == year_end {
            break;
        }

        let rates = Rates {
            demog: demog.at(year),
            r,
            alpha: cfg.hiv_death_rate,
        };
        for s in 0..steps {
            let t = year as f64 + s as f64 * h;
            let mut remaining = h;
            if !seeded && params.t0 < t + h && params.t0 >= t {
                let lead = params.t0 - t;
                if lead > 0.0 {
                    (z, y) = advance(z, y, lead, rates, cfg.integrator);
                }
                let seed = cfg.seed_fraction * (z + y);
                z -= seed;
                y += seed;
                seeded = true;
                remaining = h - lead;
            }
            if remaining > 0.0 {
                (z, y) = advance(z, y, remaining, rates, cfg.integrator);
            }
            if !(z.is_finite() && y.is_finite()) {
                traj.clamped = true;
                z = 0.0;
                y = 0.0;
            }
            if z < 0.0 {
                z = 0.0;
                traj.clamped = true;
            }
            if y < 0.0 {
                y = 0.0;
                traj.clamped = true;
            }
        }

        if seeded {
            let n_next = z + y;
            let rho_next = if n_next > 0.0 { y / n_next } else { 0.0 };
            let gamma = gamma_term(year as f64, rho, rho_next, params);
            r = rtrend_step(r, rho, gamma, params)?;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::IndependentPrior;

    fn prior_mean() -> ParamVector {
        IndependentPrior::default().mean()
    }

    #[test]
    fn rtrend_drivers_off_is_identity() {
        let mut p = prior_mean();
        p.beta1 = 0.0;
        p.beta2 = 0.0;
        p.beta3 = 0.0;
        for &r in &[0.01, 0.5, 3.0] {
            assert_eq!(rtrend_step(r, 0.2, 1.3, &p).unwrap(), r);
        }
    }

    #[test]
    fn rtrend_fixed_point() {
        let p = prior_mean();
        assert_eq!(rtrend_step(p.beta0, 0.0, 0.0, &p).unwrap(), p.beta0);
    }

    #[test]
    fn rtrend_hand_value() {
        let p = ParamVector {
            beta0: 0.46,
            beta1: 0.17,
            beta2: -0.68,
            beta3: -0.038,
            ..prior_mean()
        };
        // 0.17 * (0.46 - 0.5) = -0.0068; -(-0.68) * 0.1 = 0.068
        let expected = 0.5 * (-0.0068_f64 + 0.068).exp();
        let got = rtrend_step(0.5, 0.1, 0.0, &p).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn rtrend_overflow_is_error() {
        let p = ParamVector {
            beta1: -1e4,
            beta0: 0.0,
            ..prior_mean()
        };
        assert!(matches!(
            rtrend_step(1.0, 0.0, 0.0, &p),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn gamma_positive_part_is_exact_zero() {
        let p = ParamVector {
            t0: 1980.0,
            t1: 20.0,
            ..prior_mean()
        };
        assert_eq!(gamma_term(1999.0, 0.1, 0.2, &p), 0.0);
        assert_eq!(gamma_term(2000.0, 0.1, 0.2, &p), 0.0);
        assert!((gamma_term(2002.0, 0.1, 0.12, &p) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn no_seed_means_no_epidemic() {
        let demog = Demography::balanced(1970, 2015, 1e6, 0.02, 2e4).unwrap();
        let cfg = DynamicsConfig {
            seed_fraction: 0.0,
            ..Default::default()
        };
        let traj = project(&prior_mean(), &demog, 1970, 2015, &cfg).unwrap();
        assert!(traj.infected.iter().all(|&y| y == 0.0));
        assert!(traj.prevalence.iter().all(|&p| p == 0.0));
        for &n in &traj.population {
            assert!((n - 1e6).abs() < 1e-6, "{n}");
        }
    }

    #[test]
    fn zero_before_t0_and_bounded_after() {
        let demog = Demography::balanced(1970, 2015, 1e6, 0.02, 2e4).unwrap();
        let p = ParamVector {
            t0: 1983.4,
            ..prior_mean()
        };
        let traj = project(&p, &demog, 1970, 2015, &DynamicsConfig::default()).unwrap();
        for (i, &yr) in traj.years.iter().enumerate() {
            if (yr as f64) <= p.t0 {
                assert_eq!(traj.infected[i], 0.0);
                assert_eq!(traj.prevalence[i], 0.0);
            }
            assert!((0.0..=1.0).contains(&traj.prevalence[i]));
            assert!(traj.infection_rate[i] > 0.0);
        }
        assert!(traj.prevalence_at(2000).unwrap() > 0.0);
        assert!(!traj.clamped);
    }

    #[test]
    fn fixed_point_trajectory() {
        let demog = Demography::balanced(1970, 2015, 1e6, 0.02, 2e4).unwrap();
        let mut p = prior_mean();
        p.beta2 = 0.0;
        p.beta3 = 0.0;
        p.log_r0 = p.beta0.ln();
        let traj = project(&p, &demog, 1970, 2015, &DynamicsConfig::default()).unwrap();
        assert!(traj.infection_rate.iter().all(|&r| r == p.r0()));
    }

    #[test]
    fn rejects_bad_dt_and_ranges() {
        let demog = Demography::balanced(1970, 2015, 1e6, 0.02, 2e4).unwrap();
        let cfg = DynamicsConfig {
            dt: 0.3,
            ..Default::default()
        };
        assert!(project(&prior_mean(), &demog, 1970, 2015, &cfg).is_err());
        assert!(project(&prior_mean(), &demog, 1960, 2015, &DynamicsConfig::default()).is_err());
    }

    #[test]
    fn trajectory_csv_header() {
        let demog = Demography::balanced(1970, 1975, 1e6, 0.02, 2e4).unwrap();
        let p = ParamVector {
            t0: 1971.0,
            ..prior_mean()
        };
        let csv = project(&p, &demog, 1970, 1975, &DynamicsConfig::default())
            .unwrap()
            .to_csv();
        assert!(csv.starts_with("year,Z,Y,N,rho,r,incidence,hiv_deaths\n1970,"));
        assert_eq!(csv.lines().count(), 7);
    }
}
