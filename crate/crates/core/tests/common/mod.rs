//! Test-only oracles shared by the integration suites. Nothing here calls the
//! code path it is used to check.
#![allow(dead_code)]

use epphier::data::{Demography, ParamVector};
use epphier::dynamics::DynamicsConfig;

/// Plain forward-Euler integration of the compartment model with
/// `steps_per_year` sub-steps, r-trend updates on year boundaries and the
/// seed pulse applied at exactly `t0`. Returns yearly prevalence.
pub fn reference_prevalence(
    p: &ParamVector,
    demog: &Demography,
    year_start: i32,
    year_end: i32,
    cfg: &DynamicsConfig,
    steps_per_year: usize,
) -> Vec<f64> {
    let h = 1.0 / steps_per_year as f64;
    let mut z = demog.initial_population();
    let mut y = 0.0;
    let mut r = p.log_r0.exp();
    let mut started = false;
    let mut out = Vec::new();
    for year in year_start..=year_end {
        let rho_year = y / (z + y);
        out.push(rho_year);
        if year == year_end {
            break;
        }
        let d = demog.at(year);
        let rhs = |z: f64, y: f64| {
            let n = z + y;
            let inc = r * y * z / n;
            (
                d.entrants - inc - d.mu * z - d.a50 * z / n + d.migration * z / n,
                inc - cfg.hiv_death_rate * y - d.a50 * y / n + d.migration * y / n,
            )
        };
        for s in 0..steps_per_year {
            let t = year as f64 + s as f64 * h;
            let mut step = h;
            if !started && p.t0 >= t && p.t0 < t + h {
                let lead = p.t0 - t;
                let (dz, dy) = rhs(z, y);
                z += lead * dz;
                y += lead * dy;
                let seed = cfg.seed_fraction * (z + y);
                z -= seed;
                y += seed;
                started = true;
                step = h - lead;
            }
            let (dz, dy) = rhs(z, y);
            z += step * dz;
            y += step * dy;
        }
        if started {
            let rho_next = y / (z + y);
            let lag = year as f64 - p.t0 - p.t1;
            let gamma = if lag > 0.0 && rho_year > 0.0 {
                (rho_next - rho_year) * lag / rho_year
            } else {
                0.0
            };
            r *= (p.beta1 * (p.beta0 - r) - p.beta2 * rho_year + p.beta3 * gamma).exp();
        }
    }
    out
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use epphier::sampler::Target;

fn log_norm(x: f64, m: f64, s: f64) -> f64 {
    let z = (x - m) / s;
    -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Independent normal prior on each coordinate; observations `x ~ N(theta,
/// noise_sd^2)` per coordinate.
pub struct ConjugateGaussian {
    pub prior_mean: Vec<f64>,
    pub prior_sd: Vec<f64>,
    pub data: Vec<Vec<f64>>,
    pub noise_sd: f64,
}

impl ConjugateGaussian {
    pub fn generated(prior_mean: Vec<f64>, prior_sd: Vec<f64>, truth: &[f64], n: usize, noise_sd: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = truth
            .iter()
            .map(|&t| {
                let d = Normal::new(t, noise_sd).unwrap();
                (0..n).map(|_| d.sample(&mut rng)).collect()
            })
            .collect();
        ConjugateGaussian { prior_mean, prior_sd, data, noise_sd }
    }

    /// Closed-form posterior `(mean, variance)` per coordinate.
    pub fn posterior(&self) -> Vec<(f64, f64)> {
        (0..self.prior_mean.len())
            .map(|j| {
                let n = self.data[j].len() as f64;
                let prec = 1.0 / self.prior_sd[j].powi(2) + n / self.noise_sd.powi(2);
                let sum: f64 = self.data[j].iter().sum();
                let mean = (self.prior_mean[j] / self.prior_sd[j].powi(2) + sum / self.noise_sd.powi(2)) / prec;
                (mean, 1.0 / prec)
            })
            .collect()
    }
}

impl Target for ConjugateGaussian {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.prior_mean
            .iter()
            .zip(&self.prior_sd)
            .map(|(&m, &s)| Normal::new(m, s).unwrap().sample(rng))
            .collect()
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.prior_mean.iter().zip(&self.prior_sd))
            .map(|(&v, (&m, &s))| log_norm(v, m, s))
            .sum()
    }
    fn prior_sd(&self) -> Vec<f64> {
        self.prior_sd.clone()
    }
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.data)
            .map(|(&t, obs)| obs.iter().map(|&o| log_norm(o, t, self.noise_sd)).sum::<f64>())
            .sum()
    }
}

/// `N(0, 3^2)` prior with a two-bump likelihood.
pub struct Bimodal;

impl Bimodal {
    pub const SPLIT: f64 = 0.25;

    pub fn density(x: f64) -> f64 {
        (log_norm(x, 0.0, 3.0)).exp() * Self::likelihood(x)
    }

    pub fn likelihood(x: f64) -> f64 {
        0.3 * log_norm(x, -2.0, 0.3).exp() + 0.7 * log_norm(x, 2.5, 0.4).exp()
    }
}

impl Target for Bimodal {
    fn dim(&self) -> usize {
        1
    }
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![Normal::new(0.0, 3.0).unwrap().sample(rng)]
    }
    fn log_prior(&self, x: &[f64]) -> f64 {
        log_norm(x[0], 0.0, 3.0)
    }
    fn prior_sd(&self) -> Vec<f64> {
        vec![3.0]
    }
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        Self::likelihood(x[0]).ln()
    }
}

/// Trapezoid rule on `[a, b]` with `n` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + i as f64 * h);
    }
    s * h
}

/// Upper tail of the chi-square distribution, for goodness-of-fit checks.
pub fn chi2_sf(stat: f64, dof: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}
