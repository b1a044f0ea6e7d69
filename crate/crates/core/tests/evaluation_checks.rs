//! Synthetic data generator self-checks and truncation invariants.

use proptest::prelude::*;

use epphier::data::{data_years, AncObservation, Demography, NpbsObservation, ParamVector};
use epphier::dynamics::{project, DynamicsConfig};
use epphier::evaluation::{block_sizes, expected_loglik, simulate_dataset, truncate, SimConfig};
use epphier::likelihood::ModelConfig;
use epphier::normal;
use epphier::priors::IndependentPrior;
use epphier::AreaDataset;

fn demog() -> Demography {
    Demography::balanced(1970, 2015, 1e6, 0.02, 2e4).unwrap()
}

fn truth(beta4: f64) -> ParamVector {
    ParamVector {
        t0: 1978.0,
        beta4,
        ..IndependentPrior::default().mean()
    }
}

#[test]
fn large_samples_recover_prevalence() {
    let p = truth(0.0);
    let years: Vec<i32> = (1982..=2010).collect();
    let cfg = SimConfig {
        sigma_site: 0.0,
        anc_sample_size: 100_000,
        ..Default::default()
    };
    let ds = simulate_dataset("a", &p, &demog(), 3, &years, 1, &cfg).unwrap();
    let traj = project(&p, &demog(), 1970, 2015, &DynamicsConfig::default()).unwrap();
    let worst = ds
        .anc
        .iter()
        .map(|o| (o.prevalence - traj.prevalence_at(o.year).unwrap()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.005, "max deviation {worst}");
}

#[test]
fn clinic_bias_shows_in_probit_residuals() {
    let p = truth(0.14);
    let years: Vec<i32> = (1984..=2004).step_by(2).collect();
    let ds = simulate_dataset("a", &p, &demog(), 50, &years, 1, &SimConfig::default()).unwrap();
    let traj = project(&p, &demog(), 1970, 2015, &DynamicsConfig::default()).unwrap();
    let res: Vec<f64> = ds
        .anc
        .iter()
        .map(|o| {
            let clipped = o.prevalence.clamp(0.5 / 300.0, 1.0 - 0.5 / 300.0);
            normal::quantile(clipped) - normal::quantile(traj.prevalence_at(o.year).unwrap())
        })
        .collect();
    let mean = res.iter().sum::<f64>() / res.len() as f64;
    assert!((mean - 0.14).abs() < 0.02, "mean residual {mean}");
}

#[test]
fn survey_standard_error_uses_smoothed_proportion() {
    let p = truth(0.1);
    let cfg = SimConfig {
        npbs_years: vec![1995, 2005],
        npbs_sample_size: 4000,
        ..Default::default()
    };
    let ds = simulate_dataset("a", &p, &demog(), 2, &[2000], 3, &cfg).unwrap();
    assert_eq!(ds.npbs.len(), 2);
    for o in &ds.npbs {
        let x = (o.prevalence * 4000.0).round();
        let s = (x + 0.5) / 4001.0;
        assert!((o.std_error - (s * (1.0 - s) / 4000.0).sqrt()).abs() < 1e-15);
    }
}

fn arb_dataset() -> impl Strategy<Value = AreaDataset> {
    let anc = prop::collection::vec((0usize..4, 1980i32..2010, 0.0f64..1.0, 1u32..500), 1..40);
    let npbs = prop::collection::vec((1980i32..2010, 0.0f64..1.0, 0.001f64..0.05), 0..4);
    (anc, npbs).prop_map(|(anc, npbs)| {
        let anc = anc
            .into_iter()
            .map(|(s, y, p, n)| AncObservation { site_id: format!("s{s}"), year: y, prevalence: p, sample_size: n })
            .collect();
        let npbs = npbs
            .into_iter()
            .map(|(y, p, se)| NpbsObservation { year: y, prevalence: p, std_error: se })
            .collect();
        AreaDataset::new("x", anc, npbs, demog()).unwrap()
    })
}

proptest! {
    #[test]
    fn truncation_keeps_only_middle_block(ds in arb_dataset()) {
        let years = data_years(&ds);
        match truncate(&ds) {
            Err(_) => prop_assert!(years.len() < 3),
            Ok(t) => {
                let [first, middle, _] = block_sizes(years.len());
                let block = &years[first..first + middle];
                prop_assert!(t.npbs.len() <= 1);
                prop_assert!(t.anc.iter().all(|o| block.contains(&o.year)));
                let expected = ds.anc.iter().filter(|o| block.contains(&o.year)).count();
                prop_assert_eq!(t.anc.len(), expected);
                if let Some(o) = t.npbs.first() {
                    prop_assert!(ds.npbs.iter().all(|n| n.year >= o.year));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn expected_loglik_ignores_sample_order(seed in 0u64..1000, rot in 0usize..7) {
        use rand::SeedableRng;
        let prior = IndependentPrior::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ds = simulate_dataset("a", &truth(0.1), &demog(), 2, &[1990, 1995, 2000], seed, &SimConfig::default()).unwrap();
        let mut samples: Vec<ParamVector> = (0..7).map(|_| prior.sample(&mut rng)).collect();
        let model = ModelConfig::default();
        let a = expected_loglik(&samples, &ds, &model).unwrap();
        samples.rotate_left(rot);
        samples.reverse();
        let b = expected_loglik(&samples, &ds, &model).unwrap();
        prop_assert_eq!(a.inadmissible_fraction, b.inadmissible_fraction);
        if a.mean.is_finite() {
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
        } else {
            prop_assert_eq!(a.mean, b.mean);
        }
    }
}
