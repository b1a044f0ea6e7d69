//! Property tests for parsing, priors and dynamics.

use proptest::prelude::*;

use epphier::data::{data_years, parse_area_dataset, AncObservation, Demography, NpbsObservation, ParamVector};
use epphier::dynamics::{project, rtrend_step, DynamicsConfig, Integrator};
use epphier::io::{ensemble_csv, parse_ensemble_csv};
use epphier::priors::{hier_logprior, HierPriorConfig, IndependentPrior};
use epphier::sampler::{ImisDiagnostics, WeightedEnsemble};
use epphier::AreaDataset;

fn demog() -> Demography {
    Demography::balanced(1970, 2015, 1e6, 0.02, 2e4).unwrap()
}

fn arb_params() -> impl Strategy<Value = ParamVector> {
    (
        1970.0f64..1990.0,
        (5.0f64..35.0),
        (-0.3f64..1.1),
        (0.1f64..0.8),
        (0.0f64..0.4),
        (-1.4f64..0.0),
        (-0.07f64..0.0),
        (0.0f64..0.3),
    )
        .prop_map(|(t0, t1, log_r0, beta0, beta1, beta2, beta3, beta4)| ParamVector {
            t0,
            t1,
            log_r0,
            beta0,
            beta1,
            beta2,
            beta3,
            beta4,
        })
}

fn arb_rows() -> impl Strategy<Value = (Vec<AncObservation>, Vec<NpbsObservation>)> {
    let anc = prop::collection::vec(("[a-z]{1,6}", 1970i32..2015, 0.0f64..=1.0, 1u32..10_000), 1..30);
    let npbs = prop::collection::vec((1970i32..2015, 0.0f64..=1.0, 1e-4f64..0.2), 0..5);
    (anc, npbs).prop_map(|(a, n)| {
        (
            a.into_iter()
                .map(|(s, y, p, n)| AncObservation { site_id: s, year: y, prevalence: p, sample_size: n })
                .collect(),
            n.into_iter()
                .map(|(y, p, se)| NpbsObservation { year: y, prevalence: p, std_error: se })
                .collect(),
        )
    })
}

proptest! {
    #[test]
    fn dataset_csv_round_trip((anc, npbs) in arb_rows()) {
        let ds = AreaDataset::new("x", anc, npbs, demog()).unwrap();
        let back = parse_area_dataset(&ds.anc_csv(), &ds.npbs_csv(), &ds.demography.to_csv(), 1e6, "x").unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn data_years_sorted_distinct_union((anc, npbs) in arb_rows()) {
        let ds = AreaDataset::new("x", anc, npbs, demog()).unwrap();
        let ys = data_years(&ds);
        prop_assert!(ys.windows(2).all(|w| w[0] < w[1]));
        for o in &ds.anc { prop_assert!(ys.contains(&o.year)); }
        for o in &ds.npbs { prop_assert!(ys.contains(&o.year)); }
        prop_assert!(ys.iter().all(|y| ds.anc.iter().any(|o| o.year == *y) || ds.npbs.iter().any(|o| o.year == *y)));
    }

    #[test]
    fn hier_prior_is_permutation_invariant(a in arb_params(), b in arb_params(), c in arb_params()) {
        let cfg = HierPriorConfig::default();
        let x = hier_logprior(&[a, b, c], &cfg).unwrap();
        let y = hier_logprior(&[c, a, b], &cfg).unwrap();
        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }

    #[test]
    fn trajectories_stay_in_range(p in arb_params(), euler in any::<bool>()) {
        let cfg = DynamicsConfig {
            integrator: if euler { Integrator::Euler } else { Integrator::Rk4 },
            ..Default::default()
        };
        if let Ok(t) = project(&p, &demog(), 1970, 2015, &cfg) {
            for i in 0..t.len() {
                prop_assert!(t.susceptible[i] >= 0.0 && t.infected[i] >= 0.0);
                prop_assert!((0.0..=1.0).contains(&t.prevalence[i]));
                prop_assert!(t.infection_rate[i] > 0.0 && t.incidence[i] >= 0.0);
                prop_assert!((t.population[i] - t.susceptible[i] - t.infected[i]).abs() <= 1e-9 * t.population[i]);
                if (t.years[i] as f64) < p.t0 { prop_assert_eq!(t.infected[i], 0.0); }
            }
        }
    }

    #[test]
    fn rtrend_fixed_point(p in arb_params()) {
        let r = p.beta0;
        prop_assert_eq!(rtrend_step(r, 0.0, 0.0, &p).unwrap(), r);
    }

    #[test]
    fn ensemble_csv_round_trip(rows in prop::collection::vec((prop::array::uniform8(-1e3f64..1e3), -30.0f64..0.0, -1e4f64..0.0), 1..20)) {
        let n = rows.len();
        let samples: Vec<f64> = rows.iter().flat_map(|r| r.0).collect();
        let lw: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let ll: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let e = WeightedEnsemble::from_parts(8, samples, lw, ll, vec![0.5; n], ImisDiagnostics::default()).unwrap();
        let back = parse_ensemble_csv(&ensemble_csv(&e).unwrap(), "mem").unwrap();
        prop_assert_eq!(back.log_weights(), e.log_weights());
        prop_assert_eq!(&back.loglik, &e.loglik);
        for i in 0..n { prop_assert_eq!(back.sample(i), e.sample(i)); }
    }

    #[test]
    fn independent_prior_support(p in arb_params()) {
        let prior = IndependentPrior::default();
        prop_assert!(prior.log_density(&p).is_finite());
        let outside = ParamVector { t0: p.t0 - 25.0, ..p };
        prop_assert_eq!(prior.log_density(&outside), f64::NEG_INFINITY);
    }
}
