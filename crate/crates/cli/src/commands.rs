use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use epphier::data::{AreaDataset, Demography, PARAM_NAMES};
use epphier::evaluation::{scenario_csv, scenario_table, simulate_dataset, ScenarioConfig};
use epphier::io::{
    correlation_csv, ensemble_csv, load_area, quantile_csv, read_ensemble, write_atomic,
};
use epphier::pooling::{
    combine, cross_area_correlation, pooled_trajectories, reweight, IndependentJoint, Output,
    PooledTrajectories,
};
use epphier::priors::{HierPriorConfig, IndependentPrior};
use epphier::sampler::{imis_fit, ImisConfig, WeightedEnsemble};

use crate::config::{AreaEntry, Loaded};

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn require_areas(loaded: &Loaded) -> Result<&[AreaEntry]> {
    if loaded.config.areas.is_empty() {
        bail!("config lists no [[area]] entries");
    }
    Ok(&loaded.config.areas)
}

fn load_dataset(loaded: &Loaded, area: &AreaEntry) -> Result<AreaDataset> {
    Ok(load_area(
        &area.id,
        &loaded.resolve(&area.anc),
        &loaded.resolve(&area.npbs),
        &loaded.resolve(&area.demography),
        area.initial_population,
    )?)
}

fn joint_draws_csv(ids: &[&str], pooled: &PooledTrajectories) -> String {
    let mut out = format!("draw,area,{}\n", PARAM_NAMES.join(","));
    for (d, row) in pooled.draws.iter().enumerate() {
        for (id, p) in ids.iter().zip(row) {
            let vals: Vec<String> = p.to_array().iter().map(f64::to_string).collect();
            out.push_str(&format!("{d},{id},{}\n", vals.join(",")));
        }
    }
    out
}

#[derive(Serialize)]
struct FitSummary<'a> {
    area: &'a str,
    seed: u64,
    draws_kept: usize,
    diagnostics: &'a epphier::sampler::ImisDiagnostics,
}

/// Writes `<id>_ensemble.csv`, `<id>_diagnostics.json` and
/// `<id>_quantiles.csv` for each area.
pub fn fit(loaded: &Loaded) -> Result<()> {
    let areas = require_areas(loaded)?;
    create_out_dir(&loaded.out_dir)?;
    let prior = IndependentPrior::default();
    let model = loaded.model();
    let pooling = &loaded.config.pooling;
    for (i, area) in areas.iter().enumerate() {
        let ds = load_dataset(loaded, area)?;
        let imis = ImisConfig {
            seed: mix(loaded.config.seed, i as u64),
            ..loaded.config.sampler
        };
        info!("fitting area {}", area.id);
        let ens = imis_fit(&ds, &prior, &model, &imis)?;
        let diag = ens.diagnostics.clone();

        let ens_path = loaded.ensemble_path(area);
        if let Some(parent) = ens_path.parent() {
            create_out_dir(parent)?;
        }
        write(&ens_path, &ensemble_csv(&ens)?)?;

        let refs = [&ens];
        let tuples = combine(&refs, pooling.candidates, mix(imis.seed, 1))?;
        let joint = reweight(tuples, &refs, &IndependentJoint)?;
        let pooled =
            pooled_trajectories(&joint, &refs, &[&ds], &model, pooling.draws, mix(imis.seed, 2))?;
        let dir = &loaded.out_dir;
        write(&dir.join(format!("{}_quantiles.csv", area.id)), &quantile_csv(&pooled.bands))?;
        write_json(
            &dir.join(format!("{}_diagnostics.json", area.id)),
            &FitSummary {
                area: &area.id,
                seed: imis.seed,
                draws_kept: ens.len(),
                diagnostics: &diag,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PoolSummary<'a> {
    areas: Vec<&'a str>,
    seed: u64,
    candidates: usize,
    lambda: [f64; 8],
    ess: f64,
    draws_requested: usize,
    draws_kept: usize,
}

/// Writes `joint_draws.csv`, `pooled_quantiles.csv`, `correlation.csv` and
/// `pool_summary.json`.
pub fn pool(loaded: &Loaded) -> Result<()> {
    let areas = require_areas(loaded)?;
    let pooling = &loaded.config.pooling;
    let model = loaded.model();
    let hier = HierPriorConfig::from_lambda(&IndependentPrior::default(), &pooling.lambda)
        .context("invalid lambda")?;

    let mut ensembles: Vec<WeightedEnsemble> = Vec::with_capacity(areas.len());
    let mut datasets = Vec::with_capacity(areas.len());
    for area in areas {
        let path = loaded.ensemble_path(area);
        let ens = read_ensemble(&path).with_context(|| {
            format!("cannot load ensemble for area {} from {}", area.id, path.display())
        })?;
        ensembles.push(ens);
        datasets.push(load_dataset(loaded, area)?);
    }
    create_out_dir(&loaded.out_dir)?;
    let refs: Vec<&WeightedEnsemble> = ensembles.iter().collect();
    let ds_refs: Vec<&AreaDataset> = datasets.iter().collect();
    let ids: Vec<&str> = areas.iter().map(|a| a.id.as_str()).collect();

    let seed = loaded.config.seed;
    info!("pooling {} areas from {} candidate tuples", refs.len(), pooling.candidates);
    let tuples = combine(&refs, pooling.candidates, mix(seed, 1 << 40))?;
    let joint = reweight(tuples, &refs, &hier)?;
    info!("joint effective sample size {:.1}", joint.ess);
    let pooled =
        pooled_trajectories(&joint, &refs, &ds_refs, &model, pooling.draws, mix(seed, 1 << 41))?;

    let dir = &loaded.out_dir;
    write(&dir.join("joint_draws.csv"), &joint_draws_csv(&ids, &pooled))?;
    write(&dir.join("pooled_quantiles.csv"), &quantile_csv(&pooled.bands))?;

    let mut blocks = Vec::new();
    for &year in &pooling.correlation_years {
        for output in [Output::Prevalence, Output::Incidence] {
            let m = cross_area_correlation(&joint, &refs, &ds_refs, &model, output, year)?;
            blocks.push((output, year, m));
        }
    }
    let names: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    write(&dir.join("correlation.csv"), &correlation_csv(&names, &blocks))?;
    write_json(
        &dir.join("pool_summary.json"),
        &PoolSummary {
            areas: ids,
            seed,
            candidates: pooling.candidates,
            lambda: pooling.lambda,
            ess: joint.ess,
            draws_requested: pooling.draws,
            draws_kept: pooled.draws.len(),
        },
    )
}

/// Writes `scenario_table.csv` and `scenario_rows.json`.
pub fn evaluate(loaded: &Loaded) -> Result<()> {
    let areas = require_areas(loaded)?;
    if areas.len() < 2 {
        bail!("evaluate needs at least two [[area]] entries, found {}", areas.len());
    }
    let datasets: Vec<AreaDataset> =
        areas.iter().map(|a| load_dataset(loaded, a)).collect::<Result<_>>()?;
    let prior = IndependentPrior::default();
    let hier = HierPriorConfig::from_lambda(&prior, &loaded.config.pooling.lambda)
        .context("invalid lambda")?;
    let cfg = ScenarioConfig {
        prior,
        model: loaded.model(),
        imis: loaded.config.sampler,
        candidates: loaded.config.evaluate.candidates,
        draws: loaded.config.evaluate.draws,
        seed: loaded.config.seed,
    };
    create_out_dir(&loaded.out_dir)?;
    let rows = scenario_table(&datasets, &hier, &cfg)?;
    write(&loaded.out_dir.join("scenario_table.csv"), &scenario_csv(&rows))?;
    write_json(&loaded.out_dir.join("scenario_rows.json"), &rows)
}

/// Writes `<id>_anc.csv`, `<id>_npbs.csv` and `<id>_demography.csv` for each
/// simulated area.
pub fn simulate(loaded: &Loaded) -> Result<()> {
    let Some(sim) = &loaded.config.simulate else {
        bail!("config has no [simulate] section");
    };
    if sim.areas.is_empty() {
        bail!("[simulate] lists no areas");
    }
    if sim.last_year < sim.first_year {
        bail!("[simulate] last_year {} precedes first_year {}", sim.last_year, sim.first_year);
    }
    let d = &sim.demography;
    let demog = Demography::balanced(d.year_start, d.year_end, d.initial_population, d.mu, d.a50)?;
    let years: Vec<i32> = (sim.first_year..=sim.last_year).collect();
    create_out_dir(&loaded.out_dir)?;
    for (i, id) in sim.areas.iter().enumerate() {
        let seed = mix(loaded.config.seed, (1 << 50) + i as u64);
        let ds = simulate_dataset(id, &sim.truth, &demog, sim.sites, &years, seed, &sim.observation)?;
        let dir = &loaded.out_dir;
        write(&dir.join(format!("{id}_anc.csv")), &ds.anc_csv())?;
        write(&dir.join(format!("{id}_npbs.csv")), &ds.npbs_csv())?;
        write(&dir.join(format!("{id}_demography.csv")), &demog.to_csv())?;
    }
    Ok(())
}
