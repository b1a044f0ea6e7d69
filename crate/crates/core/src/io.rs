//! File formats: ensembles, diagnostics, quantile bands, correlations.
//! Every writer goes through a temp file and rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{parse_area_dataset, read_records, write_records, AreaDataset, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::pooling::{AreaBand, Output};
use crate::sampler::{ImisDiagnostics, WeightedEnsemble};

/// Writes `contents` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct EnsembleRow {
    t0: f64,
    t1: f64,
    log_r0: f64,
    beta0: f64,
    beta1: f64,
    beta2: f64,
    beta3: f64,
    beta4: f64,
    log_weight: f64,
    loglik: f64,
    sampler_logdensity: f64,
}

const ENSEMBLE_EXTRA: [&str; 3] = ["log_weight", "loglik", "sampler_logdensity"];

/// One row per stored draw: the eight parameters, the normalized
/// log-weight, the log-likelihood and the sampler log-density.
pub fn ensemble_csv(ens: &WeightedEnsemble) -> Result<String> {
    if ens.dim() != PARAM_NAMES.len() {
        return Err(Error::Argument(format!(
            "only 8-parameter ensembles can be written, got dimension {}",
            ens.dim()
        )));
    }
    let header: Vec<&str> = PARAM_NAMES.iter().chain(&ENSEMBLE_EXTRA).copied().collect();
    let rows = (0..ens.len()).map(|i| {
        let p = ens.params(i);
        EnsembleRow {
            t0: p.t0,
            t1: p.t1,
            log_r0: p.log_r0,
            beta0: p.beta0,
            beta1: p.beta1,
            beta2: p.beta2,
            beta3: p.beta3,
            beta4: p.beta4,
            log_weight: ens.log_weights()[i],
            loglik: ens.loglik[i],
            sampler_logdensity: ens.sampler_logdensity[i],
        }
    });
    Ok(write_records(rows, &header))
}

pub fn parse_ensemble_csv(text: &str, source_name: &str) -> Result<WeightedEnsemble> {
    let rows: Vec<EnsembleRow> = read_records(text, source_name)?;
    if rows.is_empty() {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            line: 1,
            message: "ensemble has no rows".into(),
        });
    }
    let mut samples = Vec::with_capacity(rows.len() * PARAM_NAMES.len());
    let (mut lw, mut ll, mut lq) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        samples.extend([r.t0, r.t1, r.log_r0, r.beta0, r.beta1, r.beta2, r.beta3, r.beta4]);
        lw.push(r.log_weight);
        ll.push(r.loglik);
        lq.push(r.sampler_logdensity);
    }
    WeightedEnsemble::from_parts(
        PARAM_NAMES.len(),
        samples,
        lw,
        ll,
        lq,
        ImisDiagnostics::default(),
    )
}

pub fn write_ensemble(path: &Path, ens: &WeightedEnsemble) -> Result<()> {
    write_atomic(path, ensemble_csv(ens)?.as_bytes())
}

pub fn read_ensemble(path: &Path) -> Result<WeightedEnsemble> {
    parse_ensemble_csv(&read_text(path)?, &path.display().to_string())
}

pub fn write_diagnostics(path: &Path, diag: &ImisDiagnostics) -> Result<()> {
    let mut s = serde_json::to_string_pretty(diag)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_diagnostics(path: &Path) -> Result<ImisDiagnostics> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

/// Reads one area's three CSV files.
pub fn load_area(
    area_id: &str,
    anc: &Path,
    npbs: &Path,
    demography: &Path,
    initial_population: f64,
) -> Result<AreaDataset> {
    let anc_text = read_text(anc)?;
    let npbs_text = read_text(npbs)?;
    let demog_text = read_text(demography)?;
    parse_area_dataset(&anc_text, &npbs_text, &demog_text, initial_population, area_id).map_err(
        |e| match e {
            Error::Parse {
                source_name,
                line,
                message,
            } => {
                let path = match source_name.as_str() {
                    "ANC csv" => anc,
                    "NPBS csv" => npbs,
                    _ => demography,
                };
                Error::Parse {
                    source_name: path.display().to_string(),
                    line,
                    message,
                }
            }
            other => other.in_area(area_id),
        },
    )
}

/// Tidy band CSV: `area,year,q05,q50,q95`.
pub fn quantile_csv(bands: &[AreaBand]) -> String {
    let mut out = String::from("area,year,q05,q50,q95\n");
    for b in bands {
        for (i, y) in b.years.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.area_id, y, b.q05[i], b.q50[i], b.q95[i]
            ));
        }
    }
    out
}

/// Tidy correlation CSV: `output,year,area_a,area_b,r`; `r` is empty where
/// undefined.
pub fn correlation_csv(
    areas: &[String],
    blocks: &[(Output, i32, Vec<Vec<Option<f64>>>)],
) -> String {
    let mut out = String::from("output,year,area_a,area_b,r\n");
    for (output, year, m) in blocks {
        for (a, row) in m.iter().enumerate() {
            for (b, r) in row.iter().enumerate() {
                let r = r.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    output.name(),
                    year,
                    areas[a],
                    areas[b],
                    r
                ));
            }
        }
    }
    out
}
