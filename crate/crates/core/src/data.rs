//! Surveillance and demography inputs for one geographic area, plus the
//! r-trend parameter vector.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of r-trend inputs per area.
pub const N_PARAMS: usize = 8;

/// Column names in canonical order, used by every file format.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "t0", "t1", "log_r0", "beta0", "beta1", "beta2", "beta3", "beta4",
];

/// The r-trend inputs for one area.
///
/// The ordering `(t0, t1, log_r0, beta0, beta1, beta2, beta3, beta4)` is
/// fixed; every vector and matrix operation in the crate uses it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Epidemic start year (continuous).
    pub t0: f64,
    /// Years after `t0` at which the stabilization term switches on.
    pub t1: f64,
    pub log_r0: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// ANC bias relative to household surveys, probit scale.
    pub beta4: f64,
}

impl ParamVector {
    pub const T0: usize = 0;
    pub const T1: usize = 1;
    pub const LOG_R0: usize = 2;
    pub const BETA0: usize = 3;
    pub const BETA1: usize = 4;
    pub const BETA2: usize = 5;
    pub const BETA3: usize = 6;
    pub const BETA4: usize = 7;

    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        ParamVector {
            t0: a[0],
            t1: a[1],
            log_r0: a[2],
            beta0: a[3],
            beta1: a[4],
            beta2: a[5],
            beta3: a[6],
            beta4: a[7],
        }
    }

    /// Panics if `s.len() != 8`.
    pub fn from_slice(s: &[f64]) -> Self {
        let a: [f64; N_PARAMS] = s.try_into().expect("parameter slice must have 8 entries");
        Self::from_array(a)
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.t0,
            self.t1,
            self.log_r0,
            self.beta0,
            self.beta1,
            self.beta2,
            self.beta3,
            self.beta4,
        ]
    }

    pub fn r0(&self) -> f64 {
        self.log_r0.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        write!(f, "(")?;
        for (i, (name, v)) in PARAM_NAMES.iter().zip(a.iter()).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}={v}")?;
        }
        write!(f, ")")
    }
}

/// Observed prevalence among women tested at one antenatal clinic in one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncObservation {
    #[serde(rename = "site")]
    pub site_id: String,
    pub year: i32,
    pub prevalence: f64,
    #[serde(rename = "n")]
    pub sample_size: u32,
}

/// A household-survey prevalence estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpbsObservation {
    pub year: i32,
    pub prevalence: f64,
    #[serde(rename = "se")]
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemographyRow {
    pub entrants: f64,
    pub mu: f64,
    pub a50: f64,
    pub migration: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct DemographyRecord {
    year: i32,
    entrants: f64,
    mu: f64,
    a50: f64,
    migration: f64,
}

/// Yearly demographic inputs for the 15-49 population over
/// `[year_start, year_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demography {
    year_start: i32,
    rows: Vec<DemographyRow>,
    initial_population: f64,
}

impl Demography {
    pub fn new(year_start: i32, rows: Vec<DemographyRow>, initial_population: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("demography table is empty".into()));
        }
        if !(initial_population.is_finite() && initial_population > 0.0) {
            return Err(Error::Validation(format!(
                "initial_population must be positive, got {initial_population}"
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            let year = year_start + i as i32;
            if ![r.entrants, r.mu, r.a50, r.migration].iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("demography {year}: non-finite rate")));
            }
            if r.mu < 0.0 {
                return Err(Error::Validation(format!("demography {year}: negative mortality")));
            }
        }
        Ok(Demography {
            year_start,
            rows,
            initial_population,
        })
    }

    /// Constant demography in which entrants exactly replace non-AIDS deaths
    /// and age-out, so that an epidemic-free population stays at
    /// `initial_population`.
    pub fn balanced(
        year_start: i32,
        year_end: i32,
        initial_population: f64,
        mu: f64,
        a50: f64,
    ) -> Result<Self> {
        if year_end < year_start {
            return Err(Error::Argument(format!(
                "empty year range [{year_start}, {year_end}]"
            )));
        }
        let row = DemographyRow {
            entrants: mu * initial_population + a50,
            mu,
            a50,
            migration: 0.0,
        };
        let n = (year_end - year_start + 1) as usize;
        Self::new(year_start, vec![row; n], initial_population)
    }

    pub fn year_start(&self) -> i32 {
        self.year_start
    }

    pub fn year_end(&self) -> i32 {
        self.year_start + self.rows.len() as i32 - 1
    }

    pub fn initial_population(&self) -> f64 {
        self.initial_population
    }

    pub fn covers(&self, year: i32) -> bool {
        (self.year_start..=self.year_end()).contains(&year)
    }

    /// Rates for the calendar year containing `year`, clamped to the table.
    pub fn at(&self, year: i32) -> &DemographyRow {
        let idx = (year - self.year_start).clamp(0, self.rows.len() as i32 - 1);
        &self.rows[idx as usize]
    }

    pub fn from_csv(text: &str, initial_population: f64) -> Result<Self> {
        let records: Vec<DemographyRecord> = read_records(text, "demography csv")?;
        if records.is_empty() {
            return Err(Error::Validation("demography table is empty".into()));
        }
        let year_start = records[0].year;
        for (i, r) in records.iter().enumerate() {
            if r.year != year_start + i as i32 {
                return Err(Error::Validation(format!(
                    "demography years must be consecutive; found {} after {}",
                    r.year,
                    year_start + i as i32 - 1
                )));
            }
        }
        let rows = records
            .iter()
            .map(|r| DemographyRow {
                entrants: r.entrants,
                mu: r.mu,
                a50: r.a50,
                migration: r.migration,
            })
            .collect();
        Self::new(year_start, rows, initial_population)
    }

    pub fn to_csv(&self) -> String {
        let records = self.rows.iter().enumerate().map(|(i, r)| DemographyRecord {
            year: self.year_start + i as i32,
            entrants: r.entrants,
            mu: r.mu,
            a50: r.a50,
            migration: r.migration,
        });
        write_records(records, &["year", "entrants", "mu", "a50", "migration"])
    }
}

/// Everything observed for one area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDataset {
    pub area_id: String,
    pub anc: Vec<AncObservation>,
    pub npbs: Vec<NpbsObservation>,
    pub demography: Demography,
}

impl AreaDataset {
    /// Validates and assembles a dataset.
    pub fn new(
        area_id: impl Into<String>,
        anc: Vec<AncObservation>,
        npbs: Vec<NpbsObservation>,
        demography: Demography,
    ) -> Result<Self> {
        let ds = AreaDataset {
            area_id: area_id.into(),
            anc,
            npbs,
            demography,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Like [`AreaDataset::new`] but allows zero observations; used for
    /// likelihood edge cases.
    pub fn new_unchecked(
        area_id: impl Into<String>,
        anc: Vec<AncObservation>,
        npbs: Vec<NpbsObservation>,
        demography: Demography,
    ) -> Self {
        AreaDataset {
            area_id: area_id.into(),
            anc,
            npbs,
            demography,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.anc.is_empty() && self.npbs.is_empty() {
            return Err(Error::Validation(format!(
                "area {}: dataset has no observations",
                self.area_id
            )));
        }
        let demog = &self.demography;
        for o in &self.anc {
            if !(0.0..=1.0).contains(&o.prevalence) {
                return Err(Error::Validation(format!(
                    "ANC {} {}: prevalence {} outside [0, 1]",
                    o.site_id, o.year, o.prevalence
                )));
            }
            if o.sample_size < 1 {
                return Err(Error::Validation(format!(
                    "ANC {} {}: sample size must be at least 1",
                    o.site_id, o.year
                )));
            }
            if !demog.covers(o.year) {
                return Err(Error::Validation(format!(
                    "ANC {} {}: year outside demography range [{}, {}]",
                    o.site_id,
                    o.year,
                    demog.year_start(),
                    demog.year_end()
                )));
            }
        }
        for o in &self.npbs {
            if !(0.0..=1.0).contains(&o.prevalence) {
                return Err(Error::Validation(format!(
                    "NPBS {}: prevalence {} outside [0, 1]",
                    o.year, o.prevalence
                )));
            }
            if !(o.std_error.is_finite() && o.std_error > 0.0) {
                return Err(Error::Validation(format!(
                    "NPBS {}: standard error must be positive",
                    o.year
                )));
            }
            if !demog.covers(o.year) {
                return Err(Error::Validation(format!(
                    "NPBS {}: year outside demography range [{}, {}]",
                    o.year,
                    demog.year_start(),
                    demog.year_end()
                )));
            }
        }
        Ok(())
    }

    /// Observations grouped by clinic, in first-appearance order of the
    /// site id.
    pub fn anc_sites(&self) -> Vec<(&str, Vec<&AncObservation>)> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&AncObservation>> = BTreeMap::new();
        for o in &self.anc {
            let e = groups.entry(o.site_id.as_str()).or_default();
            if e.is_empty() {
                order.push(o.site_id.as_str());
            }
            e.push(o);
        }
        order
            .into_iter()
            .map(|s| (s, groups.remove(s).unwrap_or_default()))
            .collect()
    }

    pub fn n_anc_sites(&self) -> usize {
        self.anc
            .iter()
            .map(|o| o.site_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn anc_csv(&self) -> String {
        write_records(self.anc.iter(), &["site", "year", "prevalence", "n"])
    }

    pub fn npbs_csv(&self) -> String {
        write_records(self.npbs.iter(), &["year", "prevalence", "se"])
    }
}

/// Parses the three per-area CSV inputs into a validated dataset.
pub fn parse_area_dataset(
    anc_csv: &str,
    npbs_csv: &str,
    demog_csv: &str,
    initial_population: f64,
    area_id: &str,
) -> Result<AreaDataset> {
    let anc: Vec<AncObservation> = read_records(anc_csv, "ANC csv")?;
    let npbs: Vec<NpbsObservation> = read_records(npbs_csv, "NPBS csv")?;
    let demography = Demography::from_csv(demog_csv, initial_population)?;
    AreaDataset::new(area_id, anc, npbs, demography)
}

/// Sorted, distinct years with at least one ANC or NPBS observation.
pub fn data_years(ds: &AreaDataset) -> Vec<i32> {
    ds.anc
        .iter()
        .map(|o| o.year)
        .chain(ds.npbs.iter().map(|o| o.year))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub(crate) fn read_records<T: serde::de::DeserializeOwned>(text: &str, source_name: &str) -> Result<Vec<T>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        match rec {
            Ok(r) => out.push(r),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(Error::Parse {
                    source_name: source_name.to_string(),
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub(crate) fn write_records<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> String {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    wtr.write_record(header).expect("write to memory");
    for r in rows {
        wtr.serialize(r).expect("write to memory");
    }
    String::from_utf8(wtr.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demog_csv() -> String {
        Demography::balanced(1970, 2015, 1e6, 0.01, 2e4).unwrap().to_csv()
    }

    #[test]
    fn one_anc_row() {
        let ds = parse_area_dataset(
            "site,year,prevalence,n\nsiteA,2001,0.05,300\n",
            "",
            &demog_csv(),
            1e6,
            "a",
        )
        .unwrap();
        assert_eq!(ds.anc.len(), 1);
        assert_eq!(ds.anc[0].prevalence, 0.05);
        assert_eq!(ds.anc[0].sample_size, 300);
        assert!(ds.npbs.is_empty());
    }

    #[test]
    fn prevalence_out_of_range() {
        let err = parse_area_dataset(
            "site,year,prevalence,n\nsiteA,2001,1.2,300\n",
            "",
            &demog_csv(),
            1e6,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn two_sites_three_years() {
        let anc = "site,year,prevalence,n\n\
                   a,2000,0.1,100\na,2001,0.1,100\na,2002,0.1,100\n\
                   b,2000,0.1,100\nb,2001,0.1,100\nb,2002,0.1,100\n";
        let ds = parse_area_dataset(anc, "year,prevalence,se\n", &demog_csv(), 1e6, "x").unwrap();
        assert_eq!(ds.anc.len(), 6);
        assert_eq!(ds.n_anc_sites(), 2);
        let sites = ds.anc_sites();
        assert_eq!(sites.len(), 2);
        assert!(sites.iter().all(|(_, obs)| obs.len() == 3));
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse_area_dataset(
            "site,year,prevalence,n\nsiteA,2001,0.05,300\nsiteA,notayear,0.05,300\n",
            "",
            &demog_csv(),
            1e6,
            "a",
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn year_outside_demography() {
        let err = parse_area_dataset(
            "",
            "year,prevalence,se\n2030,0.05,0.01\n",
            &demog_csv(),
            1e6,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn empty_dataset_rejected() {
        let err = parse_area_dataset(
            "site,year,prevalence,n\n",
            "year,prevalence,se\n",
            &demog_csv(),
            1e6,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn boundary_prevalences_kept() {
        let ds = parse_area_dataset(
            "site,year,prevalence,n\ns,1990,0,50\ns,1991,1,50\n",
            "",
            &demog_csv(),
            1e6,
            "a",
        )
        .unwrap();
        assert_eq!(ds.anc[0].prevalence, 0.0);
        assert_eq!(ds.anc[1].prevalence, 1.0);
    }

    #[test]
    fn data_years_union() {
        let ds = parse_area_dataset(
            "site,year,prevalence,n\ns,2000,0.1,50\ns,2002,0.1,50\n",
            "year,prevalence,se\n2002,0.05,0.01\n",
            &demog_csv(),
            1e6,
            "a",
        )
        .unwrap();
        assert_eq!(data_years(&ds), vec![2000, 2002]);

        let single = parse_area_dataset("", "year,prevalence,se\n2005,0.05,0.01\n", &demog_csv(), 1e6, "a")
            .unwrap();
        assert_eq!(data_years(&single), vec![2005]);

        let anc: String = std::iter::once("site,year,prevalence,n\n".to_string())
            .chain((2000..2009).map(|y| format!("s,{y},0.1,100\n")))
            .collect();
        let nine = parse_area_dataset(&anc, "", &demog_csv(), 1e6, "a").unwrap();
        assert_eq!(data_years(&nine).len(), 9);
    }

    #[test]
    fn balanced_demography_entrants() {
        let d = Demography::balanced(1970, 1980, 5e5, 0.02, 1000.0).unwrap();
        assert_eq!(d.at(1975).entrants, 0.02 * 5e5 + 1000.0);
        assert_eq!(d.year_end(), 1980);
        assert!(Demography::balanced(1970, 1980, 0.0, 0.02, 0.0).is_err());
    }
}
