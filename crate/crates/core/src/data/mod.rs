//! Domain records and table ingestion.
//!
//! One `WorkerSpell` is a worker-year employment record selected upstream
//! (one spell per worker and year). Vacancy and job-seeker counts arrive at
//! the 5-digit-occupation-by-district level; `PanelConfig` controls how
//! occupation codes collapse to labor-market keys and how districts map to
//! regions.

mod derive;
mod load;

pub use derive::{deflate, derive_hires};
pub use load::{load_tables, read_cells, write_cells, write_spells, LoadDiagnostics, TablePaths};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Education {
    Low,
    Medium,
    High,
}

impl Education {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Some(Education::Low),
            "medium" => Some(Education::Medium),
            "high" => Some(Education::High),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Education::Low => "low",
            Education::Medium => "medium",
            Education::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Some(Gender::Female),
            "male" | "m" => Some(Gender::Male),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nationality {
    Native,
    Foreign,
}

impl Nationality {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "native" => Some(Nationality::Native),
            "foreign" => Some(Nationality::Foreign),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Nationality::Native => "native",
            Nationality::Foreign => "foreign",
        }
    }
}

/// Requirement group of an occupation, keyed by the fifth code digit:
/// 1 = helpers, 2 = professionals, 3 and 4 = specialists and experts pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementGroup {
    Helpers,
    Professionals,
    SpecialistsExperts,
}

impl RequirementGroup {
    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1 => Some(RequirementGroup::Helpers),
            2 => Some(RequirementGroup::Professionals),
            3 | 4 => Some(RequirementGroup::SpecialistsExperts),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "helpers" => Some(RequirementGroup::Helpers),
            "professionals" => Some(RequirementGroup::Professionals),
            "specialists_experts" | "specialists and experts" => {
                Some(RequirementGroup::SpecialistsExperts)
            }
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RequirementGroup::Helpers => "helpers",
            RequirementGroup::Professionals => "professionals",
            RequirementGroup::SpecialistsExperts => "specialists_experts",
        }
    }
}

/// One worker-year employment record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpell {
    pub worker_id: String,
    pub year: i32,
    pub firm_id: String,
    /// 5-digit occupation code; digits 1-4 are the field of expertise,
    /// digit 5 the requirement level (1-4).
    pub occupation: String,
    pub district: String,
    /// Gross daily wage in EUR/day, nominal.
    pub wage_nominal: f64,
    /// Wage at or above the contribution ceiling.
    pub censored: bool,
    pub age: u8,
    pub education: Education,
    pub gender: Gender,
    pub nationality: Nationality,
    pub east: bool,
    /// 1-digit sector code.
    pub industry: u8,
    pub weight: f64,
    /// EUR/day in base-year prices; filled by [`deflate`].
    pub wage_real: Option<f64>,
    /// Worker not employed at this firm in the previous year; filled by
    /// [`derive_hires`].
    pub hire: Option<bool>,
}

impl WorkerSpell {
    /// Requirement level = fifth digit of the occupation code.
    pub fn requirement_level(&self) -> u8 {
        requirement_level(&self.occupation).expect("validated on load")
    }
}

/// Fifth digit of a 5-digit occupation code, when it is a valid level.
pub fn requirement_level(occupation: &str) -> Option<u8> {
    let d = occupation.as_bytes().get(4)?;
    match d {
        b'1'..=b'4' => Some(d - b'0'),
        _ => None,
    }
}

/// Collapses a 5-digit occupation code to the configured labor-market key:
/// the leading `digits` characters plus a dash plus the requirement digit,
/// e.g. `"26342"` with 3 digits -> `"263-2"`.
pub fn occupation_key(occupation: &str, digits: u8) -> Result<String> {
    if occupation.len() != 5 || !occupation.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::validation(format!(
            "occupation code {occupation:?} is not a 5-digit code"
        )));
    }
    let level = requirement_level(occupation).ok_or_else(|| {
        Error::validation(format!(
            "occupation code {occupation:?} has requirement digit outside 1-4"
        ))
    })?;
    let d = digits as usize;
    if !(2..=4).contains(&d) {
        return Err(Error::validation(format!("occupation_digits must be 2, 3, or 4, got {digits}")));
    }
    Ok(format!("{}-{}", &occupation[..d], level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VacancyRecord {
    pub occupation: String,
    pub district: String,
    pub year: i32,
    pub v_registered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSeekerRecord {
    pub occupation: String,
    pub district: String,
    pub year: i32,
    pub u: f64,
}

/// Yearly (or pooled time-constant) shares of registered vacancies in all
/// vacancies, by requirement group. Divisor for vacancy extrapolation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NotificationShares {
    /// (year, group) -> share in (0, 1].
    pub by_year: BTreeMap<(i32, RequirementGroup), f64>,
    /// Pooled fallback used when a (year, group) entry is missing.
    pub pooled: BTreeMap<RequirementGroup, f64>,
}

impl NotificationShares {
    pub fn insert_year(&mut self, year: i32, group: RequirementGroup, share: f64) -> Result<()> {
        check_share(share)?;
        self.by_year.insert((year, group), share);
        Ok(())
    }

    pub fn insert_pooled(&mut self, group: RequirementGroup, share: f64) -> Result<()> {
        check_share(share)?;
        self.pooled.insert(group, share);
        Ok(())
    }

    /// Share for a year and group; falls back to the pooled table.
    pub fn lookup(&self, year: i32, group: RequirementGroup) -> Result<f64> {
        if let Some(&s) = self.by_year.get(&(year, group)) {
            return Ok(s);
        }
        if let Some(&s) = self.pooled.get(&group) {
            return Ok(s);
        }
        Err(Error::validation(format!(
            "no notification share for year {year}, group {} and no pooled fallback",
            group.as_str()
        )))
    }
}

fn check_share(share: f64) -> Result<()> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(Error::validation(format!("share {share} outside (0, 1]")));
    }
    Ok(())
}

/// Consumer price index by year, base year = 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpiSeries {
    pub base_year: i32,
    pub index: BTreeMap<i32, f64>,
}

impl CpiSeries {
    pub fn new(base_year: i32, index: BTreeMap<i32, f64>) -> Result<Self> {
        for (&y, &v) in &index {
            if !(v > 0.0) {
                return Err(Error::validation(format!("CPI index for {y} must be > 0, got {v}")));
            }
        }
        match index.get(&base_year) {
            Some(&v) if (v - 100.0).abs() < 1e-9 => {}
            Some(&v) => {
                return Err(Error::validation(format!(
                    "base year {base_year} has index {v}, expected 100"
                )))
            }
            None => {
                return Err(Error::validation(format!("base year {base_year} missing from CPI series")))
            }
        }
        Ok(CpiSeries { base_year, index })
    }

    pub fn get(&self, year: i32) -> Result<f64> {
        self.index
            .get(&year)
            .copied()
            .ok_or_else(|| Error::validation(format!("CPI index missing for year {year}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionScheme {
    /// Commuting zones from a delineated partition file.
    Zones,
    /// Federal states: leading 2 digits of the district code.
    States,
    /// Government regions: leading 3 digits of the district code.
    GovernmentRegions,
    /// Districts used as-is.
    Districts,
}

impl RegionScheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zones" => Some(RegionScheme::Zones),
            "states" => Some(RegionScheme::States),
            "government_regions" => Some(RegionScheme::GovernmentRegions),
            "districts" => Some(RegionScheme::Districts),
            _ => None,
        }
    }
}

impl fmt::Display for RegionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionScheme::Zones => "zones",
            RegionScheme::States => "states",
            RegionScheme::GovernmentRegions => "government_regions",
            RegionScheme::Districts => "districts",
        };
        f.write_str(s)
    }
}

/// Panel construction settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelConfig {
    /// Leading occupation digits combined with the requirement digit (2-4).
    pub occupation_digits: u8,
    pub region_scheme: RegionScheme,
    pub base_year: i32,
    /// Censoring limit in EUR/day per year; used when the explicit censored
    /// flag is absent and for Tobit imputation.
    pub censor_limits: BTreeMap<i32, f64>,
    /// Optional (lower, upper) trim percentiles in [0, 50).
    pub trim: Option<(f64, f64)>,
    /// Inclusive year range of the panel.
    pub years: (i32, i32),
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            occupation_digits: 3,
            region_scheme: RegionScheme::Zones,
            base_year: 2015,
            censor_limits: BTreeMap::new(),
            trim: None,
            years: (2012, 2022),
        }
    }
}

impl PanelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.occupation_digits) {
            return Err(Error::validation(format!(
                "occupation_digits must be 2, 3, or 4, got {}",
                self.occupation_digits
            )));
        }
        if let Some((lo, hi)) = self.trim {
            // lower-tail and upper-tail cut sizes, both in [0, 50)
            if !(0.0..50.0).contains(&lo) || !(0.0..50.0).contains(&hi) {
                return Err(Error::validation(format!(
                    "trim percentiles ({lo}, {hi}) must lie in [0, 50)"
                )));
            }
        }
        if self.years.0 > self.years.1 {
            return Err(Error::validation(format!(
                "year range {:?} has start after end",
                self.years
            )));
        }
        Ok(())
    }

    /// Maps a district code to its region under the configured scheme.
    /// `zone_of` resolves the zones scheme from a delineated partition.
    pub fn region_of(
        &self,
        district: &str,
        zone_of: Option<&BTreeMap<String, String>>,
    ) -> Result<String> {
        match self.region_scheme {
            RegionScheme::Districts => Ok(district.to_string()),
            RegionScheme::States => Ok(district.chars().take(2).collect()),
            RegionScheme::GovernmentRegions => Ok(district.chars().take(3).collect()),
            RegionScheme::Zones => {
                let map = zone_of.ok_or_else(|| {
                    Error::validation("region_scheme = zones requires a zone partition")
                })?;
                map.get(district).cloned().ok_or_else(|| {
                    Error::validation(format!("district {district} missing from zone map"))
                })
            }
        }
    }
}

/// Raw commuting-flow edge (origin -> destination commuter count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin: String,
    pub destination: String,
    pub commuters: f64,
}

/// Geographic adjacency edge between two districts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyRecord {
    pub district_a: String,
    pub district_b: String,
}

/// The validated input tables, immutable after loading.
#[derive(Debug, Clone, Default)]
pub struct TableBundle {
    pub spells: Vec<WorkerSpell>,
    pub vacancies: Vec<VacancyRecord>,
    pub seekers: Vec<JobSeekerRecord>,
    pub shares: NotificationShares,
    pub cpi: Option<CpiSeries>,
    pub flows: Vec<FlowRecord>,
    pub adjacency: Vec<AdjacencyRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupation_key_slices_leading_digits_and_level() {
        assert_eq!(occupation_key("26342", 3).unwrap(), "263-2");
        assert_eq!(occupation_key("26342", 2).unwrap(), "26-2");
        assert_eq!(occupation_key("26342", 4).unwrap(), "2634-2");
    }

    #[test]
    fn occupation_key_rejects_bad_codes() {
        assert!(occupation_key("2634", 3).is_err());
        assert!(occupation_key("26345", 3).is_err()); // level 5
        assert!(occupation_key("2634x", 3).is_err());
        assert!(occupation_key("26342", 5).is_err());
    }

    #[test]
    fn requirement_group_pools_specialists_and_experts() {
        assert_eq!(RequirementGroup::from_level(1), Some(RequirementGroup::Helpers));
        assert_eq!(RequirementGroup::from_level(2), Some(RequirementGroup::Professionals));
        assert_eq!(RequirementGroup::from_level(3), Some(RequirementGroup::SpecialistsExperts));
        assert_eq!(RequirementGroup::from_level(4), Some(RequirementGroup::SpecialistsExperts));
        assert_eq!(RequirementGroup::from_level(5), None);
    }

    #[test]
    fn shares_fall_back_to_pooled() {
        let mut shares = NotificationShares::default();
        shares.insert_year(2012, RequirementGroup::Helpers, 0.36).unwrap();
        shares.insert_pooled(RequirementGroup::Helpers, 0.458).unwrap();
        assert_eq!(shares.lookup(2012, RequirementGroup::Helpers).unwrap(), 0.36);
        assert_eq!(shares.lookup(2019, RequirementGroup::Helpers).unwrap(), 0.458);
        assert!(shares.lookup(2019, RequirementGroup::Professionals).is_err());
    }

    #[test]
    fn cpi_requires_base_year_at_100() {
        let mut idx = BTreeMap::new();
        idx.insert(2015, 100.0);
        idx.insert(2016, 101.5);
        assert!(CpiSeries::new(2015, idx.clone()).is_ok());
        assert!(CpiSeries::new(2016, idx.clone()).is_err());
        idx.insert(2017, -1.0);
        assert!(CpiSeries::new(2015, idx).is_err());
    }

    #[test]
    fn region_schemes_slice_district_codes() {
        let cfg = PanelConfig { region_scheme: RegionScheme::States, ..Default::default() };
        assert_eq!(cfg.region_of("05315", None).unwrap(), "05");
        let cfg = PanelConfig {
            region_scheme: RegionScheme::GovernmentRegions,
            ..Default::default()
        };
        assert_eq!(cfg.region_of("05315", None).unwrap(), "053");
        let cfg = PanelConfig { region_scheme: RegionScheme::Districts, ..Default::default() };
        assert_eq!(cfg.region_of("05315", None).unwrap(), "05315");
        let cfg = PanelConfig { region_scheme: RegionScheme::Zones, ..Default::default() };
        assert!(cfg.region_of("05315", None).is_err());
        let mut zones = BTreeMap::new();
        zones.insert("05315".to_string(), "z03".to_string());
        assert_eq!(cfg.region_of("05315", Some(&zones)).unwrap(), "z03");
    }
}
