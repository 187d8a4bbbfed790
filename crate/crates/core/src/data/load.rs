//! Delimited-file ingestion with per-row validation.
//!
//! Files are UTF-8, comma- or tab-delimited, header row required. Malformed
//! rows are rejected and reported with their line number; duplicate keys and
//! unknown enum values abort the load.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{
    occupation_key, requirement_level, AdjacencyRecord, CpiSeries, Education, FlowRecord, Gender,
    JobSeekerRecord, Nationality, NotificationShares, PanelConfig, RequirementGroup, TableBundle,
    VacancyRecord, WorkerSpell,
};

/// Paths of the input tables. Only `spells` is mandatory for a wage panel;
/// the rest depend on the pipeline stage being run.
#[derive(Debug, Clone, Default)]
pub struct TablePaths {
    pub spells: Option<PathBuf>,
    pub vacancies: Option<PathBuf>,
    pub seekers: Option<PathBuf>,
    pub shares: Option<PathBuf>,
    pub cpi: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
}

/// Row counts and rejected-row diagnostics per table.
#[derive(Debug, Clone, Default)]
pub struct LoadDiagnostics {
    /// table name -> (rows read, rows kept).
    pub row_counts: BTreeMap<String, (usize, usize)>,
    /// (table, 1-based line number, reason).
    pub rejects: Vec<(String, u64, String)>,
}

impl LoadDiagnostics {
    fn record(&mut self, table: &str, read: usize, kept: usize) {
        self.row_counts.insert(table.to_string(), (read, kept));
    }

    fn reject(&mut self, table: &str, line: u64, reason: String) {
        self.rejects.push((table.to_string(), line, reason));
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let delimiter = sniff_delimiter(path)?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let head = std::fs::read_to_string(path)?;
    let first = head.lines().next().unwrap_or("");
    if first.contains('\t') {
        Ok(b'\t')
    } else {
        Ok(b',')
    }
}

struct Row<'a> {
    headers: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
}

impl<'a> Row<'a> {
    fn get(&self, name: &str) -> std::result::Result<&'a str, String> {
        let idx = self
            .headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| format!("missing column {name:?}"))?;
        self.record.get(idx).ok_or_else(|| format!("missing value for {name:?}"))
    }

    fn f64(&self, name: &str) -> std::result::Result<f64, String> {
        let raw = self.get(name)?;
        raw.parse::<f64>().map_err(|_| format!("{name}={raw:?} is not a number"))
    }

    /// Optional float column: absent column or empty value -> None.
    fn f64_opt(&self, name: &str) -> std::result::Result<Option<f64>, String> {
        let idx = match self.headers.iter().position(|h| h.eq_ignore_ascii_case(name)) {
            Some(i) => i,
            None => return Ok(None),
        };
        match self.record.get(idx) {
            None | Some("") => Ok(None),
            Some(raw) => {
                raw.parse::<f64>().map(Some).map_err(|_| format!("{name}={raw:?} is not a number"))
            }
        }
    }

    fn i32(&self, name: &str) -> std::result::Result<i32, String> {
        let raw = self.get(name)?;
        raw.parse::<i32>().map_err(|_| format!("{name}={raw:?} is not an integer"))
    }

    fn bool(&self, name: &str) -> std::result::Result<bool, String> {
        let raw = self.get(name)?;
        parse_bool(raw).ok_or_else(|| format!("{name}={raw:?} is not a boolean"))
    }
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Loads and validates every table present in `paths`.
///
/// Occupation codes are checked as 5-digit codes with requirement digit 1-4;
/// they are collapsed to labor-market keys later, during cell construction,
/// so the bundle retains full granularity. Spell uniqueness is enforced on
/// (worker_id, year), count tables on (occupation, district, year).
pub fn load_tables(paths: &TablePaths, config: &PanelConfig) -> Result<(TableBundle, LoadDiagnostics)> {
    config.validate()?;
    let mut bundle = TableBundle::default();
    let mut diag = LoadDiagnostics::default();

    if let Some(p) = &paths.spells {
        bundle.spells = load_spells(p, config, &mut diag)?;
    }
    if let Some(p) = &paths.vacancies {
        bundle.vacancies = load_counts(p, "vacancies", "v_registered", &mut diag)?
            .into_iter()
            .map(|(occupation, district, year, v)| VacancyRecord { occupation, district, year, v_registered: v })
            .collect();
    }
    if let Some(p) = &paths.seekers {
        bundle.seekers = load_counts(p, "seekers", "u", &mut diag)?
            .into_iter()
            .map(|(occupation, district, year, u)| JobSeekerRecord { occupation, district, year, u })
            .collect();
    }
    if let Some(p) = &paths.shares {
        bundle.shares = load_shares(p, &mut diag)?;
    }
    if let Some(p) = &paths.cpi {
        bundle.cpi = Some(load_cpi(p, config.base_year, &mut diag)?);
    }
    if let Some(p) = &paths.flows {
        bundle.flows = load_flows(p, &mut diag)?;
    }
    if let Some(p) = &paths.adjacency {
        bundle.adjacency = load_adjacency(p, &mut diag)?;
    }
    Ok((bundle, diag))
}

fn load_spells(path: &Path, config: &PanelConfig, diag: &mut LoadDiagnostics) -> Result<Vec<WorkerSpell>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let mut out = Vec::new();
    let mut seen: HashSet<(String, i32)> = HashSet::new();
    let mut read = 0usize;

    for record in reader.records() {
        let record = record?;
        read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { headers: &headers, record: &record };
        match parse_spell(&row, config) {
            Ok(spell) => {
                if !seen.insert((spell.worker_id.clone(), spell.year)) {
                    return Err(Error::validation(format!(
                        "spells line {line}: duplicate (worker_id, year) = ({}, {})",
                        spell.worker_id, spell.year
                    )));
                }
                out.push(spell);
            }
            Err(SpellParseError::Reject(reason)) => diag.reject("spells", line, reason),
            Err(SpellParseError::Hard(reason)) => {
                return Err(Error::validation(format!("spells line {line}: {reason}")))
            }
        }
    }
    diag.record("spells", read, out.len());
    Ok(out)
}

enum SpellParseError {
    /// Malformed value or invariant violation: row dropped, load continues.
    Reject(String),
    /// Unknown enum value: load aborts.
    Hard(String),
}

fn parse_spell(row: &Row, config: &PanelConfig) -> std::result::Result<WorkerSpell, SpellParseError> {
    use SpellParseError::{Hard, Reject};

    let worker_id = row.get("worker_id").map_err(Reject)?.to_string();
    if worker_id.is_empty() {
        return Err(Reject("empty worker_id".into()));
    }
    let year = row.i32("year").map_err(Reject)?;
    let firm_id = row.get("firm_id").map_err(Reject)?.to_string();
    let occupation = row.get("occupation").map_err(Reject)?.to_string();
    // Validate that the code collapses under the configured granularity.
    occupation_key(&occupation, config.occupation_digits)
        .map_err(|e| Reject(e.to_string()))?;
    let district = row.get("district").map_err(Reject)?.to_string();
    let wage_nominal = row.f64("wage").map_err(Reject)?;
    if !(wage_nominal > 0.0) {
        return Err(Reject(format!("wage {wage_nominal} must be > 0")));
    }
    let age_raw = row.f64("age").map_err(Reject)?;
    if !(14.0..=100.0).contains(&age_raw) {
        return Err(Reject(format!("age {age_raw} outside [14, 100]")));
    }
    let age = age_raw as u8;

    let education_raw = row.get("education").map_err(Reject)?;
    if education_raw.is_empty() {
        return Err(Reject("missing education".into()));
    }
    let education = Education::parse(education_raw)
        .ok_or_else(|| Hard(format!("unknown education {education_raw:?}")))?;
    let gender_raw = row.get("gender").map_err(Reject)?;
    let gender =
        Gender::parse(gender_raw).ok_or_else(|| Hard(format!("unknown gender {gender_raw:?}")))?;
    let nationality_raw = row.get("nationality").map_err(Reject)?;
    let nationality = Nationality::parse(nationality_raw)
        .ok_or_else(|| Hard(format!("unknown nationality {nationality_raw:?}")))?;

    let east = row.bool("east").map_err(Reject)?;
    let industry_raw = row.get("industry").map_err(Reject)?;
    let industry = industry_raw
        .parse::<u8>()
        .ok()
        .filter(|d| *d <= 9)
        .ok_or_else(|| Reject(format!("industry {industry_raw:?} is not a 1-digit code")))?;
    let weight = match row.f64_opt("weight").map_err(Reject)? {
        Some(w) if w >= 0.0 => w,
        Some(w) => return Err(Reject(format!("weight {w} must be >= 0"))),
        None => 1.0,
    };

    // Explicit flag wins; otherwise derive from the year's censor limit.
    let censored = match row.get("censored") {
        Ok(raw) if !raw.is_empty() => {
            parse_bool(raw).ok_or_else(|| Reject(format!("censored={raw:?} is not a boolean")))?
        }
        _ => match config.censor_limits.get(&year) {
            Some(&limit) => wage_nominal >= limit,
            None => false,
        },
    };

    Ok(WorkerSpell {
        worker_id,
        year,
        firm_id,
        occupation,
        district,
        wage_nominal,
        censored,
        age,
        education,
        gender,
        nationality,
        east,
        industry,
        weight,
        wage_real: None,
        hire: None,
    })
}

/// Shared loader for the vacancy and seeker count tables.
fn load_counts(
    path: &Path,
    table: &str,
    value_col: &str,
    diag: &mut LoadDiagnostics,
) -> Result<Vec<(String, String, i32, f64)>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let mut out = Vec::new();
    let mut seen: HashSet<(String, String, i32)> = HashSet::new();
    let mut read = 0usize;

    for record in reader.records() {
        let record = record?;
        read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { headers: &headers, record: &record };
        let parsed = (|| -> std::result::Result<(String, String, i32, f64), String> {
            let occupation = row.get("occupation")?.to_string();
            if requirement_level(&occupation).is_none() {
                return Err(format!("occupation {occupation:?} has no valid requirement digit"));
            }
            let district = row.get("district")?.to_string();
            let year = row.i32("year")?;
            let value = row.f64(value_col)?;
            if !(value >= 0.0) {
                return Err(format!("{value_col} {value} must be >= 0"));
            }
            Ok((occupation, district, year, value))
        })();
        match parsed {
            Ok(rec) => {
                let key = (rec.0.clone(), rec.1.clone(), rec.2);
                if !seen.insert(key) {
                    return Err(Error::validation(format!(
                        "{table} line {line}: duplicate (occupation, district, year) = ({}, {}, {})",
                        rec.0, rec.1, rec.2
                    )));
                }
                out.push(rec);
            }
            Err(reason) => diag.reject(table, line, reason),
        }
    }
    diag.record(table, read, out.len());
    Ok(out)
}

fn load_shares(path: &Path, diag: &mut LoadDiagnostics) -> Result<NotificationShares> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let mut shares = NotificationShares::default();
    let mut read = 0usize;
    let mut kept = 0usize;

    for record in reader.records() {
        let record = record?;
        read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { headers: &headers, record: &record };
        let group_raw = match row.get("requirement_group") {
            Ok(g) => g,
            Err(reason) => {
                diag.reject("shares", line, reason);
                continue;
            }
        };
        let group = RequirementGroup::parse(group_raw).ok_or_else(|| {
            Error::validation(format!("shares line {line}: unknown requirement_group {group_raw:?}"))
        })?;
        let share = match row.f64("share") {
            Ok(s) => s,
            Err(reason) => {
                diag.reject("shares", line, reason);
                continue;
            }
        };
        // Year "pooled" (or 0) marks the time-constant fallback row.
        let year_raw = row.get("year").map_err(|r| Error::validation(format!("shares line {line}: {r}")))?;
        let result = if year_raw.eq_ignore_ascii_case("pooled") || year_raw == "0" {
            shares.insert_pooled(group, share)
        } else {
            match year_raw.parse::<i32>() {
                Ok(y) => shares.insert_year(y, group, share),
                Err(_) => {
                    diag.reject("shares", line, format!("year={year_raw:?} is not a year"));
                    continue;
                }
            }
        };
        match result {
            Ok(()) => kept += 1,
            Err(e) => diag.reject("shares", line, e.to_string()),
        }
    }
    diag.record("shares", read, kept);
    Ok(shares)
}

fn load_cpi(path: &Path, base_year: i32, diag: &mut LoadDiagnostics) -> Result<CpiSeries> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let mut index = BTreeMap::new();
    let mut read = 0usize;

    for record in reader.records() {
        let record = record?;
        read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { headers: &headers, record: &record };
        match (row.i32("year"), row.f64("index")) {
            (Ok(year), Ok(value)) => {
                index.insert(year, value);
            }
            (Err(reason), _) | (_, Err(reason)) => diag.reject("cpi", line, reason),
        }
    }
    diag.record("cpi", read, index.len());
    CpiSeries::new(base_year, index)
}

fn load_flows(path: &Path, diag: &mut LoadDiagnostics) -> Result<Vec<FlowRecord>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let mut out = Vec::new();
    let mut read = 0usize;

    for record in reader.records() {
        let record = record?;
        read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { headers: &headers, record: &record };
        let parsed = (|| -> std::result::Result<FlowRecord, String> {
            let origin = row.get("origin_district")?.to_string();
            let destination = row.get("destination_district")?.to_string();
            let commuters = row.f64("commuters")?;
            if !(commuters >= 0.0) {
                return Err(format!("commuters {commuters} must be >= 0"));
            }
            Ok(FlowRecord { origin, destination, commuters })
        })();
        match parsed {
            Ok(rec) => out.push(rec),
            Err(reason) => diag.reject("flows", line, reason),
        }
    }
    diag.record("flows", read, out.len());
    Ok(out)
}

fn load_adjacency(path: &Path, diag: &mut LoadDiagnostics) -> Result<Vec<AdjacencyRecord>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    let mut out = Vec::new();
    let mut read = 0usize;

    for record in reader.records() {
        let record = record?;
        read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { headers: &headers, record: &record };
        match (row.get("district_a"), row.get("district_b")) {
            (Ok(a), Ok(b)) => {
                out.push(AdjacencyRecord { district_a: a.to_string(), district_b: b.to_string() })
            }
            (Err(reason), _) | (_, Err(reason)) => diag.reject("adjacency", line, reason),
        }
    }
    diag.record("adjacency", read, out.len());
    Ok(out)
}

/// Writes spells back out in the ingestion schema (round-trip safe).
pub fn write_spells<P: AsRef<Path>>(path: P, spells: &[WorkerSpell]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "worker_id,year,firm_id,occupation,district,wage,censored,age,education,gender,nationality,east,industry,weight"
    )?;
    for s in spells {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.worker_id,
            s.year,
            s.firm_id,
            s.occupation,
            s.district,
            s.wage_nominal,
            s.censored as u8,
            s.age,
            s.education.as_str(),
            s.gender.as_str(),
            s.nationality.as_str(),
            s.east as u8,
            s.industry,
            s.weight
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cells file written by [`write_cells`], returning the cells and
/// any instrument columns present.
pub fn read_cells<P: AsRef<Path>>(
    path: P,
) -> Result<(Vec<crate::tightness::MarketCell>, crate::instruments::InstrumentTable)> {
    use crate::instruments::InstrumentTable;
    use crate::tightness::{CellFlag, MarketCell};

    let mut reader = open_reader(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut cells = Vec::new();
    let mut table = InstrumentTable::default();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { headers: &headers, record: &record };
        let cell = (|| -> std::result::Result<MarketCell, String> {
            let flag_raw = row.get("flag")?;
            let flag = CellFlag::parse(flag_raw)
                .ok_or_else(|| format!("unknown cell flag {flag_raw:?}"))?;
            Ok(MarketCell {
                occupation: row.get("occupation")?.to_string(),
                region: row.get("region")?.to_string(),
                year: row.i32("year")?,
                v_registered: row.f64("v_registered")?,
                v_total: row.f64("v_total")?,
                u: row.f64("u")?,
                theta: row.f64_opt("theta")?,
                theta_flow: row.f64_opt("theta_flow")?,
                flag,
            })
        })()
        .map_err(|reason| Error::validation(format!("cells line {line}: {reason}")))?;
        cells.push(cell);
        table.z1.push(row.f64_opt("z1").map_err(Error::Validation)?);
        table.z2.push(row.f64_opt("z2").map_err(Error::Validation)?);
        table
            .loo_log_v_sum
            .push(row.f64_opt("loo_log_v_sum").map_err(Error::Validation)?);
    }
    Ok((cells, table))
}

/// Writes market cells with instruments appended as optional columns.
pub fn write_cells<P: AsRef<Path>>(
    path: P,
    cells: &[crate::tightness::MarketCell],
    instruments: Option<&crate::instruments::InstrumentTable>,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "occupation,region,year,v_registered,v_total,u,theta,theta_flow,flag,z1,z2,loo_log_v_sum"
    )?;
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, c) in cells.iter().enumerate() {
        let (z1, z2, loo) = match instruments {
            Some(t) => (t.z1[i], t.z2[i], t.loo_log_v_sum[i]),
            None => (None, None, None),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.occupation,
            c.region,
            c.year,
            c.v_registered,
            c.v_total,
            c.u,
            fmt_opt(c.theta),
            fmt_opt(c.theta_flow),
            c.flag.as_str(),
            fmt_opt(z1),
            fmt_opt(z2),
            fmt_opt(loo)
        )?;
    }
    w.flush()?;
    Ok(())
}
