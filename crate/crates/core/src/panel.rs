//! Column-oriented estimation panel.
//!
//! Numeric columns hold f64 with NaN for undefined entries (for instance a
//! missing instrument); factor columns hold categorical codes used for
//! fixed effects and clustering. `merge_estimation_panel` joins worker
//! spells with market cells into the wage-regression layout.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::data::{PanelConfig, WorkerSpell};
use crate::error::{Error, Result};
use crate::instruments::InstrumentTable;
use crate::tightness::MarketCell;

/// A categorical column: dense codes plus the label table.
#[derive(Debug, Clone)]
pub struct Factor {
    pub codes: Vec<u32>,
    pub labels: Vec<String>,
}

impl Factor {
    /// Builds a factor from string labels, coding by first appearance.
    pub fn from_labels<S: AsRef<str>>(values: &[S]) -> Self {
        let mut lookup: HashMap<&str, u32> = HashMap::new();
        let mut labels = Vec::new();
        let mut codes = Vec::with_capacity(values.len());
        for v in values {
            let v = v.as_ref();
            let code = match lookup.get(v) {
                Some(&c) => c,
                None => {
                    let c = labels.len() as u32;
                    lookup.insert(
                        // the label vector owns the string; the map borrows
                        // from values, which outlives this loop
                        v, c,
                    );
                    labels.push(v.to_string());
                    c
                }
            };
            codes.push(code);
        }
        Factor { codes, labels }
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Subsets rows and recodes to a compact group range.
    pub fn subset(&self, rows: &[usize]) -> Factor {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut labels = Vec::new();
        let mut codes = Vec::with_capacity(rows.len());
        for &r in rows {
            let old = self.codes[r];
            let code = *remap.entry(old).or_insert_with(|| {
                labels.push(self.labels[old as usize].clone());
                (labels.len() - 1) as u32
            });
            codes.push(code);
        }
        Factor { codes, labels }
    }
}

/// Column-oriented table: numeric columns plus factors, all row-aligned.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    n: usize,
    columns: IndexMap<String, Vec<f64>>,
    factors: IndexMap<String, Factor>,
}

impl Panel {
    pub fn new(n: usize) -> Self {
        Panel { n, columns: IndexMap::new(), factors: IndexMap::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn add_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n {
            return Err(Error::validation(format!(
                "column {name:?} has {} rows, panel has {}",
                values.len(),
                self.n
            )));
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn add_factor(&mut self, name: &str, factor: Factor) -> Result<()> {
        if factor.len() != self.n {
            return Err(Error::validation(format!(
                "factor {name:?} has {} rows, panel has {}",
                factor.len(),
                self.n
            )));
        }
        self.factors.insert(name.to_string(), factor);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::validation(format!("panel has no column {name:?}")))
    }

    pub fn factor(&self, name: &str) -> Result<&Factor> {
        self.factors.get(name).ok_or_else(|| Error::validation(format!("panel has no factor {name:?}")))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn has_factor(&self, name: &str) -> bool {
        self.factors.contains_key(name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn factor_names(&self) -> impl Iterator<Item = &str> {
        self.factors.keys().map(|s| s.as_str())
    }

    /// Row subset preserving column order; factors are recoded compactly.
    pub fn subset(&self, rows: &[usize]) -> Panel {
        let mut out = Panel::new(rows.len());
        for (name, col) in &self.columns {
            let values = rows.iter().map(|&r| col[r]).collect();
            out.columns.insert(name.clone(), values);
        }
        for (name, factor) in &self.factors {
            out.factors.insert(name.clone(), factor.subset(rows));
        }
        out
    }

    /// Writes the panel as CSV: factors as labels, NaN as empty.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        let factor_names: Vec<&String> = self.factors.keys().collect();
        let column_names: Vec<&String> = self.columns.keys().collect();
        let header: Vec<&str> = factor_names
            .iter()
            .map(|s| s.as_str())
            .chain(column_names.iter().map(|s| s.as_str()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n {
            let mut fields: Vec<String> = Vec::with_capacity(header.len());
            for name in &factor_names {
                let f = &self.factors[*name];
                fields.push(f.labels[f.codes[i] as usize].clone());
            }
            for name in &column_names {
                let v = self.columns[*name][i];
                fields.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a panel written by [`Panel::write_csv`]. Columns whose values
    /// all parse as numbers (or empty) load as numeric; the rest as factors.
    pub fn read_csv<P: AsRef<Path>>(path: P, factor_hints: &[&str]) -> Result<Panel> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path.as_ref())?;
        let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for record in reader.records() {
            let record = record?;
            for (j, v) in record.iter().enumerate() {
                raw[j].push(v.to_string());
            }
        }
        let n = raw.first().map(|c| c.len()).unwrap_or(0);
        let mut panel = Panel::new(n);
        for (name, values) in headers.iter().zip(raw) {
            let treat_as_factor = factor_hints.contains(&name.as_str())
                || !values
                    .iter()
                    .all(|v| v.is_empty() || v.parse::<f64>().is_ok());
            if treat_as_factor {
                panel.add_factor(name, Factor::from_labels(&values))?;
            } else {
                let col = values
                    .iter()
                    .map(|v| if v.is_empty() { f64::NAN } else { v.parse::<f64>().unwrap() })
                    .collect();
                panel.add_column(name, col)?;
            }
        }
        Ok(panel)
    }
}

/// Joins spells with market cells (and instruments) into the estimation
/// panel of the wage regressions.
///
/// Numeric columns: log_wage, log_theta, log_theta_flow, z1, z2,
/// loo_log_v_sum, hire, east, age, age_sq, edu_medium, edu_high, weight.
/// Factors: worker, firm, year, market, occupation, region, occ_year,
/// industry_year, firm_year, wage_decile.
pub fn merge_estimation_panel(
    spells: &[WorkerSpell],
    cells: &[MarketCell],
    instruments: Option<&InstrumentTable>,
    zone_of: Option<&std::collections::BTreeMap<String, String>>,
    config: &PanelConfig,
) -> Result<Panel> {
    config.validate()?;
    // cell lookup by (occupation key, region, year)
    let mut cell_index: HashMap<(&str, &str, i32), usize> = HashMap::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        cell_index.insert((c.occupation.as_str(), c.region.as_str(), c.year), i);
    }

    let n = spells.len();
    let mut log_wage = Vec::with_capacity(n);
    let mut log_theta = Vec::with_capacity(n);
    let mut log_theta_flow = Vec::with_capacity(n);
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    let mut loo = Vec::with_capacity(n);
    let mut hire = Vec::with_capacity(n);
    let mut east = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut age_sq = Vec::with_capacity(n);
    let mut edu_medium = Vec::with_capacity(n);
    let mut edu_high = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);

    let mut worker = Vec::with_capacity(n);
    let mut firm = Vec::with_capacity(n);
    let mut year = Vec::with_capacity(n);
    let mut market = Vec::with_capacity(n);
    let mut occupation = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    let mut occ_year = Vec::with_capacity(n);
    let mut industry_year = Vec::with_capacity(n);
    let mut firm_year = Vec::with_capacity(n);

    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);

    for s in spells {
        let occ_key = crate::data::occupation_key(&s.occupation, config.occupation_digits)?;
        let reg = config.region_of(&s.district, zone_of)?;
        let cell = cell_index.get(&(occ_key.as_str(), reg.as_str(), s.year)).copied();

        let wage = s.wage_real.unwrap_or(s.wage_nominal);
        if !(wage > 0.0) {
            return Err(Error::validation(format!(
                "spell ({}, {}) has nonpositive wage {wage}",
                s.worker_id, s.year
            )));
        }
        log_wage.push(wage.ln());
        match cell {
            Some(i) => {
                let c = &cells[i];
                log_theta.push(opt(c.theta.map(f64::ln)));
                log_theta_flow.push(opt(c.theta_flow.map(f64::ln)));
                match instruments {
                    Some(t) => {
                        z1.push(opt(t.z1[i]));
                        z2.push(opt(t.z2[i]));
                        loo.push(opt(t.loo_log_v_sum[i]));
                    }
                    None => {
                        z1.push(f64::NAN);
                        z2.push(f64::NAN);
                        loo.push(f64::NAN);
                    }
                }
            }
            None => {
                log_theta.push(f64::NAN);
                log_theta_flow.push(f64::NAN);
                z1.push(f64::NAN);
                z2.push(f64::NAN);
                loo.push(f64::NAN);
            }
        }
        hire.push(match s.hire {
            Some(true) => 1.0,
            Some(false) => 0.0,
            None => f64::NAN,
        });
        east.push(if s.east { 1.0 } else { 0.0 });
        age.push(s.age as f64);
        age_sq.push((s.age as f64).powi(2));
        edu_medium.push(if s.education == crate::data::Education::Medium { 1.0 } else { 0.0 });
        edu_high.push(if s.education == crate::data::Education::High { 1.0 } else { 0.0 });
        weight.push(s.weight);

        worker.push(s.worker_id.clone());
        firm.push(s.firm_id.clone());
        year.push(s.year.to_string());
        market.push(format!("{occ_key}|{reg}"));
        occupation.push(occ_key.clone());
        region.push(reg);
        occ_year.push(format!("{occ_key}|{}", s.year));
        industry_year.push(format!("{}|{}", s.industry, s.year));
        firm_year.push(format!("{}|{}", s.firm_id, s.year));
    }

    let mut panel = Panel::new(n);
    panel.add_column("log_wage", log_wage)?;
    panel.add_column("log_theta", log_theta)?;
    panel.add_column("log_theta_flow", log_theta_flow)?;
    panel.add_column("z1", z1)?;
    panel.add_column("z2", z2)?;
    panel.add_column("loo_log_v_sum", loo)?;
    panel.add_column("hire", hire)?;
    panel.add_column("east", east)?;
    panel.add_column("age", age)?;
    panel.add_column("age_sq", age_sq)?;
    panel.add_column("edu_medium", edu_medium)?;
    panel.add_column("edu_high", edu_high)?;
    panel.add_column("weight", weight)?;

    panel.add_factor("worker", Factor::from_labels(&worker))?;
    panel.add_factor("firm", Factor::from_labels(&firm))?;
    panel.add_factor("year", Factor::from_labels(&year))?;
    panel.add_factor("market", Factor::from_labels(&market))?;
    panel.add_factor("occupation", Factor::from_labels(&occupation))?;
    panel.add_factor("region", Factor::from_labels(&region))?;
    panel.add_factor("occ_year", Factor::from_labels(&occ_year))?;
    panel.add_factor("industry_year", Factor::from_labels(&industry_year))?;
    panel.add_factor("firm_year", Factor::from_labels(&firm_year))?;

    // Wage decile groups: workers split by their wage in their first
    // observed year, predetermined so nobody switches groups over time.
    let decile = wage_decile_groups(spells);
    panel.add_factor("wage_decile", Factor::from_labels(&decile))?;
    Ok(panel)
}

/// Decile group label per spell, from the worker's first-year wage.
fn wage_decile_groups(spells: &[WorkerSpell]) -> Vec<String> {
    let mut first: HashMap<&str, (i32, f64)> = HashMap::new();
    for s in spells {
        let wage = s.wage_real.unwrap_or(s.wage_nominal);
        match first.get_mut(s.worker_id.as_str()) {
            Some(e) => {
                if s.year < e.0 {
                    *e = (s.year, wage);
                }
            }
            None => {
                first.insert(&s.worker_id, (s.year, wage));
            }
        }
    }
    let mut base: Vec<f64> = first.values().map(|&(_, w)| w).collect();
    base.sort_by(|a, b| a.partial_cmp(b).expect("wages are finite"));
    let n = base.len();
    let decile_of = |wage: f64| -> usize {
        // rank of the first element > wage gives the upper count
        let upper = base.partition_point(|&v| v <= wage);
        (((upper.max(1) - 1) * 10) / n.max(1)).min(9)
    };
    spells
        .iter()
        .map(|s| {
            let (_, w) = first[s.worker_id.as_str()];
            format!("d{:02}", decile_of(w) + 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_codes_by_first_appearance() {
        let f = Factor::from_labels(&["b", "a", "b", "c"]);
        assert_eq!(f.codes, vec![0, 1, 0, 2]);
        assert_eq!(f.labels, vec!["b", "a", "c"]);
        assert_eq!(f.n_groups(), 3);
    }

    #[test]
    fn subset_recodes_compactly() {
        let f = Factor::from_labels(&["b", "a", "b", "c"]);
        let s = f.subset(&[2, 3]);
        assert_eq!(s.codes, vec![0, 1]);
        assert_eq!(s.labels, vec!["b", "c"]);
    }

    #[test]
    fn panel_roundtrip_csv() {
        let mut p = Panel::new(3);
        p.add_column("x", vec![1.5, f64::NAN, -2.0]).unwrap();
        p.add_factor("g", Factor::from_labels(&["u", "v", "u"])).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        p.write_csv(f.path()).unwrap();
        let q = Panel::read_csv(f.path(), &[]).unwrap();
        assert_eq!(q.n_rows(), 3);
        let x = q.column("x").unwrap();
        assert_eq!(x[0], 1.5);
        assert!(x[1].is_nan());
        assert_eq!(q.factor("g").unwrap().labels, vec!["u", "v"]);
    }

    #[test]
    fn decile_groups_are_balanced_on_unique_wages() {
        let mut spells: Vec<WorkerSpell> = Vec::new();
        for i in 0..100 {
            spells.push(crate::testutil::spell(&format!("w{i}"), 2013, "f", 50.0 + i as f64));
        }
        let groups = wage_decile_groups(&spells);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for g in &groups {
            *counts.entry(g.as_str()).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        assert!(counts.values().all(|&c| c == 10), "{counts:?}");
    }
}
