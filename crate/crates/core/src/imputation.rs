//! Two-step Tobit imputation of right-censored wages.
//!
//! Step 1 fits a censored regression of log wage on individual controls
//! separately by (year, gender, education) cell and computes each worker's
//! leave-one-out firm mean of fitted log wages. Step 2 refits with that
//! mean as an extra regressor and replaces each censored wage with the
//! conditional expectation above the limit. Uncensored rows pass through.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::data::{Education, Gender, WorkerSpell};
use crate::error::{Error, Result};
use crate::par;
use crate::tobit::{fit_tobit, normal_hazard_upper};

/// Controls entering the per-cell Tobit. Education and gender are cell keys
/// and therefore excluded; requirement level enters as indicator columns.
#[derive(Debug, Clone)]
pub struct ImputeConfig {
    pub use_age: bool,
    pub use_age_squared: bool,
    pub use_requirement_dummies: bool,
    pub use_east: bool,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            use_age: true,
            use_age_squared: true,
            use_requirement_dummies: true,
            use_east: true,
        }
    }
}

/// Per-spell imputation outcome.
#[derive(Debug, Clone, Default)]
pub struct ImputeReport {
    pub n_imputed: usize,
    /// Cells skipped because they held no uncensored rows; their censored
    /// spells stay un-imputed and are listed here by index.
    pub skipped_rows: Vec<usize>,
    pub cells: usize,
}

type CellKey = (i32, Gender, Education);

/// Imputes censored wages in place. `limits` maps year to the censoring
/// point in EUR/day; the regression runs on log wages with a log limit.
pub fn impute_wages(
    spells: &mut [WorkerSpell],
    limits: &BTreeMap<i32, f64>,
    config: &ImputeConfig,
) -> Result<ImputeReport> {
    for s in spells.iter() {
        if s.censored && !limits.contains_key(&s.year) {
            return Err(Error::validation(format!(
                "censored spell in year {} has no censor limit",
                s.year
            )));
        }
    }

    let mut by_cell: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (i, s) in spells.iter().enumerate() {
        by_cell.entry((s.year, s.gender, s.education)).or_default().push(i);
    }

    // ---- step 1: per-cell fit on individual controls, fitted log wages ----
    let cells: Vec<(CellKey, Vec<usize>)> = by_cell.into_iter().collect();
    let step1: Vec<Result<Option<Vec<f64>>>> = par::map_indexed(&cells, |_, (key, rows)| {
        let (y, x, cens) = cell_design(spells, rows, config, None);
        if cens.iter().all(|&c| c) {
            return Ok(None); // cell has no uncensored rows
        }
        let limit = log_limit(limits, key.0);
        let fit = fit_tobit(&y, &x, limit, &cens)?;
        let fitted = (0..rows.len())
            .map(|r| (0..x.ncols()).map(|j| x[(r, j)] * fit.coefficients[j]).sum())
            .collect();
        Ok(Some(fitted))
    });

    // fitted log wage per spell index, where estimable
    let mut fitted_of: Vec<Option<f64>> = vec![None; spells.len()];
    let mut skipped_cells: Vec<usize> = Vec::new();
    for (c, res) in step1.into_iter().enumerate() {
        match res? {
            Some(fitted) => {
                for (&row, &f) in cells[c].1.iter().zip(&fitted) {
                    fitted_of[row] = Some(f);
                }
            }
            None => skipped_cells.push(c),
        }
    }

    // ---- leave-one-out firm means of fitted wages ----
    // firm-year totals over rows with a fitted value
    let mut firm_sum: HashMap<(&str, i32), (f64, usize)> = HashMap::new();
    for (i, s) in spells.iter().enumerate() {
        if let Some(f) = fitted_of[i] {
            let e = firm_sum.entry((s.firm_id.as_str(), s.year)).or_insert((0.0, 0));
            e.0 += f;
            e.1 += 1;
        }
    }
    // cell means as the singleton-firm fallback
    let mut cell_sum: BTreeMap<CellKey, (f64, usize)> = BTreeMap::new();
    for (i, s) in spells.iter().enumerate() {
        if let Some(f) = fitted_of[i] {
            let e = cell_sum.entry((s.year, s.gender, s.education)).or_insert((0.0, 0));
            e.0 += f;
            e.1 += 1;
        }
    }
    let loo_mean: Vec<Option<f64>> = spells
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let f = fitted_of[i]?;
            let (sum, count) = firm_sum[&(s.firm_id.as_str(), s.year)];
            if count >= 2 {
                Some((sum - f) / (count - 1) as f64)
            } else {
                let (csum, ccount) = cell_sum[&(s.year, s.gender, s.education)];
                Some(csum / ccount as f64)
            }
        })
        .collect();

    // ---- step 2: refit with the leave-one-out firm mean, impute ----
    let step2: Vec<Result<Option<Vec<(usize, f64)>>>> = par::map_indexed(&cells, |c, (key, rows)| {
        if skipped_cells.contains(&c) {
            return Ok(None);
        }
        let (y, x, cens) = cell_design(spells, rows, config, Some(&loo_mean));
        let limit = log_limit(limits, key.0);
        let fit = fit_tobit(&y, &x, limit, &cens)?;
        let mut imputed = Vec::new();
        for (r, &row) in rows.iter().enumerate() {
            if !spells[row].censored {
                continue;
            }
            let mu: f64 = (0..x.ncols()).map(|j| x[(r, j)] * fit.coefficients[j]).sum();
            let z = (limit - mu) / fit.sigma;
            let log_wage = mu + fit.sigma * normal_hazard_upper(z);
            imputed.push((row, log_wage));
        }
        Ok(Some(imputed))
    });

    let mut report = ImputeReport { cells: cells.len(), ..Default::default() };
    for res in step2 {
        if let Some(imputed) = res? {
            for (row, log_wage) in imputed {
                let limit = log_limit(limits, spells[row].year);
                // conditional expectation above the limit always exceeds it;
                // clamp guards only against floating-point slack at z ~ 0
                spells[row].wage_nominal = log_wage.exp().max(limit.exp() * (1.0 + 1e-12));
                report.n_imputed += 1;
            }
        }
    }
    for &c in &skipped_cells {
        for &row in &cells[c].1 {
            if spells[row].censored {
                report.skipped_rows.push(row);
            }
        }
    }
    report.skipped_rows.sort_unstable();
    Ok(report)
}

fn log_limit(limits: &BTreeMap<i32, f64>, year: i32) -> f64 {
    limits.get(&year).map(|l| l.ln()).unwrap_or(f64::INFINITY)
}

/// Builds (log wage, design matrix, censored flags) for one cell.
fn cell_design(
    spells: &[WorkerSpell],
    rows: &[usize],
    config: &ImputeConfig,
    loo_mean: Option<&[Option<f64>]>,
) -> (Vec<f64>, DMatrix<f64>, Vec<bool>) {
    let n = rows.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]]; // intercept
    if config.use_age {
        cols.push(rows.iter().map(|&i| spells[i].age as f64).collect());
    }
    if config.use_age_squared {
        cols.push(rows.iter().map(|&i| (spells[i].age as f64).powi(2)).collect());
    }
    if config.use_requirement_dummies {
        // dummies for all present levels except the lowest (the reference)
        let mut levels: Vec<u8> = rows.iter().map(|&i| spells[i].requirement_level()).collect();
        levels.sort_unstable();
        levels.dedup();
        for &level in levels.iter().skip(1) {
            cols.push(
                rows.iter()
                    .map(|&i| if spells[i].requirement_level() == level { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
    }
    if config.use_east {
        let col: Vec<f64> =
            rows.iter().map(|&i| if spells[i].east { 1.0 } else { 0.0 }).collect();
        if col.iter().any(|&v| v != 0.0) && !col.iter().all(|&v| v == 1.0) {
            cols.push(col);
        }
    }
    if let Some(loo) = loo_mean {
        cols.push(rows.iter().map(|&i| loo[i].unwrap_or(0.0)).collect());
    }
    let y: Vec<f64> = rows.iter().map(|&i| spells[i].wage_nominal.ln()).collect();
    let cens: Vec<bool> = rows.iter().map(|&i| spells[i].censored).collect();
    let k = cols.len();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    (y, x, cens)
}
