//! Derived spell columns: hire flags and real wages.

use std::collections::HashMap;

use crate::error::Result;

use super::{CpiSeries, WorkerSpell};

/// Flags hires: worker i is a hire in year t iff they have no spell at the
/// same firm in year t-1. A worker's first observed year counts as a hire.
///
/// The result does not depend on the row order of the input.
pub fn derive_hires(spells: &mut [WorkerSpell]) {
    let mut firm_by_worker_year: HashMap<(&str, i32), &str> = HashMap::with_capacity(spells.len());
    for s in spells.iter() {
        firm_by_worker_year.insert((s.worker_id.as_str(), s.year), s.firm_id.as_str());
    }
    let hires: Vec<bool> = spells
        .iter()
        .map(|s| {
            match firm_by_worker_year.get(&(s.worker_id.as_str(), s.year - 1)) {
                Some(&prev_firm) => prev_firm != s.firm_id,
                None => true,
            }
        })
        .collect();
    for (s, hire) in spells.iter_mut().zip(hires) {
        s.hire = Some(hire);
    }
}

/// Fills `wage_real` = nominal wage x 100 / CPI(year).
///
/// Base-year spells keep their nominal wage. Errors if any spell year is
/// missing from the series.
pub fn deflate(spells: &mut [WorkerSpell], cpi: &CpiSeries) -> Result<()> {
    // Validate all years up front so a failure leaves no partial state.
    let mut factor_by_year: HashMap<i32, f64> = HashMap::new();
    for s in spells.iter() {
        if let std::collections::hash_map::Entry::Vacant(e) = factor_by_year.entry(s.year) {
            e.insert(100.0 / cpi.get(s.year)?);
        }
    }
    for s in spells.iter_mut() {
        s.wage_real = Some(s.wage_nominal * factor_by_year[&s.year]);
    }
    Ok(())
}
