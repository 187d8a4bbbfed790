//! Leave-one-out instruments and interaction columns.
//!
//! For each (occupation, region, year) cell: z1 is the equal-weight mean of
//! log tightness over all other regions in the same occupation and year; z2
//! is the log ratio of the leave-one-out vacancy and seeker sums, so larger
//! regions weigh more; the leave-one-out log vacancy sum serves as the
//! national-shock control.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tightness::MarketCell;

/// Instrument columns aligned with the input cell order. `None` marks an
/// undefined entry; such rows drop out of IV samples only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstrumentTable {
    pub z1: Vec<Option<f64>>,
    pub z2: Vec<Option<f64>>,
    pub loo_log_v_sum: Vec<Option<f64>>,
}

/// Computes all three leave-one-out columns.
///
/// z1 averages log theta only over regions where theta is defined. z2 and
/// the vacancy-sum control aggregate raw counts over all other regions.
/// Donor sums run directly over the other regions rather than subtracting
/// the focal cell from a group total, so a cell's own counts never touch
/// its instruments, bit for bit.
pub fn compute_instruments(cells: &[MarketCell]) -> InstrumentTable {
    let mut groups: BTreeMap<(&str, i32), Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        groups.entry((c.occupation.as_str(), c.year)).or_default().push(i);
    }

    let mut table = InstrumentTable {
        z1: vec![None; cells.len()],
        z2: vec![None; cells.len()],
        loo_log_v_sum: vec![None; cells.len()],
    };
    for members in groups.values() {
        for &i in members {
            let mut log_theta_sum = 0.0;
            let mut log_theta_count = 0usize;
            let mut v_other = 0.0;
            let mut u_other = 0.0;
            for &j in members {
                if j == i {
                    continue;
                }
                if let Some(theta) = cells[j].theta {
                    log_theta_sum += theta.ln();
                    log_theta_count += 1;
                }
                v_other += cells[j].v_total;
                u_other += cells[j].u;
            }
            if log_theta_count > 0 {
                table.z1[i] = Some(log_theta_sum / log_theta_count as f64);
            }
            if v_other > 0.0 && u_other > 0.0 {
                table.z2[i] = Some((v_other / u_other).ln());
            }
            if v_other > 0.0 {
                table.loo_log_v_sum[i] = Some(v_other.ln());
            }
        }
    }
    table
}

/// Expands `values` into one column per group: column s holds
/// value x indicator(group == s). Group order follows first appearance
/// sorted by label; empty groups never arise by construction, but a group
/// list can be supplied to force the layout, and absent groups are dropped
/// with a warning.
pub fn interact(
    values: &[f64],
    groups: &[String],
    group_order: Option<&[String]>,
) -> (Vec<String>, Vec<Vec<f64>>) {
    assert_eq!(values.len(), groups.len(), "values and groups must align");
    let labels: Vec<String> = match group_order {
        Some(order) => {
            let mut present: Vec<String> = Vec::new();
            for g in order {
                if groups.contains(g) {
                    present.push(g.clone());
                } else {
                    log::warn!("interaction group {g:?} has no observations; column dropped");
                }
            }
            present
        }
        None => {
            let mut labels: Vec<String> = groups.to_vec();
            labels.sort();
            labels.dedup();
            labels
        }
    };
    let columns = labels
        .iter()
        .map(|label| {
            values
                .iter()
                .zip(groups)
                .map(|(&v, g)| if g == label { v } else { 0.0 })
                .collect()
        })
        .collect();
    (labels, columns)
}
