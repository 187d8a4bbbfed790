//! Post-estimation interpretation and reporting helpers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::WorkerSpell;
use crate::error::{Error, Result};
use crate::estimator::{demean_columns, FeLayout, DEMEAN_MAX_SWEEPS, DEMEAN_TOL};
use crate::panel::{Factor, Panel};

/// Wage effect of a tightness change and its share of observed wage growth.
///
/// Conventions follow the percent arithmetic of the source estimates:
/// elasticity x percent change in tightness gives the percent wage effect
/// (0.0113 x 133.3 is roughly 1.5), not a log-point calculation.
pub fn contribution_share(
    elasticity: f64,
    tightness_growth_pct: f64,
    wage_growth_pct: f64,
) -> Result<(f64, f64)> {
    if wage_growth_pct == 0.0 {
        return Err(Error::validation("wage growth must be nonzero for a share"));
    }
    let wage_effect_pct = elasticity * tightness_growth_pct;
    let share_pct = 100.0 * wage_effect_pct / wage_growth_pct;
    Ok((wage_effect_pct, share_pct))
}

/// Translates a log-log elasticity into the linear wage-setting-curve
/// coefficient: elasticity x (W0 / theta0) normalized by average daily
/// gross value added per worker.
pub fn wage_setting_level(
    elasticity: f64,
    base_wage: f64,
    base_tightness: f64,
    gross_value_added: f64,
    workforce: f64,
    days_per_year: f64,
) -> Result<f64> {
    for (name, v) in [
        ("base_wage", base_wage),
        ("base_tightness", base_tightness),
        ("gross_value_added", gross_value_added),
        ("workforce", workforce),
        ("days_per_year", days_per_year),
    ] {
        if !(v > 0.0) {
            return Err(Error::validation(format!("{name} must be positive, got {v}")));
        }
    }
    let productivity_daily = gross_value_added / (workforce * days_per_year);
    Ok(elasticity * (base_wage / base_tightness) / productivity_daily)
}

/// Counterfactual wage growth per decile after removing the tightness
/// contribution, plus the observed and counterfactual top-bottom gaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecileCounterfactual {
    pub counterfactual_growth_pct: Vec<f64>,
    pub observed_gap_pct: f64,
    pub counterfactual_gap_pct: f64,
}

pub fn decile_counterfactual(
    observed_growth_pct: &[f64],
    elasticity: &[f64],
    tightness_growth_pct: &[f64],
) -> Result<DecileCounterfactual> {
    let d = observed_growth_pct.len();
    if elasticity.len() != d || tightness_growth_pct.len() != d {
        return Err(Error::validation(format!(
            "decile vectors must align: {} / {} / {}",
            d,
            elasticity.len(),
            tightness_growth_pct.len()
        )));
    }
    if d == 0 {
        return Err(Error::validation("decile vectors are empty"));
    }
    let counterfactual_growth_pct: Vec<f64> = (0..d)
        .map(|i| observed_growth_pct[i] - elasticity[i] * tightness_growth_pct[i])
        .collect();
    Ok(DecileCounterfactual {
        observed_gap_pct: observed_growth_pct[d - 1] - observed_growth_pct[0],
        counterfactual_gap_pct: counterfactual_growth_pct[d - 1] - counterfactual_growth_pct[0],
        counterfactual_growth_pct,
    })
}

/// Firm-year average of log wages after partialling out worker effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmYearOutcome {
    pub firm_id: String,
    pub year: i32,
    pub outcome: f64,
    pub n_workers: usize,
}

/// Within-transformation worker effects: each worker's mean residual log
/// wage (grand mean removed). A deliberately simple first pass whose job is
/// to strip person composition out of firm averages.
pub fn partial_out_worker_effects(spells: &[WorkerSpell]) -> HashMap<String, f64> {
    let mut sums: HashMap<&str, (f64, usize)> = HashMap::new();
    let mut grand = 0.0;
    for s in spells {
        let w = s.wage_real.unwrap_or(s.wage_nominal).ln();
        let e = sums.entry(s.worker_id.as_str()).or_insert((0.0, 0));
        e.0 += w;
        e.1 += 1;
        grand += w;
    }
    let grand_mean = grand / spells.len().max(1) as f64;
    sums.into_iter()
        .map(|(id, (sum, count))| (id.to_string(), sum / count as f64 - grand_mean))
        .collect()
}

/// Per (firm, year): mean over workers of (log wage - worker effect).
pub fn firm_average_outcome(
    spells: &[WorkerSpell],
    worker_effects: &HashMap<String, f64>,
) -> Result<Vec<FirmYearOutcome>> {
    let mut agg: std::collections::BTreeMap<(String, i32), (f64, usize)> =
        std::collections::BTreeMap::new();
    for s in spells {
        let effect = worker_effects.get(&s.worker_id).ok_or_else(|| {
            Error::validation(format!("no worker effect for {:?}", s.worker_id))
        })?;
        let w = s.wage_real.unwrap_or(s.wage_nominal).ln() - effect;
        let e = agg.entry((s.firm_id.clone(), s.year)).or_insert((0.0, 0));
        e.0 += w;
        e.1 += 1;
    }
    Ok(agg
        .into_iter()
        .map(|((firm_id, year), (sum, n))| FirmYearOutcome {
            firm_id,
            year,
            outcome: sum / n as f64,
            n_workers: n,
        })
        .collect())
}

/// One marker of a binned scatter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinPoint {
    pub bin: usize,
    pub x_mean: f64,
    pub y_mean: f64,
    pub count: usize,
}

/// Residualization request for [`binscatter`]: demean by the factors, then
/// partial out the control columns; when `project_on` names an instrument
/// column, the x-axis becomes the first-stage fitted value, matching an
/// instrumented conditional scatter.
#[derive(Debug, Clone, Default)]
pub struct PartialOutSpec {
    pub fe: Vec<String>,
    pub controls: Vec<String>,
    pub project_on: Option<String>,
}

/// Equal-count (quantile) binned scatter of y against x.
///
/// Bin edges are linear-interpolation quantiles, so ties collapse into one
/// bin; a warning is logged when fewer populated bins than requested come
/// out. Both columns are residualized first when a partial-out spec is
/// given, with their sample means added back.
pub fn binscatter(
    panel: &Panel,
    x_name: &str,
    y_name: &str,
    n_bins: usize,
    partial_out: Option<&PartialOutSpec>,
) -> Result<Vec<BinPoint>> {
    if n_bins < 2 {
        return Err(Error::validation("binscatter needs at least 2 bins"));
    }
    let x_full = panel.column(x_name)?;
    let y_full = panel.column(y_name)?;
    let rows: Vec<usize> = (0..panel.n_rows())
        .filter(|&i| x_full[i].is_finite() && y_full[i].is_finite())
        .collect();
    if rows.len() < 2 {
        return Err(Error::validation("binscatter needs at least 2 complete rows"));
    }
    let mut x: Vec<f64> = rows.iter().map(|&i| x_full[i]).collect();
    let mut y: Vec<f64> = rows.iter().map(|&i| y_full[i]).collect();

    if let Some(spec) = partial_out {
        (x, y) = residualize(panel, &rows, x, y, spec)?;
    }

    let n = x.len();
    let mut sorted = x.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // quantile edges (linear interpolation)
    let edges: Vec<f64> = (0..=n_bins)
        .map(|k| {
            let h = (n as f64 - 1.0) * k as f64 / n_bins as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect();

    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_bins];
    for i in 0..n {
        // last bin is closed on the right
        let mut b = edges.partition_point(|&e| e <= x[i]);
        b = b.saturating_sub(1).min(n_bins - 1);
        sums[b].0 += x[i];
        sums[b].1 += y[i];
        sums[b].2 += 1;
    }
    let points: Vec<BinPoint> = sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, _, c))| *c > 0)
        .map(|(bin, (sx, sy, c))| BinPoint {
            bin,
            x_mean: sx / c as f64,
            y_mean: sy / c as f64,
            count: c,
        })
        .collect();
    if points.len() < n_bins {
        log::warn!(
            "binscatter: {} populated bins out of {n_bins} requested (ties collapsed)",
            points.len()
        );
    }
    Ok(points)
}

fn residualize(
    panel: &Panel,
    rows: &[usize],
    x: Vec<f64>,
    y: Vec<f64>,
    spec: &PartialOutSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x_mean = mean(&x);
    let y_mean = mean(&y);

    let mut columns = vec![x, y];
    let mut n_controls = 0;
    for c in &spec.controls {
        let col = panel.column(c)?;
        columns.push(rows.iter().map(|&i| col[i]).collect());
        n_controls += 1;
    }
    let mut projector = None;
    if let Some(z_name) = &spec.project_on {
        let col = panel.column(z_name)?;
        columns.push(rows.iter().map(|&i| col[i]).collect());
        projector = Some(columns.len() - 1);
    }

    let factors: Vec<Factor> =
        spec.fe.iter().map(|f| Ok(panel.factor(f)?.subset(rows))).collect::<Result<_>>()?;
    if !factors.is_empty() {
        let refs: Vec<&Factor> = factors.iter().collect();
        let layout = FeLayout::new(&refs, None)?;
        let (demeaned, _) =
            demean_columns(&layout, columns, None, DEMEAN_TOL, DEMEAN_MAX_SWEEPS)?;
        columns = demeaned;
    }

    // partial controls out of x, y (and the projector) by OLS residuals
    if n_controls > 0 {
        let targets: Vec<usize> = match projector {
            Some(p) => vec![0, 1, p],
            None => vec![0, 1],
        };
        let mut residuals = Vec::with_capacity(targets.len());
        {
            let control_slice: Vec<&[f64]> =
                (2..2 + n_controls).map(|j| columns[j].as_slice()).collect();
            let names: Vec<String> = spec.controls.clone();
            let design = crate::estimator::Design::new(names, control_slice)?;
            for &t in &targets {
                residuals.push(ols_residuals(&design, &columns[t])?);
            }
        }
        for (&t, resid) in targets.iter().zip(residuals) {
            columns[t] = resid;
        }
    }

    let (mut x, mut y) = (columns[0].clone(), columns[1].clone());
    if let Some(p) = projector {
        // first-stage fitted x on the residualized instrument
        let z = &columns[p];
        let zz: f64 = z.iter().map(|v| v * v).sum();
        if zz <= 0.0 {
            return Err(Error::estimation("projection instrument has no variation"));
        }
        let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        let slope = zx / zz;
        x = z.iter().map(|v| slope * v).collect();
    }
    for v in x.iter_mut() {
        *v += x_mean;
    }
    for v in y.iter_mut() {
        *v += y_mean;
    }
    Ok((x, y))
}

fn ols_residuals(design: &crate::estimator::Design, y: &[f64]) -> Result<Vec<f64>> {
    // tiny normal-equation solve; clusters are irrelevant here
    use nalgebra::{DMatrix, DVector};
    let k = design.k();
    let n = design.n;
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for a in 0..k {
        for b in a..k {
            let s: f64 =
                (0..n).map(|i| design.columns[a][i] * design.columns[b][i]).sum();
            xtx[(a, b)] = s;
            xtx[(b, a)] = s;
        }
        xty[a] = (0..n).map(|i| design.columns[a][i] * y[i]).sum();
    }
    let beta = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::estimation("partial-out controls are collinear"))?;
    let mut resid = y.to_vec();
    for a in 0..k {
        for i in 0..n {
            resid[i] -= beta[a] * design.columns[a][i];
        }
    }
    Ok(resid)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}
