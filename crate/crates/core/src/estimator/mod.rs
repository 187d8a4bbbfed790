//! High-dimensional fixed-effects OLS and 2SLS with cluster-robust
//! inference.
//!
//! The pipeline: select complete rows, trim, drop FE singletons, demean by
//! alternating projections, then solve. Instruments enter exactly as many
//! columns as the explanatory variables they instrument (or more); the
//! first stage reports the cluster-robust Wald F of the excluded
//! instruments.

mod demean;
mod solve;

pub use demean::{demean_columns, drop_singletons, FeLayout, DEMEAN_MAX_SWEEPS, DEMEAN_TOL};
pub use solve::{cr1_covariance, tsls_cluster, wls_cluster, Design, FirstStage};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::instruments::interact;
use crate::panel::{Factor, Panel};

/// Declarative model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub outcome: String,
    /// Variables of interest. Instrumented when `instruments` is nonempty.
    pub explanatory: Vec<String>,
    /// Excluded instruments; empty means OLS.
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default)]
    pub controls: Vec<String>,
    /// Fixed-effect dimensions, absorbed in this order.
    pub fe: Vec<String>,
    pub cluster: String,
    #[serde(default)]
    pub weight: Option<String>,
    /// (lower, upper) trim percentiles applied to the outcome and every
    /// explanatory column before singleton dropping.
    #[serde(default)]
    pub trim: Option<(f64, f64)>,
    /// Adds squared explanatory columns instrumented by squared
    /// instruments.
    #[serde(default)]
    pub quadratic: bool,
    /// Factor whose groups split each explanatory column (and instrument)
    /// into one column per group.
    #[serde(default)]
    pub interact_by: Option<String>,
}

impl RegressionSpec {
    pub fn is_iv(&self) -> bool {
        !self.instruments.is_empty()
    }

    fn validate(&self, panel: &Panel) -> Result<()> {
        let mut numeric: Vec<&String> = vec![&self.outcome];
        numeric.extend(self.explanatory.iter());
        numeric.extend(self.instruments.iter());
        numeric.extend(self.controls.iter());
        if let Some(w) = &self.weight {
            numeric.push(w);
        }
        for c in numeric {
            if !panel.has_column(c) {
                return Err(Error::validation(format!("spec references missing column {c:?}")));
            }
        }
        for f in &self.fe {
            if !panel.has_factor(f) {
                return Err(Error::validation(format!("spec references missing FE factor {f:?}")));
            }
        }
        if !panel.has_factor(&self.cluster) {
            return Err(Error::validation(format!(
                "cluster dimension {:?} not present in data",
                self.cluster
            )));
        }
        if self.explanatory.is_empty() {
            return Err(Error::validation("spec needs at least one explanatory column"));
        }
        if self.is_iv() && self.instruments.len() < self.explanatory.len() {
            return Err(Error::validation(format!(
                "{} instruments cannot identify {} explanatory columns",
                self.instruments.len(),
                self.explanatory.len()
            )));
        }
        if let Some((lo, hi)) = self.trim {
            // (lo, hi) cut below the lo-th and above the (100 - hi)-th
            // percentile; both in [0, 50) keeps the window nonempty.
            if !(0.0..50.0).contains(&lo) || !(0.0..50.0).contains(&hi) {
                return Err(Error::validation(format!(
                    "trim percentiles ({lo}, {hi}) must lie in [0, 50)"
                )));
            }
        }
        if let Some(g) = &self.interact_by {
            if !panel.has_factor(g) {
                return Err(Error::validation(format!("interaction factor {g:?} not in panel")));
            }
            if !self.is_iv() {
                return Err(Error::validation(
                    "interacted designs are supported for instrumented specs",
                ));
            }
        }
        Ok(())
    }
}

/// One reported coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub coefficient: f64,
    pub se: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    /// Significance stars at the 10/5/1 percent levels.
    pub stars: String,
}

/// Fitted model with cluster-robust inference and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub terms: Vec<Term>,
    pub n: usize,
    pub n_clusters: usize,
    pub dropped_singletons: usize,
    pub trimmed_rows: usize,
    pub demean_sweeps: usize,
    /// Model columns (explanatory + controls).
    pub k_model: usize,
    /// Approximate absorbed-FE degrees of freedom (exact for two
    /// dimensions via connected components, additive beyond).
    pub k_absorbed: usize,
    pub first_stages: Vec<FirstStage>,
    /// Exact fit; standard errors degenerate to zero.
    pub degenerate: bool,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    /// Worker-level (first FE dimension) effect estimates are not produced
    /// here; see `analysis::partial_out_worker_effects`.
    pub spec: RegressionSpec,
}

impl EstimationResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }
}

/// Degrees of freedom absorbed by the FE dimensions: G_1 + G_2 - M_12 for
/// the first two (M_12 = connected components of their bipartite group
/// graph, an exact rank) plus G_d - 1 for every further dimension. One
/// dimension alone absorbs G_1.
pub fn absorbed_dof(factors: &[&Factor]) -> usize {
    match factors.len() {
        0 => 0,
        1 => factors[0].n_groups(),
        _ => {
            let g1 = factors[0].n_groups();
            let g2 = factors[1].n_groups();
            let m = bipartite_components(factors[0], factors[1]);
            let extra: usize = factors[2..].iter().map(|f| f.n_groups() - 1).sum();
            g1 + g2 - m + extra
        }
    }
}

fn bipartite_components(a: &Factor, b: &Factor) -> usize {
    // union-find over the disjoint label sets of both factors
    let ga = a.n_groups();
    let total = ga + b.n_groups();
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..a.codes.len() {
        let x = find(&mut parent, a.codes[i] as usize);
        let y = find(&mut parent, ga + b.codes[i] as usize);
        if x != y {
            parent[x.max(y)] = x.min(y);
        }
    }
    let mut roots: Vec<usize> = (0..total).map(|i| find(&mut parent, i)).collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

/// Linear-interpolation percentile (inclusive bounds) on a copy of `values`.
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let h = (n as f64 - 1.0) * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

struct WorkingColumns {
    names: Vec<String>,

    // layout: [outcome, explanatory.., instruments.., controls..]
    data: Vec<Vec<f64>>,
    n_explanatory: usize,
    n_instruments: usize,
}

/// Runs the full estimation pipeline on `panel` as described by `spec`.
pub fn estimate(spec: &RegressionSpec, panel: &Panel) -> Result<EstimationResult> {
    spec.validate(panel)?;

    // ---- sample selection: finite rows (instruments only for IV) ----
    let mut used: Vec<&str> = vec![spec.outcome.as_str()];
    used.extend(spec.explanatory.iter().map(|s| s.as_str()));
    if spec.is_iv() {
        used.extend(spec.instruments.iter().map(|s| s.as_str()));
    }
    used.extend(spec.controls.iter().map(|s| s.as_str()));
    let weights_col = spec.weight.as_ref().map(|w| panel.column(w)).transpose()?;

    let n0 = panel.n_rows();
    let cols: Vec<&[f64]> = used.iter().map(|c| panel.column(c)).collect::<Result<_>>()?;
    let mut rows: Vec<usize> = (0..n0)
        .filter(|&i| {
            cols.iter().all(|c| c[i].is_finite())
                && weights_col.map(|w| w[i].is_finite() && w[i] > 0.0).unwrap_or(true)
        })
        .collect();

    // ---- trim outcome and explanatory columns ----
    let mut trimmed_rows = 0;
    if let Some((lo, hi)) = spec.trim {
        let mut trim_cols: Vec<&str> = vec![spec.outcome.as_str()];
        trim_cols.extend(spec.explanatory.iter().map(|s| s.as_str()));
        for name in trim_cols {
            let col = panel.column(name)?;
            let values: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
            let lo_v = percentile(&values, lo);
            let hi_v = percentile(&values, 100.0 - hi);
            let before = rows.len();
            rows.retain(|&i| col[i] >= lo_v && col[i] <= hi_v);
            trimmed_rows += before - rows.len();
        }
    }
    if rows.is_empty() {
        return Err(Error::estimation("estimation sample is empty"));
    }

    // ---- working columns on the selected sample ----
    let mut work = build_working_columns(spec, panel, &rows)?;

    // ---- singleton dropping ----
    let fe_factors: Vec<Factor> =
        spec.fe.iter().map(|f| Ok(panel.factor(f)?.subset(&rows))).collect::<Result<_>>()?;
    let (kept, dropped_singletons) = if fe_factors.is_empty() {
        ((0..rows.len()).collect(), 0)
    } else {
        let refs: Vec<&Factor> = fe_factors.iter().collect();
        drop_singletons(&refs, rows.len())?
    };
    if kept.len() < rows.len() {
        for col in work.data.iter_mut() {
            *col = kept.iter().map(|&i| col[i]).collect();
        }
    }
    let fe_factors: Vec<Factor> = fe_factors.iter().map(|f| f.subset(&kept)).collect();
    let final_rows: Vec<usize> = kept.iter().map(|&i| rows[i]).collect();
    rows = final_rows;

    let weights: Option<Vec<f64>> = match spec.weight.as_ref() {
        Some(w) => {
            let col = panel.column(w)?;
            Some(rows.iter().map(|&i| col[i]).collect())
        }
        None => None,
    };
    let cluster = panel.factor(&spec.cluster)?.subset(&rows);
    let n = rows.len();

    // ---- demeaning ----
    let fe_refs: Vec<&Factor> = fe_factors.iter().collect();
    let (data, demean_sweeps) = if fe_refs.is_empty() {
        (std::mem::take(&mut work.data), 0)
    } else {
        let layout = FeLayout::new(&fe_refs, weights.as_deref())?;
        demean_columns(
            &layout,
            std::mem::take(&mut work.data),
            weights.as_deref(),
            DEMEAN_TOL,
            DEMEAN_MAX_SWEEPS,
        )?
    };

    let k_absorbed = absorbed_dof(&fe_refs);
    let k_model = work.n_explanatory + spec.controls.len();
    let k_total = k_model + k_absorbed;

    // ---- assemble designs ----
    let y = &data[0];
    let expl_cols: Vec<&[f64]> =
        (0..work.n_explanatory).map(|j| data[1 + j].as_slice()).collect();
    let inst_cols: Vec<&[f64]> = (0..work.n_instruments)
        .map(|j| data[1 + work.n_explanatory + j].as_slice())
        .collect();
    let ctrl_cols: Vec<&[f64]> = (0..spec.controls.len())
        .map(|j| data[1 + work.n_explanatory + work.n_instruments + j].as_slice())
        .collect();
    let expl_names: Vec<String> = work.names[1..1 + work.n_explanatory].to_vec();
    let inst_names: Vec<String> =
        work.names[1 + work.n_explanatory..1 + work.n_explanatory + work.n_instruments].to_vec();
    let ctrl_names: Vec<String> = spec.controls.clone();

    let (beta, se, residuals, n_clusters, first_stages, degenerate) = if spec.is_iv() {
        let out = tsls_cluster(
            &expl_names,
            &expl_cols,
            &ctrl_names,
            &ctrl_cols,
            &inst_names,
            &inst_cols,
            y,
            weights.as_deref(),
            &cluster.codes,
            cluster.n_groups(),
            k_total,
        )?;
        (out.beta, out.se, out.residuals, out.n_clusters, out.first_stages, out.degenerate)
    } else {
        let names: Vec<String> = expl_names.iter().chain(&ctrl_names).cloned().collect();
        let cols: Vec<&[f64]> = expl_cols.iter().chain(&ctrl_cols).copied().collect();
        let design = Design::new(names, cols)?;
        let out = wls_cluster(
            &design,
            y,
            weights.as_deref(),
            &cluster.codes,
            cluster.n_groups(),
            k_total,
        )?;
        (out.beta, out.se, out.residuals, out.n_clusters, Vec::new(), out.degenerate)
    };

    // ---- inference: t with G - 1 degrees of freedom ----
    let term_names: Vec<String> = expl_names.iter().chain(&ctrl_names).cloned().collect();
    let t_dof = (n_clusters.max(2) - 1) as f64;
    let t_dist = StudentsT::new(0.0, 1.0, t_dof)
        .map_err(|e| Error::estimation(format!("t distribution: {e}")))?;
    let terms: Vec<Term> = term_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let coefficient = beta[j];
            let se_j = se[j];
            let t_statistic = if se_j > 0.0 { coefficient / se_j } else { f64::INFINITY };
            let p_value = if se_j > 0.0 {
                2.0 * (1.0 - t_dist.cdf(t_statistic.abs()))
            } else {
                0.0
            };
            let stars = match p_value {
                p if p < 0.01 => "***",
                p if p < 0.05 => "**",
                p if p < 0.10 => "*",
                _ => "",
            };
            Term {
                name: name.clone(),
                coefficient,
                se: se_j,
                t_statistic,
                p_value,
                stars: stars.to_string(),
            }
        })
        .collect();

    Ok(EstimationResult {
        terms,
        n,
        n_clusters,
        dropped_singletons,
        trimmed_rows,
        demean_sweeps,
        k_model,
        k_absorbed,
        first_stages,
        degenerate,
        residuals,
        spec: spec.clone(),
    })
}

/// Builds outcome, expanded explanatory, expanded instruments, and control
/// columns on the selected rows.
fn build_working_columns(
    spec: &RegressionSpec,
    panel: &Panel,
    rows: &[usize],
) -> Result<WorkingColumns> {
    let take = |name: &str| -> Result<Vec<f64>> {
        let col = panel.column(name)?;
        Ok(rows.iter().map(|&i| col[i]).collect())
    };

    let mut expl_names: Vec<String> = spec.explanatory.clone();
    let mut expl: Vec<Vec<f64>> =
        spec.explanatory.iter().map(|c| take(c)).collect::<Result<_>>()?;
    let mut inst_names: Vec<String> = spec.instruments.clone();
    let mut inst: Vec<Vec<f64>> =
        spec.instruments.iter().map(|c| take(c)).collect::<Result<_>>()?;

    if spec.quadratic {
        let squared: Vec<Vec<f64>> =
            expl.iter().map(|c| c.iter().map(|v| v * v).collect()).collect();
        let squared_names: Vec<String> = expl_names.iter().map(|n| format!("{n}^2")).collect();
        expl.extend(squared);
        expl_names.extend(squared_names);
        let squared_z: Vec<Vec<f64>> =
            inst.iter().map(|c| c.iter().map(|v| v * v).collect()).collect();
        let squared_z_names: Vec<String> = inst_names.iter().map(|n| format!("{n}^2")).collect();
        inst.extend(squared_z);
        inst_names.extend(squared_z_names);
    }

    if let Some(group_name) = &spec.interact_by {
        let factor = panel.factor(group_name)?.subset(rows);
        let labels: Vec<String> =
            factor.codes.iter().map(|&c| factor.labels[c as usize].clone()).collect();
        let mut new_expl = Vec::new();
        let mut new_expl_names = Vec::new();
        for (name, col) in expl_names.iter().zip(&expl) {
            let (group_labels, cols) = interact(col, &labels, None);
            for (g, c) in group_labels.iter().zip(cols) {
                new_expl_names.push(format!("{name}:{g}"));
                new_expl.push(c);
            }
        }
        let mut new_inst = Vec::new();
        let mut new_inst_names = Vec::new();
        for (name, col) in inst_names.iter().zip(&inst) {
            let (group_labels, cols) = interact(col, &labels, None);
            for (g, c) in group_labels.iter().zip(cols) {
                new_inst_names.push(format!("{name}:{g}"));
                new_inst.push(c);
            }
        }
        expl = new_expl;
        expl_names = new_expl_names;
        inst = new_inst;
        inst_names = new_inst_names;
    }

    let mut names = vec![spec.outcome.clone()];
    let mut data = vec![take(&spec.outcome)?];
    let n_explanatory = expl.len();
    let n_instruments = inst.len();
    names.extend(expl_names);
    data.extend(expl);
    names.extend(inst_names);
    data.extend(inst);
    for c in &spec.controls {
        names.push(c.clone());
        data.push(take(c)?);
    }
    Ok(WorkingColumns { names, data, n_explanatory, n_instruments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Factor, Panel};

    fn simple_spec(outcome: &str, explanatory: &str) -> RegressionSpec {
        RegressionSpec {
            outcome: outcome.into(),
            explanatory: vec![explanatory.into()],
            instruments: vec![],
            controls: vec![],
            fe: vec!["g".into()],
            cluster: "g".into(),
            weight: None,
            trim: None,
            quadratic: false,
            interact_by: None,
        }
    }

    fn panel_with(x: Vec<f64>, y: Vec<f64>, groups: Vec<&str>) -> Panel {
        let mut p = Panel::new(x.len());
        p.add_column("x", x).unwrap();
        p.add_column("y", y).unwrap();
        p.add_factor("g", Factor::from_labels(&groups)).unwrap();
        p
    }

    #[test]
    fn exact_fit_has_zero_se_and_degenerate_flag() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let p = panel_with(x, y, vec!["a", "a", "a", "b", "b", "b"]);
        let r = estimate(&simple_spec("y", "x"), &p).unwrap();
        assert!((r.term("x").unwrap().coefficient - 2.0).abs() < 1e-10);
        assert!(r.degenerate);
        assert_eq!(r.term("x").unwrap().se, 0.0);
    }

    #[test]
    fn missing_column_is_rejected() {
        let p = panel_with(vec![1.0], vec![1.0], vec!["a"]);
        assert!(estimate(&simple_spec("y", "zz"), &p).is_err());
    }

    #[test]
    fn undefined_rows_drop_only_for_iv() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 2.0, 1.0];
        let z = vec![1.0, f64::NAN, 3.0, 4.0, 2.0, 1.5];
        let y = vec![2.0, 4.1, 5.9, 8.2, 4.1, 2.2];
        let mut p = panel_with(x, y, vec!["a", "a", "a", "b", "b", "b"]);
        p.add_column("z", z).unwrap();

        let ols = estimate(&simple_spec("y", "x"), &p).unwrap();
        assert_eq!(ols.n, 6);

        let mut iv = simple_spec("y", "x");
        iv.instruments = vec!["z".into()];
        let iv_res = estimate(&iv, &p).unwrap();
        assert_eq!(iv_res.n, 5);
        assert_eq!(iv_res.first_stages.len(), 1);
    }

    #[test]
    fn absorbed_dof_two_way_uses_connected_components() {
        // workers {a,b} x years {1,2}, all connected: 2 + 2 - 1 = 3
        let w = Factor::from_labels(&["a", "a", "b", "b"]);
        let t = Factor::from_labels(&["1", "2", "1", "2"]);
        assert_eq!(absorbed_dof(&[&w, &t]), 3);
        // two disconnected blocks: 4 + 2 - 2 = 4
        let w2 = Factor::from_labels(&["a", "a", "b", "b", "c", "c", "d", "d"]);
        let t2 = Factor::from_labels(&["1", "1", "1", "1", "2", "2", "2", "2"]);
        assert_eq!(absorbed_dof(&[&w2, &t2]), 4);
    }

    #[test]
    fn quadratic_expands_both_sides() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let z: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v * 0.5).collect();
        let mut p = panel_with(
            x,
            y,
            vec!["a", "a", "a", "a", "b", "b", "b", "b"],
        );
        p.add_column("z", z).unwrap();
        let mut spec = simple_spec("y", "x");
        spec.instruments = vec!["z".into()];
        spec.quadratic = true;
        let r = estimate(&spec, &p).unwrap();
        assert!(r.term("x").is_some());
        assert!(r.term("x^2").is_some());
        assert_eq!(r.first_stages.len(), 2);
    }

    #[test]
    fn trim_drops_tail_rows() {
        let n = 100;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let groups: Vec<String> = (0..n).map(|i| format!("g{}", i % 4)).collect();
        let group_refs: Vec<&str> = groups.iter().map(|s| s.as_str()).collect();
        let p = panel_with(x, y, group_refs);
        let mut spec = simple_spec("y", "x");
        spec.trim = Some((5.0, 5.0));
        let r = estimate(&spec, &p).unwrap();
        assert!(r.n < 100);
        assert!(r.trimmed_rows > 0);
        assert!((r.term("x").unwrap().coefficient - 3.0).abs() < 1e-9);
    }

    #[test]
    fn weights_scale_invariance() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = vec![2.2, 3.7, 6.4, 7.9, 10.3, 11.8];
        let w1 = vec![1.0, 2.0, 1.0, 3.0, 1.0, 2.0];
        let w2: Vec<f64> = w1.iter().map(|v| 2.0 * v).collect();
        let mut p = panel_with(x, y, vec!["a", "a", "a", "b", "b", "b"]);
        p.add_column("w1", w1).unwrap();
        p.add_column("w2", w2).unwrap();
        let mut s1 = simple_spec("y", "x");
        s1.weight = Some("w1".into());
        let mut s2 = simple_spec("y", "x");
        s2.weight = Some("w2".into());
        let r1 = estimate(&s1, &p).unwrap();
        let r2 = estimate(&s2, &p).unwrap();
        assert!(
            (r1.term("x").unwrap().coefficient - r2.term("x").unwrap().coefficient).abs() < 1e-12
        );
        assert!((r1.term("x").unwrap().se - r2.term("x").unwrap().se).abs() < 1e-12);
    }

    #[test]
    fn fe_group_constant_shift_leaves_coefficient_unchanged() {
        // absorption invariance: add a group-constant vector to x
        let x = vec![0.5, 1.5, 0.7, 2.4, 1.1, 3.0];
        let y = vec![1.1, 3.2, 1.4, 4.9, 2.4, 6.1];
        let p = panel_with(x.clone(), y.clone(), vec!["a", "a", "a", "b", "b", "b"]);
        let r1 = estimate(&simple_spec("y", "x"), &p).unwrap();

        let shifted: Vec<f64> =
            x.iter().enumerate().map(|(i, v)| v + if i < 3 { 10.0 } else { -4.0 }).collect();
        let p2 = panel_with(shifted, y, vec!["a", "a", "a", "b", "b", "b"]);
        let r2 = estimate(&simple_spec("y", "x"), &p2).unwrap();
        assert!(
            (r1.term("x").unwrap().coefficient - r2.term("x").unwrap().coefficient).abs() < 1e-8
        );
    }
}
