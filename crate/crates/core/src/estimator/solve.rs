//! Weighted least squares, two-stage least squares, and the CR1
//! cluster-robust sandwich.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense column-major design wrapper with column names for error messages.
pub struct Design<'a> {
    pub names: Vec<String>,
    pub columns: Vec<&'a [f64]>,
    pub n: usize,
}

impl<'a> Design<'a> {
    pub fn new(names: Vec<String>, columns: Vec<&'a [f64]>) -> Result<Self> {
        let n = columns.first().map(|c| c.len()).unwrap_or(0);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::validation("design columns must have equal length"));
        }
        Ok(Design { names, columns, n })
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    /// X' W v for a row-aligned vector.
    fn xtwv(&self, w: Option<&[f64]>, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.k());
        for (j, col) in self.columns.iter().enumerate() {
            let mut s = 0.0;
            match w {
                Some(w) => {
                    for i in 0..self.n {
                        s += w[i] * col[i] * v[i];
                    }
                }
                None => {
                    for i in 0..self.n {
                        s += col[i] * v[i];
                    }
                }
            }
            out[j] = s;
        }
        out
    }

    /// X' W X.
    fn xtwx(&self, w: Option<&[f64]>) -> DMatrix<f64> {
        let k = self.k();
        let mut out = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let (ca, cb) = (self.columns[a], self.columns[b]);
                let mut s = 0.0;
                match w {
                    Some(w) => {
                        for i in 0..self.n {
                            s += w[i] * ca[i] * cb[i];
                        }
                    }
                    None => {
                        for i in 0..self.n {
                            s += ca[i] * cb[i];
                        }
                    }
                }
                out[(a, b)] = s;
                out[(b, a)] = s;
            }
        }
        out
    }

    fn fitted(&self, beta: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (j, col) in self.columns.iter().enumerate() {
            let b = beta[j];
            for i in 0..self.n {
                out[i] += b * col[i];
            }
        }
        out
    }
}

/// Solves the normal equations, naming the collinear column on rank
/// deficiency.
fn solve_normal(
    xtx: &DMatrix<f64>,
    xty: &DVector<f64>,
    names: &[String],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match xtx.clone().cholesky() {
        Some(chol) => {
            let beta = chol.solve(xty);
            let inv = chol.inverse();
            Ok((beta, inv))
        }
        None => Err(Error::estimation(format!(
            "design matrix is rank deficient; column {:?} is collinear with the others",
            collinear_column(xtx, names)
        ))),
    }
}

/// Gaussian elimination diagnostic: first column whose pivot collapses.
fn collinear_column(xtx: &DMatrix<f64>, names: &[String]) -> String {
    let k = xtx.nrows();
    let mut m = xtx.clone();
    for j in 0..k {
        let scale = xtx[(j, j)].abs().max(1e-300);
        if m[(j, j)] <= 1e-12 * scale {
            return names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
        }
        for r in (j + 1)..k {
            let f = m[(r, j)] / m[(j, j)];
            for c in j..k {
                let v = m[(j, c)];
                m[(r, c)] -= f * v;
            }
        }
    }
    "unknown".to_string()
}

/// CR1 cluster covariance: c (X'WX)^-1 [sum_g s_g s_g'] (X'WX)^-1 with
/// s_g = sum_{i in g} w_i x_i e_i and c = G/(G-1) x (N-1)/(N-K).
pub struct Cr1Output {
    pub covariance: DMatrix<f64>,
    pub n_clusters: usize,
}

pub fn cr1_covariance(
    design: &Design,
    weights: Option<&[f64]>,
    residuals: &[f64],
    cluster_codes: &[u32],
    n_cluster_groups: usize,
    bread_inv: &DMatrix<f64>,
    k_total: usize,
) -> Result<Cr1Output> {
    let k = design.k();
    let n = design.n;
    let mut scores = DMatrix::zeros(n_cluster_groups, k);
    for (j, col) in design.columns.iter().enumerate() {
        match weights {
            Some(w) => {
                for i in 0..n {
                    scores[(cluster_codes[i] as usize, j)] += w[i] * col[i] * residuals[i];
                }
            }
            None => {
                for i in 0..n {
                    scores[(cluster_codes[i] as usize, j)] += col[i] * residuals[i];
                }
            }
        }
    }
    let meat = scores.transpose() * &scores;
    let g = n_cluster_groups as f64;
    let n_f = n as f64;
    let k_f = k_total as f64;
    if n_cluster_groups < 2 {
        return Err(Error::estimation("cluster-robust inference needs at least 2 clusters"));
    }
    let c = if n_f > k_f { (g / (g - 1.0)) * ((n_f - 1.0) / (n_f - k_f)) } else { g / (g - 1.0) };
    let covariance = bread_inv * meat * bread_inv * c;
    Ok(Cr1Output { covariance, n_clusters: n_cluster_groups })
}

/// Weighted least squares with CR1 inference.
#[derive(Debug)]
pub struct WlsFit {
    pub beta: DVector<f64>,
    pub se: Vec<f64>,
    pub residuals: Vec<f64>,
    pub xtx_inv: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub n_clusters: usize,
    /// Exact fit: residuals are numerically zero, SEs reported as 0.
    pub degenerate: bool,
}

pub fn wls_cluster(
    design: &Design,
    y: &[f64],
    weights: Option<&[f64]>,
    cluster_codes: &[u32],
    n_cluster_groups: usize,
    k_total: usize,
) -> Result<WlsFit> {
    let xtx = design.xtwx(weights);
    let xty = design.xtwv(weights, y);
    let (beta, xtx_inv) = solve_normal(&xtx, &xty, &design.names)?;
    let fitted = design.fitted(&beta);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();

    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let degenerate = residuals.iter().all(|r| r.abs() <= 1e-12 * y_scale);

    let cr1 = cr1_covariance(
        design,
        weights,
        &residuals,
        cluster_codes,
        n_cluster_groups,
        &xtx_inv,
        k_total,
    )?;
    let se: Vec<f64> = (0..design.k())
        .map(|j| if degenerate { 0.0 } else { cr1.covariance[(j, j)].max(0.0).sqrt() })
        .collect();
    Ok(WlsFit {
        beta,
        se,
        residuals,
        xtx_inv,
        covariance: cr1.covariance,
        n_clusters: cr1.n_clusters,
        degenerate,
    })
}

/// First-stage output for one endogenous column.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FirstStage {
    pub endogenous: String,
    /// (instrument name, coefficient, CR1 standard error)
    pub instrument_coefficients: Vec<(String, f64, f64)>,
    /// Cluster-robust Wald F of the excluded instruments.
    pub f_statistic: f64,
}

/// Two-stage least squares on demeaned data.
///
/// `x_endog` are the instrumented columns, `controls` the included
/// exogenous columns (shared between stages), `z_excl` the excluded
/// instruments. Residuals use the original endogenous columns.
pub struct TslsOutput {
    pub beta: DVector<f64>,
    pub se: Vec<f64>,
    pub residuals: Vec<f64>,
    pub n_clusters: usize,
    pub first_stages: Vec<FirstStage>,
    pub degenerate: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn tsls_cluster(
    endog_names: &[String],
    x_endog: &[&[f64]],
    control_names: &[String],
    controls: &[&[f64]],
    instrument_names: &[String],
    z_excl: &[&[f64]],
    y: &[f64],
    weights: Option<&[f64]>,
    cluster_codes: &[u32],
    n_cluster_groups: usize,
    k_total: usize,
) -> Result<TslsOutput> {
    let n = y.len();
    let k_endog = x_endog.len();
    let m = z_excl.len();
    if m < k_endog {
        return Err(Error::validation(format!(
            "under-identified: {m} instruments for {k_endog} endogenous columns"
        )));
    }

    // Full instrument design [Z | controls].
    let z_names: Vec<String> = instrument_names.iter().chain(control_names).cloned().collect();
    let z_cols: Vec<&[f64]> = z_excl.iter().chain(controls).copied().collect();
    let z = Design::new(z_names.clone(), z_cols)?;
    let ztz = z.xtwx(weights);
    let (_, ztz_inv) = solve_normal(&ztz, &DVector::zeros(z.k()), &z.names)
        .map_err(|_| Error::estimation("first-stage design is rank deficient"))?;

    // First stages and fitted endogenous columns. The first-stage model has
    // the same absorbed FE count as the outcome model but its own column
    // count, which shifts the small-sample K accordingly.
    let k_first = k_total + z.k() - (k_endog + controls.len());
    let mut fitted_endog: Vec<Vec<f64>> = Vec::with_capacity(k_endog);
    let mut first_stages = Vec::with_capacity(k_endog);
    for (e, col) in x_endog.iter().enumerate() {
        let ztx = z.xtwv(weights, col);
        let gamma = &ztz_inv * &ztx;
        let fitted = z.fitted(&gamma);
        let fs_resid: Vec<f64> = col.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let fs_cr1 = cr1_covariance(
            &z,
            weights,
            &fs_resid,
            cluster_codes,
            n_cluster_groups,
            &ztz_inv,
            k_first,
        )?;
        // Wald F of the excluded-instrument block.
        let bz = DVector::from_iterator(m, (0..m).map(|j| gamma[j]));
        let vz = fs_cr1.covariance.view((0, 0), (m, m)).into_owned();
        let f_statistic = match vz.clone().cholesky() {
            Some(chol) => {
                let solved = chol.solve(&bz);
                (bz.dot(&solved)) / m as f64
            }
            None => f64::NAN,
        };
        let instrument_coefficients = (0..m)
            .map(|j| {
                (
                    instrument_names[j].clone(),
                    gamma[j],
                    fs_cr1.covariance[(j, j)].max(0.0).sqrt(),
                )
            })
            .collect();
        first_stages.push(FirstStage {
            endogenous: endog_names[e].clone(),
            instrument_coefficients,
            f_statistic,
        });
        fitted_endog.push(fitted);
    }

    // Second stage on [X_hat | controls].
    let x2_names: Vec<String> = endog_names.iter().chain(control_names).cloned().collect();
    let x2_cols: Vec<&[f64]> =
        fitted_endog.iter().map(|c| c.as_slice()).chain(controls.iter().copied()).collect();
    let x2 = Design::new(x2_names.clone(), x2_cols)?;
    let x2tx2 = x2.xtwx(weights);
    let x2ty = x2.xtwv(weights, y);
    let (beta, bread_inv) = solve_normal(&x2tx2, &x2ty, &x2.names)?;

    // Residuals with the original endogenous columns.
    let mut residuals: Vec<f64> = y.to_vec();
    for (j, col) in x_endog.iter().enumerate() {
        let b = beta[j];
        for i in 0..n {
            residuals[i] -= b * col[i];
        }
    }
    for (j, col) in controls.iter().enumerate() {
        let b = beta[k_endog + j];
        for i in 0..n {
            residuals[i] -= b * col[i];
        }
    }
    let y_scale = y.iter().fold(0.0f64, |mx, v| mx.max(v.abs())).max(1e-300);
    let degenerate = residuals.iter().all(|r| r.abs() <= 1e-12 * y_scale);

    let cr1 = cr1_covariance(
        &x2,
        weights,
        &residuals,
        cluster_codes,
        n_cluster_groups,
        &bread_inv,
        k_total,
    )?;
    let se: Vec<f64> = (0..x2.k())
        .map(|j| if degenerate { 0.0 } else { cr1.covariance[(j, j)].max(0.0).sqrt() })
        .collect();

    Ok(TslsOutput {
        beta,
        se,
        residuals,
        n_clusters: cr1.n_clusters,
        first_stages,
        degenerate,
    })
}
