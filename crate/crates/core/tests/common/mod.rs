//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes results through a different route than the
//! library: explicit dummy-variable regression, closed-form IV algebra,
//! hand-built sandwich covariances, and exhaustive partition search.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tightlab::panel::{Factor, Panel};
use tightlab::zones::FlowMatrix;

/// OLS coefficients of `x_cols` from an explicit dummy-variable regression
/// absorbing every FE dimension. The Gram matrix is accumulated through
/// the one-hot structure directly and pseudo-inverted with a symmetric
/// eigendecomposition, so redundant dummies across dimensions are
/// harmless; the coefficients on `x_cols` are unique regardless.
pub fn dummy_ols_coefficients(
    y: &[f64],
    x_cols: &[&[f64]],
    factors: &[&Factor],
) -> Vec<f64> {
    let n = y.len();
    let k = x_cols.len();
    // dummy layout: full set for the first dimension (it spans the
    // intercept), drop-one for the rest
    let mut offsets = Vec::with_capacity(factors.len());
    let mut total = k;
    for (d, f) in factors.iter().enumerate() {
        let skip = usize::from(d > 0);
        offsets.push((total, skip));
        total += f.n_groups() - skip;
    }
    // column index of row i in dimension d, when not the dropped level
    let dummy_col = |d: usize, i: usize| -> Option<usize> {
        let (off, skip) = offsets[d];
        let code = factors[d].codes[i] as usize;
        if code < skip {
            None
        } else {
            Some(off + code - skip)
        }
    };

    let mut gram = DMatrix::zeros(total, total);
    let mut xty = DVector::zeros(total);
    for a in 0..k {
        for b in a..k {
            let s: f64 = (0..n).map(|i| x_cols[a][i] * x_cols[b][i]).sum();
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
        xty[a] = (0..n).map(|i| x_cols[a][i] * y[i]).sum();
    }
    for i in 0..n {
        let cols: Vec<usize> = (0..factors.len()).filter_map(|d| dummy_col(d, i)).collect();
        for &c in &cols {
            for a in 0..k {
                gram[(a, c)] += x_cols[a][i];
                gram[(c, a)] = gram[(a, c)];
            }
            xty[c] += y[i];
            for &c2 in &cols {
                gram[(c, c2)] += 1.0;
            }
        }
    }
    // symmetric pseudo-inverse solve
    let eig = gram.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = 1e-10 * max_ev;
    let mut beta = DVector::zeros(total);
    let ut_y = eig.eigenvectors.transpose() * &xty;
    for j in 0..total {
        if eig.eigenvalues[j].abs() > tol {
            let coef = ut_y[j] / eig.eigenvalues[j];
            for r in 0..total {
                beta[r] += coef * eig.eigenvectors[(r, j)];
            }
        }
    }
    (0..k).map(|j| beta[j]).collect()
}

pub struct RandomPanel {
    pub panel: Panel,
    pub x_names: Vec<String>,
    pub fe_names: Vec<String>,
    pub true_beta: Vec<f64>,
}

/// Random panel with `n_dims` FE dimensions and `k` regressors; outcome is
/// a linear model plus group effects plus noise.
pub fn random_panel(seed: u64, n: usize, n_dims: usize, k: usize) -> RandomPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let true_beta: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let mut factors: Vec<Vec<u32>> = Vec::new();
    let mut effects: Vec<Vec<f64>> = Vec::new();
    for _ in 0..n_dims {
        let groups = rng.gen_range(3..(n / 8).max(4)) as u32;
        factors.push((0..n).map(|_| rng.gen_range(0..groups)).collect());
        effects.push((0..groups).map(|_| rng.gen_range(-1.5..1.5)).collect());
    }
    let x_cols: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..n)
                .map(|i| {
                    // regressors correlate mildly with the first FE dim
                    let base: f64 = StandardNormal.sample(&mut rng);
                    base + 0.3 * effects[0][factors[0][i] as usize]
                })
                .collect()
        })
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = 0.0;
            for j in 0..k {
                v += true_beta[j] * x_cols[j][i];
            }
            for (f, e) in factors.iter().zip(&effects) {
                v += e[f[i] as usize];
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            v + 0.5 * noise
        })
        .collect();

    let mut panel = Panel::new(n);
    panel.add_column("y", y).unwrap();
    let mut x_names = Vec::new();
    for (j, col) in x_cols.into_iter().enumerate() {
        let name = format!("x{j}");
        panel.add_column(&name, col).unwrap();
        x_names.push(name);
    }
    let mut fe_names = Vec::new();
    for (d, codes) in factors.into_iter().enumerate() {
        let labels: Vec<String> = codes.iter().map(|c| format!("g{c}")).collect();
        let name = format!("fe{d}");
        panel.add_factor(&name, Factor::from_labels(&labels)).unwrap();
        fe_names.push(name);
    }
    RandomPanel { panel, x_names, fe_names, true_beta }
}

/// Closed-form exactly-identified 2SLS: beta = (Z'X)^-1 Z'y with
/// Z = [instruments, controls], X = [endogenous, controls].
pub fn closed_form_2sls(
    y: &[f64],
    x_cols: &[&[f64]],
    z_cols: &[&[f64]],
) -> Vec<f64> {
    let n = y.len();
    let k = x_cols.len();
    assert_eq!(z_cols.len(), k, "closed form needs exact identification");
    let mut ztx = DMatrix::zeros(k, k);
    let mut zty = DVector::zeros(k);
    for a in 0..k {
        for b in 0..k {
            ztx[(a, b)] = (0..n).map(|i| z_cols[a][i] * x_cols[b][i]).sum();
        }
        zty[a] = (0..n).map(|i| z_cols[a][i] * y[i]).sum();
    }
    let beta = ztx.lu().solve(&zty).expect("Z'X invertible");
    beta.iter().copied().collect()
}

/// Hand CR1 sandwich for 2SLS: bread from the projected design, scores
/// from residuals at the original regressors.
pub fn hand_cr1_2sls_se(
    y: &[f64],
    x_cols: &[&[f64]],
    z_cols: &[&[f64]],
    beta: &[f64],
    clusters: &[u32],
    k_total: usize,
) -> Vec<f64> {
    let n = y.len();
    let k = x_cols.len();
    let m = z_cols.len();
    // projected design Xhat = Z (Z'Z)^-1 Z'X
    let mut z = DMatrix::zeros(n, m);
    for (j, col) in z_cols.iter().enumerate() {
        for i in 0..n {
            z[(i, j)] = col[i];
        }
    }
    let mut x = DMatrix::zeros(n, k);
    for (j, col) in x_cols.iter().enumerate() {
        for i in 0..n {
            x[(i, j)] = col[i];
        }
    }
    let ztz_inv = (z.transpose() * &z).try_inverse().expect("Z'Z");
    let xhat = &z * ztz_inv * z.transpose() * &x;
    let bread_inv = (xhat.transpose() * &xhat).try_inverse().expect("bread");

    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let mut e = y[i];
            for j in 0..k {
                e -= beta[j] * x[(i, j)];
            }
            e
        })
        .collect();
    let g = clusters.iter().copied().max().unwrap() as usize + 1;
    let mut scores = DMatrix::zeros(g, k);
    for i in 0..n {
        for j in 0..k {
            scores[(clusters[i] as usize, j)] += xhat[(i, j)] * resid[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let gf = g as f64;
    let nf = n as f64;
    let kf = k_total as f64;
    let c = (gf / (gf - 1.0)) * ((nf - 1.0) / (nf - kf));
    let v = &bread_inv * meat * &bread_inv * c;
    (0..k).map(|j| v[(j, j)].max(0.0).sqrt()).collect()
}

/// All set partitions of {0..n} as restricted-growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    fn recurse(current: &mut Vec<usize>, pos: usize, max_used: usize, out: &mut Vec<Vec<usize>>) {
        let n = current.len();
        if pos == n {
            out.push(current.clone());
            return;
        }
        for v in 0..=max_used + 1 {
            current[pos] = v;
            recurse(current, pos + 1, max_used.max(v), out);
        }
    }
    if n == 0 {
        return out;
    }
    current[0] = 0;
    recurse(&mut current, 1, 0, &mut out);
    out
}

/// Exhaustive maximum modularity over every partition (n <= 8 feasible).
pub fn exhaustive_max_modularity(flows: &FlowMatrix) -> (Vec<usize>, f64) {
    let n = flows.len();
    assert!(n <= 8, "exhaustive search is for n <= 8");
    let mut best_q = f64::NEG_INFINITY;
    let mut best = Vec::new();
    for partition in set_partitions(n) {
        let q = tightlab::zones::modularity(flows, &partition).expect("modularity");
        if q > best_q {
            best_q = q;
            best = partition;
        }
    }
    (best, best_q)
}

/// Canonical form of a zone assignment: each zone relabeled to its first
/// member index, making assignments comparable.
pub fn canonical_assignment(assignment: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(assignment.len());
    for (i, &z) in assignment.iter().enumerate() {
        let id = *map.entry(z).or_insert(i);
        out.push(id);
    }
    out
}
