//! Singleton dropping and alternating-projection demeaning.

use crate::error::{Error, Result};
use crate::panel::Factor;
use crate::par;

pub const DEMEAN_TOL: f64 = 1e-8;
pub const DEMEAN_MAX_SWEEPS: usize = 10_000;

/// Iteratively removes observations that are the sole member of any fixed-
/// effect group, until none remain. Returns the kept row indices (relative
/// to the input order) and the number of dropped rows.
pub fn drop_singletons(factors: &[&Factor], n_rows: usize) -> Result<(Vec<usize>, usize)> {
    if factors.is_empty() {
        return Err(Error::validation("singleton dropping needs at least one FE dimension"));
    }
    let mut alive: Vec<bool> = vec![true; n_rows];
    let mut n_alive = n_rows;
    loop {
        let mut changed = false;
        for f in factors {
            let mut sizes = vec![0u32; f.n_groups()];
            for (i, &code) in f.codes.iter().enumerate() {
                if alive[i] {
                    sizes[code as usize] += 1;
                }
            }
            for (i, &code) in f.codes.iter().enumerate() {
                if alive[i] && sizes[code as usize] == 1 {
                    alive[i] = false;
                    n_alive -= 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if n_alive == 0 {
        return Err(Error::estimation("no identifying variation: all rows are singletons"));
    }
    let kept: Vec<usize> = (0..n_rows).filter(|&i| alive[i]).collect();
    let dropped = n_rows - n_alive;
    Ok((kept, dropped))
}

/// Group structure prepared for repeated demeaning sweeps.
pub struct FeLayout {
    /// per dimension: group code per row
    codes: Vec<Vec<u32>>,
    /// per dimension: total weight per group
    group_weight: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl FeLayout {
    pub fn new(factors: &[&Factor], weights: Option<&[f64]>) -> Result<Self> {
        let n_rows = factors.first().map(|f| f.len()).unwrap_or(0);
        let mut codes = Vec::with_capacity(factors.len());
        let mut group_weight = Vec::with_capacity(factors.len());
        for f in factors {
            if f.len() != n_rows {
                return Err(Error::validation("FE dimensions must have equal row counts"));
            }
            let mut gw = vec![0.0f64; f.n_groups()];
            for (i, &c) in f.codes.iter().enumerate() {
                gw[c as usize] += weights.map(|w| w[i]).unwrap_or(1.0);
            }
            if gw.iter().any(|&w| w <= 0.0) {
                return Err(Error::validation("every FE group needs positive total weight"));
            }
            codes.push(f.codes.clone());
            group_weight.push(gw);
        }
        Ok(FeLayout { codes, group_weight, n_rows })
    }

    pub fn n_dims(&self) -> usize {
        self.codes.len()
    }

    pub fn group_counts(&self) -> Vec<usize> {
        self.group_weight.iter().map(|g| g.len()).collect()
    }

    /// One sweep over all dimensions for one column; returns the largest
    /// absolute group mean subtracted.
    fn sweep(&self, column: &mut [f64], weights: Option<&[f64]>) -> f64 {
        let mut max_change: f64 = 0.0;
        for (codes, gw) in self.codes.iter().zip(&self.group_weight) {
            let mut sums = vec![0.0f64; gw.len()];
            match weights {
                Some(w) => {
                    for (i, &c) in codes.iter().enumerate() {
                        sums[c as usize] += w[i] * column[i];
                    }
                }
                None => {
                    for (i, &c) in codes.iter().enumerate() {
                        sums[c as usize] += column[i];
                    }
                }
            }
            for (s, &w) in sums.iter_mut().zip(gw) {
                *s /= w;
                let a = s.abs();
                if a > max_change {
                    max_change = a;
                }
            }
            for (i, &c) in codes.iter().enumerate() {
                column[i] -= sums[c as usize];
            }
        }
        max_change
    }

    /// Demeans one column in place to `tol`; returns sweeps used.
    pub fn demean_column(
        &self,
        column: &mut [f64],
        weights: Option<&[f64]>,
        tol: f64,
        max_sweeps: usize,
    ) -> Result<usize> {
        if self.n_dims() == 0 {
            return Ok(0);
        }
        let mut last = f64::INFINITY;
        for sweep in 1..=max_sweeps {
            last = self.sweep(column, weights);
            if last < tol {
                return Ok(sweep);
            }
            // a single dimension projects exactly in one pass
            if self.n_dims() == 1 {
                return Ok(sweep);
            }
        }
        Err(Error::NoConvergence { iterations: max_sweeps, last_delta: last })
    }
}

/// Demeans many columns; columns run independently (in parallel under the
/// `parallel` feature). Returns the maximum sweep count over columns.
pub fn demean_columns(
    layout: &FeLayout,
    columns: Vec<Vec<f64>>,
    weights: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let results: Vec<Result<(Vec<f64>, usize)>> = par::map_vec(columns, |mut col| {
        let sweeps = layout.demean_column(&mut col, weights, tol, max_sweeps)?;
        Ok((col, sweeps))
    });
    let mut out = Vec::with_capacity(results.len());
    let mut max_sweeps_used = 0;
    for r in results {
        let (col, sweeps) = r?;
        max_sweeps_used = max_sweeps_used.max(sweeps);
        out.push(col);
    }
    Ok((out, max_sweeps_used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Factor;

    #[test]
    fn no_singletons_means_no_change() {
        let worker = Factor::from_labels(&["a", "a", "b", "b"]);
        let year = Factor::from_labels(&["1", "2", "1", "2"]);
        let (kept, dropped) = drop_singletons(&[&worker, &year], 4).unwrap();
        assert_eq!(kept, vec![0, 1, 2, 3]);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn lone_worker_row_is_dropped() {
        let worker = Factor::from_labels(&["a", "a", "c"]);
        let (kept, dropped) = drop_singletons(&[&worker], 3).unwrap();
        assert_eq!(kept, vec![0, 1]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn chained_singletons_drop_to_fixpoint() {
        // Dropping row 4 (lone member of firm z) leaves worker e with one
        // row, which then drops too.
        let worker = Factor::from_labels(&["a", "a", "b", "b", "e", "e"]);
        let firm = Factor::from_labels(&["f", "f", "g", "g", "f", "z"]);
        let (kept, dropped) = drop_singletons(&[&worker, &firm], 6).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(kept, vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_result_errors() {
        let worker = Factor::from_labels(&["a", "b", "c"]);
        assert!(drop_singletons(&[&worker], 3).is_err());
    }

    #[test]
    fn one_dimension_demeans_exactly_in_one_pass() {
        let g = Factor::from_labels(&["a", "a", "b", "b"]);
        let layout = FeLayout::new(&[&g], None).unwrap();
        let mut col = vec![1.0, 2.0, 3.0, 4.0];
        let sweeps = layout.demean_column(&mut col, None, DEMEAN_TOL, 10).unwrap();
        assert_eq!(sweeps, 1);
        assert_eq!(col, vec![-0.5, 0.5, -0.5, 0.5]);
    }

    #[test]
    fn constants_are_absorbed_to_zero() {
        let g = Factor::from_labels(&["a", "b", "a", "b"]);
        let h = Factor::from_labels(&["x", "x", "y", "y"]);
        let layout = FeLayout::new(&[&g, &h], None).unwrap();
        let mut col = vec![5.0; 4];
        layout.demean_column(&mut col, None, DEMEAN_TOL, 100).unwrap();
        assert!(col.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weighted_demeaning_uses_weighted_means() {
        let g = Factor::from_labels(&["a", "a"]);
        let layout = FeLayout::new(&[&g], Some(&[3.0, 1.0])).unwrap();
        let mut col = vec![1.0, 5.0];
        layout.demean_column(&mut col, Some(&[3.0, 1.0]), DEMEAN_TOL, 10).unwrap();
        // weighted mean = (3 + 5)/4 = 2 -> residuals (-1, 3)
        assert_eq!(col, vec![-1.0, 3.0]);
    }

    #[test]
    fn two_way_demeaning_matches_dummy_regression() {
        // 6 rows, 2 workers x 3 years; compare against residuals from an
        // explicit dummy OLS computed by hand with nalgebra.
        use nalgebra::{DMatrix, DVector};
        let worker = Factor::from_labels(&["a", "a", "a", "b", "b", "b"]);
        let year = Factor::from_labels(&["1", "2", "3", "1", "2", "3"]);
        let y = vec![1.0, 4.0, 2.0, 8.0, 3.0, 5.0];

        let layout = FeLayout::new(&[&worker, &year], None).unwrap();
        let mut demeaned = y.clone();
        layout.demean_column(&mut demeaned, None, 1e-12, 10_000).unwrap();

        // dummy design: intercept, worker b, year 2, year 3
        let x = DMatrix::from_row_slice(
            6,
            4,
            &[
                1.0, 0.0, 0.0, 0.0,
                1.0, 0.0, 1.0, 0.0,
                1.0, 0.0, 0.0, 1.0,
                1.0, 1.0, 0.0, 0.0,
                1.0, 1.0, 1.0, 0.0,
                1.0, 1.0, 0.0, 1.0,
            ],
        );
        let yv = DVector::from_column_slice(&y);
        let beta = (x.transpose() * &x)
            .cholesky()
            .unwrap()
            .solve(&(x.transpose() * &yv));
        let resid = &yv - &x * beta;
        for i in 0..6 {
            assert!(
                (demeaned[i] - resid[i]).abs() < 1e-8,
                "row {i}: {} vs {}",
                demeaned[i],
                resid[i]
            );
        }
    }
}
