//! Right-censored normal regression by maximum likelihood.
//!
//! Fits y = x'b + e, e ~ N(0, s^2), where rows flagged censored are only
//! known to lie at or above the censor point. The likelihood is maximized
//! by damped Newton in the (b/s, 1/s) parameterization, which makes the
//! objective globally concave.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Maximum-likelihood censored-regression fit.
#[derive(Debug, Clone)]
pub struct TobitFit {
    pub coefficients: Vec<f64>,
    pub sigma: f64,
    /// Asymptotic standard errors of (coefficients, sigma), from the
    /// inverse observed information mapped back to the original scale.
    pub se: Vec<f64>,
    pub sigma_se: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_censored: usize,
    pub n_uncensored: usize,
}

impl TobitFit {
    /// Linear index x'b for one row.
    pub fn linear_index(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-10;

/// Standard normal density.
fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper-tail probability 1 - Phi(z).
fn survival(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Upper-tail hazard phi(z) / (1 - Phi(z)), stable for large z.
pub fn normal_hazard_upper(z: f64) -> f64 {
    if z < 25.0 {
        phi(z) / survival(z)
    } else {
        // asymptotic Mills ratio: 1 - Phi(z) ~ phi(z)/z (1 - 1/z^2 + 3/z^4 - 15/z^6)
        let z2 = z * z;
        z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2))
    }
}

/// Censored-normal log-likelihood at (beta, sigma) for given data.
/// Also the brute-force oracle target used in tests.
pub fn log_likelihood(
    y: &[f64],
    x: &DMatrix<f64>,
    limit: f64,
    censored: &[bool],
    beta: &[f64],
    sigma: f64,
) -> f64 {
    let k = x.ncols();
    let mut ll = 0.0;
    for (i, (&yi, &ci)) in y.iter().zip(censored).enumerate() {
        let mut mu = 0.0;
        for j in 0..k {
            mu += x[(i, j)] * beta[j];
        }
        if ci {
            ll += survival((limit - mu) / sigma).max(f64::MIN_POSITIVE).ln();
        } else {
            let z = (yi - mu) / sigma;
            ll += -sigma.ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
    }
    ll
}

/// Fits the censored regression. `x` is row-major (n x k). Rows with
/// `censored[i]` contribute the upper-tail term at `limit`; the rest the
/// normal density at their observed outcome.
pub fn fit_tobit(y: &[f64], x: &DMatrix<f64>, limit: f64, censored: &[bool]) -> Result<TobitFit> {
    let n = y.len();
    let k = x.ncols();
    if x.nrows() != n || censored.len() != n {
        return Err(Error::validation("y, x, and censored flags must align"));
    }
    let n_censored = censored.iter().filter(|&&c| c).count();
    let n_uncensored = n - n_censored;
    if n_uncensored == 0 {
        return Err(Error::estimation("no uncensored observations"));
    }

    // Start from OLS on the uncensored subsample.
    let (beta0, sigma0) = uncensored_ols(y, x, censored, n_uncensored)?;

    // Work in (d, g) = (beta/sigma, 1/sigma).
    let mut theta = DVector::zeros(k + 1);
    let g0 = 1.0 / sigma0.max(1e-8);
    for j in 0..k {
        theta[j] = beta0[j] * g0;
    }
    theta[k] = g0;

    let mut ll = concentrated_ll(y, x, limit, censored, &theta);
    let start_ll = ll;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_grad = f64::INFINITY;
    // Objective evaluations carry summation noise of this order, so step
    // acceptance and the stall check are noise-banded.
    let noise = 1e-12 * (1.0 + ll.abs());

    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let (grad, hess) = score_and_hessian(y, x, limit, censored, &theta);
        last_grad = grad.amax();
        // gradient tolerance scales with the objective magnitude
        if last_grad < GRAD_TOL * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        // Newton step on the concave objective; ridge the Hessian if the
        // solve fails numerically.
        let step = match (-&hess).cholesky().map(|c| c.solve(&grad)) {
            Some(s) => s,
            None => {
                let mut ridged = -hess.clone();
                for d in 0..=k {
                    ridged[(d, d)] += 1e-8 * (1.0 + ridged[(d, d)].abs());
                }
                ridged.cholesky().map(|c| c.solve(&grad)).ok_or_else(|| {
                    Error::estimation("tobit Hessian is singular; regressors may be collinear")
                })?
            }
        };
        // Newton decrement: expected gain of the full step. Once it falls
        // into evaluation noise, the optimum is resolved as far as f64 goes.
        let decrement = grad.dot(&step);
        if decrement / 2.0 <= 10.0 * noise {
            converged = true;
            break;
        }

        // Backtracking with an Armijo condition, tolerant of evaluation
        // noise; 1/sigma must stay positive.
        let mut improved = false;
        let mut t = 1.0f64;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            if cand[k] > 0.0 {
                let cand_ll = concentrated_ll(y, x, limit, censored, &cand);
                if cand_ll >= ll + 1e-4 * t * decrement - noise {
                    theta = cand;
                    ll = cand_ll;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let gamma = theta[k];
    let sigma = 1.0 / gamma;
    let coefficients: Vec<f64> = (0..k).map(|j| theta[j] * sigma).collect();

    // Standard errors: delta method from the (d, g) information matrix.
    let (_, hess) = score_and_hessian(y, x, limit, censored, &theta);
    let (se, sigma_se) = match (-hess).try_inverse() {
        Some(cov_dg) => {
            // beta_j = d_j / g, sigma = 1 / g
            let mut jac = DMatrix::zeros(k + 1, k + 1);
            for j in 0..k {
                jac[(j, j)] = sigma;
                jac[(j, k)] = -theta[j] * sigma * sigma;
            }
            jac[(k, k)] = -sigma * sigma;
            let cov = &jac * cov_dg * jac.transpose();
            let se = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
            (se, cov[(k, k)].max(0.0).sqrt())
        }
        None => (vec![f64::NAN; k], f64::NAN),
    };

    let fit = TobitFit {
        coefficients,
        sigma,
        se,
        sigma_se,
        log_likelihood: ll,
        iterations,
        converged,
        n_censored,
        n_uncensored,
    };
    if !converged {
        return Err(Error::NoConvergence { iterations, last_delta: last_grad });
    }
    debug_assert!(ll >= start_ll - 1e-9);
    Ok(fit)
}

fn uncensored_ols(
    y: &[f64],
    x: &DMatrix<f64>,
    censored: &[bool],
    n_uncensored: usize,
) -> Result<(Vec<f64>, f64)> {
    let k = x.ncols();
    let mut xu = DMatrix::zeros(n_uncensored, k);
    let mut yu = DVector::zeros(n_uncensored);
    let mut r = 0;
    for (i, &c) in censored.iter().enumerate() {
        if !c {
            for j in 0..k {
                xu[(r, j)] = x[(i, j)];
            }
            yu[r] = y[i];
            r += 1;
        }
    }
    let xtx = xu.transpose() * &xu;
    let xty = xu.transpose() * &yu;
    let beta = xtx.cholesky().map(|c| c.solve(&xty)).ok_or_else(|| {
        Error::estimation("design matrix is rank deficient on the uncensored subsample")
    })?;
    let resid = &yu - &xu * &beta;
    let sigma = (resid.dot(&resid) / n_uncensored as f64).sqrt().max(1e-8);
    Ok((beta.iter().copied().collect(), sigma))
}

fn concentrated_ll(
    y: &[f64],
    x: &DMatrix<f64>,
    limit: f64,
    censored: &[bool],
    theta: &DVector<f64>,
) -> f64 {
    let k = x.ncols();
    let gamma = theta[k];
    let mut ll = 0.0;
    for (i, (&yi, &ci)) in y.iter().zip(censored).enumerate() {
        let mut eta = 0.0;
        for j in 0..k {
            eta += x[(i, j)] * theta[j];
        }
        if ci {
            let c = gamma * limit - eta;
            ll += survival(c).max(f64::MIN_POSITIVE).ln();
        } else {
            let z = gamma * yi - eta;
            ll += gamma.ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
    }
    ll
}

/// Gradient and Hessian of the reparameterized log-likelihood.
fn score_and_hessian(
    y: &[f64],
    x: &DMatrix<f64>,
    limit: f64,
    censored: &[bool],
    theta: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = y.len();
    let k = x.ncols();
    let gamma = theta[k];
    let mut grad = DVector::zeros(k + 1);
    let mut hess = DMatrix::zeros(k + 1, k + 1);

    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..k {
            eta += x[(i, j)] * theta[j];
        }
        if censored[i] {
            let c = gamma * limit - eta;
            let lam = normal_hazard_upper(c);
            let dlam = lam * (lam - c); // always in (0, 1)
            for a in 0..k {
                grad[a] += lam * x[(i, a)];
                for b in 0..k {
                    hess[(a, b)] -= dlam * x[(i, a)] * x[(i, b)];
                }
                hess[(a, k)] += dlam * limit * x[(i, a)];
                hess[(k, a)] += dlam * limit * x[(i, a)];
            }
            grad[k] -= lam * limit;
            hess[(k, k)] -= dlam * limit * limit;
        } else {
            let z = gamma * y[i] - eta;
            for a in 0..k {
                grad[a] += z * x[(i, a)];
                for b in 0..k {
                    hess[(a, b)] -= x[(i, a)] * x[(i, b)];
                }
                hess[(a, k)] += y[i] * x[(i, a)];
                hess[(k, a)] += y[i] * x[(i, a)];
            }
            grad[k] += 1.0 / gamma - z * y[i];
            hess[(k, k)] -= 1.0 / (gamma * gamma) + y[i] * y[i];
        }
    }
    (grad, hess)
}
