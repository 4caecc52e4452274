//! Damped least squares (Levenberg–Marquardt) with a finite-difference
//! Jacobian.
//!
//! Used by the HOM histogram fit and the Lorentzian line fit. Residuals are
//! supplied already weighted, so the objective is `Σ r_i²`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Converged when every parameter moves by less than this fraction of
    /// its magnitude (or scale) in one step.
    pub rel_tol: f64,
    /// Typical magnitude of each parameter, used for step sizes and the
    /// convergence test near zero.
    pub scales: Vec<f64>,
    /// Inclusive box constraints; steps are clipped into the box.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LmOptions {
    pub fn new(n_params: usize) -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-8,
            scales: vec![1.0; n_params],
            lower: vec![f64::NEG_INFINITY; n_params],
            upper: vec![f64::INFINITY; n_params],
        }
    }

    pub fn scales(mut self, scales: &[f64]) -> Self {
        self.scales = scales.to_vec();
        self
    }

    pub fn bounds(mut self, lower: &[f64], upper: &[f64]) -> Self {
        self.lower = lower.to_vec();
        self.upper = upper.to_vec();
        self
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    /// Parameter covariance scaled by the reduced chi-square.
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl FitOutcome {
    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn project(p: &mut [f64], opts: &LmOptions) {
    for (i, v) in p.iter_mut().enumerate() {
        *v = v.clamp(opts.lower[i], opts.upper[i]);
    }
}

fn jacobian<F>(f: &F, p: &[f64], r0: &[f64], opts: &LmOptions) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(opts.scales[j]);
        // Central difference, falling back to one-sided at a bound.
        let up = (p[j] + h).min(opts.upper[j]);
        let dn = (p[j] - h).max(opts.lower[j]);
        if up <= dn {
            return Err(Error::invalid(format!(
                "parameter {j} is pinned by its bounds"
            )));
        }
        q[j] = up;
        let r_up = f(&q);
        q[j] = dn;
        let r_dn = f(&q);
        q[j] = p[j];
        if r_up.len() != m || r_dn.len() != m {
            return Err(Error::invalid(
                "residual length changed between evaluations",
            ));
        }
        for i in 0..m {
            jac[(i, j)] = (r_up[i] - r_dn[i]) / (up - dn);
        }
    }
    Ok(jac)
}

/// Minimizes `Σ f(p)_i²` starting from `p0`.
pub fn levenberg_marquardt<F>(f: F, p0: &[f64], opts: &LmOptions) -> Result<FitOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    if n == 0 {
        return Err(Error::invalid("no parameters to fit"));
    }
    if opts.scales.len() != n || opts.lower.len() != n || opts.upper.len() != n {
        return Err(Error::invalid(
            "option vectors must match the parameter count",
        ));
    }
    let mut p = p0.to_vec();
    project(&mut p, opts);
    let mut r = f(&p);
    if r.len() < n {
        return Err(Error::invalid(format!(
            "{} residuals cannot constrain {n} parameters",
            r.len()
        )));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(
            "residuals are not finite at the starting point",
        ));
    }
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    let mut jac = jacobian(&f, &p, &r, opts)?;
    while iterations < opts.max_iters {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, opts);
            let small = trial
                .iter()
                .zip(&p)
                .enumerate()
                .all(|(i, (t, q))| (t - q).abs() <= opts.rel_tol * q.abs().max(opts.scales[i]));
            let r_trial = f(&trial);
            let c_trial = cost(&r_trial);
            if c_trial.is_finite() && c_trial <= c {
                p = trial;
                r = r_trial;
                c = c_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            if small {
                // No improving step exists at this scale: a minimum.
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations,
                detail: format!("damping diverged at chi2 = {c:.6e}, params = {p:?}"),
            });
        }
        jac = jacobian(&f, &p, &r, opts)?;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            detail: format!("iteration cap reached at chi2 = {c:.6e}, params = {p:?}"),
        });
    }

    let jac = jacobian(&f, &p, &r, opts)?;
    let jtj = jac.transpose() * &jac;
    let dof = r.len() - n;
    let s2 = if dof > 0 { c / dof as f64 } else { 0.0 };
    let covariance = jtj
        .clone()
        .try_inverse()
        .map(|inv| inv * s2)
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    let std_errors = (0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    log::debug!("fit converged in {iterations} iterations, chi2 = {c:.6e}");
    Ok(FitOutcome {
        params: p,
        covariance,
        std_errors,
        chi2: c,
        dof,
        iterations,
    })
}
