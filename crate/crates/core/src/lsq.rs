//! Levenberg–Marquardt least squares with a finite-difference Jacobian.
//!
//! Parameter transforms (log for positive quantities, logistic for bounded ones)
//! are the caller's job; the solver works on unconstrained coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub ftol: f64,
    /// Stop when the step is below `xtol * (|x| + xtol)`.
    pub xtol: f64,
    pub gtol: f64,
    pub lambda0: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 300, ftol: 1e-14, xtol: 1e-13, gtol: 1e-14, lambda0: 1e-3, fd_step: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    /// Cost after each accepted iteration.
    pub trace: Vec<f64>,
    /// Jacobian at the solution (rows = residuals).
    pub jacobian: DMatrix<f64>,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut j = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        xp[k] = x[k] + step;
        let rp = f(&xp);
        xp[k] = x[k] - step;
        let rm = f(&xp);
        xp[k] = x[k];
        match (rp, rm) {
            (Ok(rp), Ok(rm)) => {
                for i in 0..r0.len() {
                    j[(i, k)] = (rp[i] - rm[i]) / (2.0 * step);
                }
            }
            (Ok(rp), Err(_)) => {
                for i in 0..r0.len() {
                    j[(i, k)] = (rp[i] - r0[i]) / step;
                }
            }
            (Err(_), Ok(rm)) => {
                for i in 0..r0.len() {
                    j[(i, k)] = (r0[i] - rm[i]) / step;
                }
            }
            (Err(e), Err(_)) => return Err(e),
        }
    }
    Ok(j)
}

pub fn levenberg_marquardt<F>(f: F, x0: &[f64], opts: &LmOptions) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    if r.len() < x.len() {
        return Err(Error::Precondition(format!("{} residuals for {} parameters", r.len(), x.len())));
    }
    let mut cost = cost_of(&r);
    let mut lambda = opts.lambda0;
    let mut trace = vec![cost];
    let mut jac = jacobian(&f, &x, &r, opts.fd_step)?;
    for iter in 1..=opts.max_iter {
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= opts.gtol * (1.0 + cost) {
            return Ok(LmResult { x, residuals: r, cost, iterations: iter, trace, jacobian: jac });
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..x.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let step = match a.clone().cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial = f(&xn).ok().filter(|v| v.iter().all(|e| e.is_finite()));
            let cn = trial.as_ref().map_or(f64::INFINITY, |v| cost_of(v));
            if cn <= cost {
                let small_step = step.iter().zip(x.iter()).all(|(s, xv)| s.abs() <= opts.xtol * (xv.abs() + opts.xtol));
                let rel = (cost - cn) / cost.max(f64::MIN_POSITIVE);
                x = xn;
                r = trial.unwrap_or_default();
                cost = cn;
                trace.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small_step || rel < opts.ftol || cost == 0.0 {
                    let jac = jacobian(&f, &x, &r, opts.fd_step)?;
                    return Ok(LmResult { x, residuals: r, cost, iterations: iter, trace, jacobian: jac });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: at a minimum within numerical precision
            return Ok(LmResult { x, residuals: r, cost, iterations: iter, trace, jacobian: jac });
        }
        jac = jacobian(&f, &x, &r, opts.fd_step)?;
    }
    Err(Error::Fit { msg: format!("no convergence in {} iterations (cost {cost:e})", opts.max_iter), trace })
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
