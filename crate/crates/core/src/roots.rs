//! Scalar root finding on bracketed intervals.

use crate::error::{Error, Result};

/// Bisection to machine precision. `fa` and `fb` must have opposite signs (or one is zero).
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> Result<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Solver(format!("interval [{a}, {b}] does not bracket a root")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a.min(b) || mid >= a.max(b) {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// All sign-change roots of `f` on `[lo, hi]` resolved on an `n`-interval grid.
pub fn scan_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    scan_roots_tol(f, lo, hi, n, 0.0)
}

/// As [`scan_roots`], treating grid nodes with |f| <= `ztol` as roots.
pub fn scan_roots_tol(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize, ztol: f64) -> Result<Vec<f64>> {
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|k| if k == n { hi } else { lo + h * k as f64 }).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).map(|v| if v.abs() <= ztol { 0.0 } else { v }).collect();
    let mut out: Vec<f64> = Vec::new();
    for k in 0..n {
        let (fa, fb) = (fs[k], fs[k + 1]);
        if fa == 0.0 {
            push_unique(&mut out, xs[k]);
        } else if fb != 0.0 && fa.signum() != fb.signum() {
            push_unique(&mut out, bisect(&f, xs[k], xs[k + 1])?);
        }
    }
    if fs[n] == 0.0 {
        push_unique(&mut out, xs[n]);
    }
    Ok(out)
}

fn push_unique(v: &mut Vec<f64>, x: f64) {
    if v.last().is_none_or(|&y| (x - y).abs() > 1e-12) {
        v.push(x);
    }
}

/// Root nearest to `seed` inside `[lo, hi]`, found by stepping outward from the seed.
pub fn nearest_root(f: impl Fn(f64) -> f64, seed: f64, lo: f64, hi: f64, step: f64) -> Result<f64> {
    let seed = seed.clamp(lo, hi);
    let f0 = f(seed);
    if f0 == 0.0 {
        return Ok(seed);
    }
    let (mut up_x, mut up_f) = (seed, f0);
    let (mut dn_x, mut dn_f) = (seed, f0);
    loop {
        let can_up = up_x < hi;
        let can_dn = dn_x > lo;
        if !can_up && !can_dn {
            return Err(Error::NoSolution(format!("no root in [{lo}, {hi}]")));
        }
        if can_up {
            let x = (up_x + step).min(hi);
            let fx = f(x);
            if fx == 0.0 {
                return Ok(x);
            }
            if fx.signum() != up_f.signum() {
                return bisect(&f, up_x, x);
            }
            up_x = x;
            up_f = fx;
        }
        if can_dn {
            let x = (dn_x - step).max(lo);
            let fx = f(x);
            if fx == 0.0 {
                return Ok(x);
            }
            if fx.signum() != dn_f.signum() {
                return bisect(&f, x, dn_x);
            }
            dn_x = x;
            dn_f = fx;
        }
    }
}
