//! Adaptive Gauss–Legendre quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

pub struct AdaptiveGl {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl AdaptiveGl {
    pub fn new(order: usize, rel_tol: f64, abs_tol: f64) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        AdaptiveGl { nodes, weights, rel_tol, abs_tol, max_depth: 40 }
    }

    fn rule(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        h * self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
    }

    /// Integral of `f` over [a, b] by recursive bisection until the two-half estimate agrees
    /// with the whole-interval one.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
        let whole = self.rule(&f, a, b);
        self.recurse(&f, a, b, whole, 0)
    }

    fn recurse(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, depth: u32) -> Result<f64> {
        let c = 0.5 * (a + b);
        let left = self.rule(f, a, c);
        let right = self.rule(f, c, b);
        let both = left + right;
        let err = (both - whole).abs();
        if err <= self.abs_tol.max(self.rel_tol * both.abs()) {
            return Ok(both);
        }
        if depth >= self.max_depth || !err.is_finite() {
            return Err(Error::Quadrature { msg: format!("interval [{a:e}, {b:e}] did not converge"), estimate: both });
        }
        Ok(self.recurse(f, a, c, left, depth + 1)? + self.recurse(f, c, b, right, depth + 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn near_singular_integrand() {
        let q = AdaptiveGl::new(10, 1e-12, 0.0);
        let d = 1e-4;
        let v = q.integrate(|x| 1.0 / (x * x + d * d).sqrt(), -1.0, 1.0).unwrap();
        let exact = 2.0 * (1.0 / d).asinh();
        assert!((v - exact).abs() < 1e-11 * exact);
    }

    #[test]
    fn divergent_integrand_errors() {
        let q = AdaptiveGl::new(4, 1e-12, 0.0);
        assert!(matches!(q.integrate(|x| 1.0 / x, 0.0, 1.0), Err(Error::Quadrature { .. })));
    }
}
