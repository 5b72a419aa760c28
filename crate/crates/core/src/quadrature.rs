//! Gauss–Legendre rules and composite/adaptive quadrature along straight
//! complex segments.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{PvError, Result};

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on `P_n` from the Chebyshev-like initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫_a^b f(z) dz` along the straight segment.
    pub fn segment<F: FnMut(Complex64) -> Complex64>(
        &self,
        a: Complex64,
        b: Complex64,
        mut f: F,
    ) -> Complex64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += f(mid + half * *x) * *w;
        }
        acc * half
    }

    /// Fallible variant of [`segment`](Self::segment).
    pub fn try_segment<F: FnMut(Complex64) -> Result<Complex64>>(
        &self,
        a: Complex64,
        b: Complex64,
        mut f: F,
    ) -> Result<Complex64> {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += f(mid + half * *x)? * *w;
        }
        Ok(acc * half)
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive bisection on a segment: a piece is accepted when the rule on
/// the whole piece agrees with the sum over its halves.
pub fn adaptive_segment<F>(
    rule: &GaussLegendre,
    a: Complex64,
    b: Complex64,
    abs_tol: f64,
    min_len: f64,
    f: &mut F,
) -> Result<Complex64>
where
    F: FnMut(Complex64) -> Result<Complex64>,
{
    let whole = rule.try_segment(a, b, &mut *f)?;
    adaptive_inner(rule, a, b, whole, abs_tol, min_len, f, 0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_inner<F>(
    rule: &GaussLegendre,
    a: Complex64,
    b: Complex64,
    whole: Complex64,
    abs_tol: f64,
    min_len: f64,
    f: &mut F,
    depth: usize,
) -> Result<Complex64>
where
    F: FnMut(Complex64) -> Result<Complex64>,
{
    let m = 0.5 * (a + b);
    let left = rule.try_segment(a, m, &mut *f)?;
    let right = rule.try_segment(m, b, &mut *f)?;
    let err = (left + right - whole).norm();
    if err <= abs_tol {
        return Ok(left + right);
    }
    if (b - a).norm() < min_len || depth > 40 {
        return Err(PvError::QuadratureNotConverged { estimate: err });
    }
    let l = adaptive_inner(rule, a, m, left, 0.5 * abs_tol, min_len, f, depth + 1)?;
    let r = adaptive_inner(rule, m, b, right, 0.5 * abs_tol, min_len, f, depth + 1)?;
    Ok(l + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_integrate_polynomials() {
        for n in [1, 2, 5, 16, 64] {
            let g = GaussLegendre::new(n);
            let s: f64 = g.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
            // exact for degree 2n-1
            let deg = 2 * n - 1;
            let v: f64 = g
                .nodes
                .iter()
                .zip(&g.weights)
                .map(|(x, w)| w * x.powi(deg as i32 - 1))
                .sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((v - exact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn complex_segment_exponential() {
        let g = GaussLegendre::new(20);
        let a = Complex64::new(0.0, 0.0);
        let b = Complex64::new(1.0, 2.0);
        let v = g.segment(a, b, |z| z.exp());
        assert!((v - (b.exp() - a.exp())).norm() < 1e-13);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let g = GaussLegendre::new(10);
        let c = Complex64::new(0.5, 0.01);
        let mut f = |z: Complex64| Ok(1.0 / (z - c));
        let a = Complex64::new(0.0, 0.0);
        let b = Complex64::new(1.0, 0.0);
        let v = adaptive_segment(&g, a, b, 1e-12, 1e-9, &mut f).unwrap();
        let exact = (b - c).ln() - (a - c).ln();
        assert!((v - exact).norm() < 1e-10);
    }
}
