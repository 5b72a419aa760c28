//! Residual checks of the function identities the asymptotic formulas rest
//! on: theta quasi-periodicity, the sn equation, the leading-order system,
//! the two forms of `𝔟`, the derivatives and normalization of the elliptic
//! primitives, and the `cn⁴` integral.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve_periods::BoutrouxData;
use crate::error::Result;
use crate::leading_order::{
    b0, frak_b, frak_b_increments, frak_b_split, max_hole_radius, psi0_with_derivative,
    strip_membership, Frame, StripClass, StripSpec,
};
use crate::primitives::{primitive_with, singularity_distance, PrimitiveKind, DEFAULT_FUZZ};
use crate::quadrature::{adaptive_segment, GaussLegendre};
use crate::special_fn::theta;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityOptions {
    /// Sample points per check.
    pub points: usize,
    /// Strip `Re t ∈ [t_lo, t_hi]`, `|Im t| < kappa0` along the ray.
    pub t_lo: f64,
    pub t_hi: f64,
    pub kappa0: f64,
    /// Central-difference step for the leading-order system.
    pub fd_step: f64,
    /// Added to every primitive; derivative checks must not notice it.
    pub primitive_offset: f64,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        Self {
            points: 100,
            t_lo: 30.0,
            t_hi: 500.0,
            kappa0: 1.0,
            fd_step: 1e-5,
            primitive_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub points: usize,
    pub max_residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: &str, residuals: &[f64], threshold: f64) -> Self {
        let max_residual = residuals.iter().copied().fold(0.0, f64::max);
        let finite = residuals.iter().all(|r| r.is_finite());
        Self {
            name: name.to_string(),
            points: residuals.len(),
            max_residual,
            threshold,
            pass: finite && !residuals.is_empty() && max_residual <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
    pub pass: bool,
}

/// Halton point in `[0, 1)²`.
fn halton(i: usize) -> (f64, f64) {
    let radical = |mut n: usize, base: usize| {
        let mut f = 1.0;
        let mut r = 0.0;
        while n > 0 {
            f /= base as f64;
            r += f * (n % base) as f64;
            n /= base;
        }
        r
    };
    (radical(i + 1, 2), radical(i + 1, 3))
}

/// Points of `Š` spread over the strip by a Halton sequence.
pub fn strip_points(frame: &Frame, opts: &IdentityOptions) -> Result<Vec<Complex64>> {
    let delta0 = (0.5 * max_hole_radius(frame)).min(0.8);
    let strip = StripSpec::new(frame.bd.phi, opts.t_lo, opts.kappa0, delta0, *frame)?;
    let ray = frame.bd.ray();
    let mut out = Vec::with_capacity(opts.points);
    let mut i = 0;
    while out.len() < opts.points && i < 100 * opts.points.max(1) {
        let (a, b) = halton(i);
        i += 1;
        let t = Complex64::new(
            opts.t_lo + (opts.t_hi - opts.t_lo) * a,
            opts.kappa0 * (2.0 * b - 1.0) * 0.999,
        );
        let x = ray * t;
        if strip_membership(x, &strip) == StripClass::InSCheck {
            out.push(x);
        }
    }
    Ok(out)
}

fn theta_check(bd: &BoutrouxData, n: usize) -> Result<IdentityCheck> {
    let ctx = bd.theta()?;
    let tau = ctx.tau;
    let mut res = Vec::new();
    for i in 0..n {
        let (a, b) = halton(i);
        let z = Complex64::new(a - 0.5, 0.6 * tau.im * (b - 0.5));
        let t = theta(z, &ctx)?;
        let t1 = theta(z + 1.0, &ctx)?;
        let tt = theta(z + tau, &ctx)?;
        let expect = (-I * PI * (tau + 2.0 * z)).exp() * t;
        let scale = t.norm().max(1e-300);
        res.push(((t1 - t).norm() / scale).max((tt - expect).norm() / expect.norm().max(1e-300)));
    }
    Ok(IdentityCheck::new("theta_quasi_periodicity", &res, 1e-10))
}

fn sn_check(frame: &Frame, n: usize) -> Result<IdentityCheck> {
    let ell = frame.elliptic();
    let k2 = ell.k * ell.k;
    let mut res = Vec::new();
    let mut i = 0;
    while res.len() < n && i < 100 * n {
        let (a, b) = halton(i);
        i += 1;
        let u = ell.omega_a * a + ell.omega_b * b;
        if ell.pole_distance(u) < 0.2 {
            continue;
        }
        let v = ell.sn_with_derivative(u)?;
        let lhs = v.dsn * v.dsn;
        let rhs = (1.0 - v.sn * v.sn) * (1.0 - k2 * v.sn * v.sn);
        res.push((lhs - rhs).norm() / (1.0 + lhs.norm()));
    }
    let origin = ell.sn_with_derivative(Complex64::new(0.0, 0.0))?;
    res.push(origin.sn.norm().max((origin.dsn - 1.0).norm()));
    Ok(IdentityCheck::new("sn_equation", &res, 1e-8))
}

/// `4ψ₀'² = (1 − ψ₀²)(A − ψ₀²)` and `b₀' = −2(A − ψ₀²) + 4ψ₀'`, with
/// central-difference derivatives.
fn leading_system_checks(frame: &Frame, pts: &[Complex64], h: f64) -> Result<[IdentityCheck; 2]> {
    let a = frame.bd.a;
    let mut r33 = Vec::new();
    let mut r34 = Vec::new();
    for &x in pts {
        let (p, _) = psi0_with_derivative(x, frame)?;
        let (pp, _) = psi0_with_derivative(x + h, frame)?;
        let (pm, _) = psi0_with_derivative(x - h, frame)?;
        let dp = (pp - pm) / (2.0 * h);
        r33.push((4.0 * dp * dp - (1.0 - p * p) * (a - p * p)).norm());
        let db = (b0(x + h, frame)? - b0(x - h, frame)?) / (2.0 * h);
        r34.push((db + 2.0 * (a - p * p) - 4.0 * dp).norm());
    }
    Ok([
        IdentityCheck::new("leading_psi_equation", &r33, 1e-7),
        IdentityCheck::new("leading_b_equation", &r34, 1e-7),
    ])
}

/// `𝔟` directly and from its lattice-reduced value plus increments.
fn frak_b_check(frame: &Frame, pts: &[Complex64]) -> Result<IdentityCheck> {
    let (ia, ib) = frak_b_increments(&frame.bd);
    let mut res = Vec::new();
    for &x in pts {
        let direct = frak_b(x, frame)?;
        let s = frak_b_split(x, frame)?;
        let split = s.reduced + ia * s.m as f64 + ib * s.n as f64;
        res.push((direct - split).norm() / direct.norm().max(1.0));
    }
    Ok(IdentityCheck::new("frak_b_two_forms", &res, 1e-10))
}

/// Fourth-order central differences of each primitive against its
/// integrand, and the normalization at `u = 0`.
fn primitive_checks(bd: &BoutrouxData, n: usize, offset: f64) -> Result<Vec<IdentityCheck>> {
    let ell = bd.elliptic()?;
    let h = 1e-3;
    let prim = |kind, u| -> Result<Complex64> {
        Ok(primitive_with(kind, u, bd, &ell, DEFAULT_FUZZ)? + offset)
    };
    let mut out = Vec::new();
    let mut norm = Vec::new();
    for kind in PrimitiveKind::ALL {
        let mut res = Vec::new();
        let mut i = 0;
        while res.len() < n && i < 100 * n {
            let (a, b) = halton(i);
            i += 1;
            let u = ell.omega_a * (a - 0.5) + ell.omega_b * (b - 0.5);
            if singularity_distance(kind, u, &ell) < 0.3 || ell.pole_distance(u) < 0.3 {
                continue;
            }
            let d = (8.0 * (prim(kind, u + h)? - prim(kind, u - h)?)
                - (prim(kind, u + 2.0 * h)? - prim(kind, u - 2.0 * h)?))
                / (12.0 * h);
            let exact = kind.integrand(ell.sn_with_derivative(u)?.sn, bd.a);
            res.push((d - exact).norm() / exact.norm().max(1.0));
        }
        out.push(IdentityCheck::new(&format!("primitive_derivative_{}", kind.tag()), &res, 1e-7));
        norm.push(prim(kind, Complex64::new(0.0, 0.0))?.norm());
    }
    out.push(IdentityCheck::new("primitive_normalization", &norm, 1e-12));
    Ok(out)
}

/// `k⁴∫₀ᴷ cn⁴u du = (2k² − 1)ℰ_a/6 + k²(1 − k²)Ω_a/12` with `K = Ω_a/4`
/// and `cn⁴ = (1 − sn²)²`.
pub fn cn4_residual(bd: &BoutrouxData) -> Result<f64> {
    let ell = bd.elliptic()?;
    let k2 = bd.k * bd.k;
    let rule = GaussLegendre::new(20);
    let mut f = |u: Complex64| -> Result<Complex64> {
        let s = ell.sn_with_derivative(u)?.sn;
        let c2 = 1.0 - s * s;
        Ok(c2 * c2)
    };
    let lhs = k2 * k2
        * adaptive_segment(&rule, Complex64::new(0.0, 0.0), bd.omega_a / 4.0, 1e-14, 1e-8, &mut f)?;
    let rhs = (2.0 * k2 - 1.0) * bd.e_a / 6.0 + k2 * (1.0 - k2) * bd.omega_a / 12.0;
    Ok((lhs - rhs).norm() / rhs.norm().max(1.0))
}

/// Runs every check for the given frame.
pub fn run_identities(frame: &Frame, opts: &IdentityOptions) -> Result<IdentityReport> {
    let bd = &frame.bd;
    let pts = strip_points(frame, opts)?;
    let mut checks = vec![theta_check(bd, opts.points)?, sn_check(frame, opts.points)?];
    checks.extend(leading_system_checks(frame, &pts, opts.fd_step)?);
    checks.push(frak_b_check(frame, &pts)?);
    checks.extend(primitive_checks(bd, opts.points.min(40), opts.primitive_offset)?);
    checks.push(IdentityCheck::new("cn4_integral", &[cn4_residual(bd)?], 1e-9));
    let pass = checks.iter().all(|c| c.pass);
    Ok(IdentityReport { checks, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_periods::solve_boutroux;

    fn frame() -> Frame {
        let bd = solve_boutroux(0.7, Some(Complex64::new(0.408, 0.422))).unwrap();
        Frame::new(bd, Complex64::new(1.0, 0.5), Complex64::new(0.3, -0.2)).unwrap()
    }

    #[test]
    fn all_identities_hold() {
        let rep = run_identities(&frame(), &IdentityOptions::default()).unwrap();
        for c in &rep.checks {
            assert!(c.pass, "{c:?}");
        }
        assert_eq!(rep.checks.len(), 13);
    }

    #[test]
    fn shifted_constants_only_break_normalization() {
        let opts = IdentityOptions {
            points: 20,
            primitive_offset: 1e-3,
            ..IdentityOptions::default()
        };
        let rep = run_identities(&frame(), &opts).unwrap();
        for c in &rep.checks {
            assert_eq!(c.pass, c.name != "primitive_normalization", "{c:?}");
        }
        assert!(!rep.pass);
    }

    #[test]
    fn strip_points_avoid_holes() {
        let f = frame();
        let pts = strip_points(&f, &IdentityOptions::default()).unwrap();
        assert_eq!(pts.len(), 100);
        let r = (0.5 * max_hole_radius(&f)).min(0.8);
        for x in pts {
            assert!(crate::verify::clear_of_holes(x, &f, r));
        }
    }
}
