//! The leading-order elliptic frame `ψ₀`, `b₀`, `𝔟` attached to a phase
//! `φ`, and the geometry of the strip `S` with its pole lattices.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve_periods::BoutrouxData;
use crate::error::{PvError, Result};
use crate::special_fn::{log_theta, EllipticContext, LogTheta, SnValue};

/// Location of the frame on the elliptic lattice plus the additive constant
/// of the Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    /// Reduced to `{s₁·2Ω_a + s₂·2Ω_b : s₁, s₂ ∈ [0, 1)}`.
    pub x0: Complex64,
    pub beta0: Complex64,
    /// `β₀ − 2ℰ_a x₀/Ω_a`.
    pub b0_at_x0: Complex64,
    pub bd: BoutrouxData,
    ell: EllipticContext,
}

/// Frame parameters in serializable form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameParams {
    pub x0: Complex64,
    pub beta0: Complex64,
}

/// Real coordinates of `z` in the basis `(e1, e2)`.
fn lattice_coords(z: Complex64, e1: Complex64, e2: Complex64) -> (f64, f64) {
    let det = e1.re * e2.im - e1.im * e2.re;
    let s = (z.re * e2.im - z.im * e2.re) / det;
    let t = (e1.re * z.im - e1.im * z.re) / det;
    (s, t)
}

impl Frame {
    /// Reduces `x0` into the fundamental cell of `2Ω_aℤ + 2Ω_bℤ`. A shift by
    /// `2Ω_b` moves `ϑ'/ϑ((x − x₀)/(2Ω_a))` by `2πi`, so `β₀` is corrected to
    /// keep `b₀` unchanged as a function of `x`.
    pub fn new(bd: BoutrouxData, x0: Complex64, beta0: Complex64) -> Result<Self> {
        let ell = bd.elliptic()?;
        let (e1, e2) = (2.0 * bd.omega_a, 2.0 * bd.omega_b);
        let (s, t) = lattice_coords(x0, e1, e2);
        let (m, n) = (s.floor(), t.floor());
        let x0r = x0 - e1 * m - e2 * n;
        let beta0 = beta0 - Complex64::new(0.0, 16.0 * std::f64::consts::PI * n) / bd.omega_a;
        Ok(Self {
            x0: x0r,
            beta0,
            b0_at_x0: beta0 - 2.0 * bd.e_a * x0r / bd.omega_a,
            bd,
            ell,
        })
    }

    pub fn params(&self) -> FrameParams {
        FrameParams {
            x0: self.x0,
            beta0: self.beta0,
        }
    }

    pub fn elliptic(&self) -> &EllipticContext {
        &self.ell
    }

    pub fn k(&self) -> Complex64 {
        self.bd.k
    }

    fn log_theta_at(&self, x: Complex64) -> Result<LogTheta> {
        log_theta((x - self.x0) / (2.0 * self.bd.omega_a), &self.ell.theta)
    }
}

/// `ψ₀(x)` and `dψ₀/dx`.
pub fn psi0_with_derivative(x: Complex64, frame: &Frame) -> Result<(Complex64, Complex64)> {
    let SnValue { sn, dsn } = frame.ell.sn_with_derivative(0.5 * (x - frame.x0))?;
    Ok((frame.k() * sn, 0.5 * frame.k() * dsn))
}

/// `ψ₀(x) = A^{1/2} sn((x − x₀)/2; A^{1/2})`.
pub fn psi0(x: Complex64, frame: &Frame) -> Result<Complex64> {
    Ok(psi0_with_derivative(x, frame)?.0)
}

/// `b₀(x) = β₀ − 2ℰ_a x/Ω_a − (8/Ω_a) ϑ'/ϑ((x − x₀)/(2Ω_a))`.
pub fn b0(x: Complex64, frame: &Frame) -> Result<Complex64> {
    let bd = &frame.bd;
    let lt = frame.log_theta_at(x)?;
    Ok(frame.beta0 - 2.0 * bd.e_a * x / bd.omega_a - 8.0 * lt.l1 / bd.omega_a)
}

/// `𝔟(x) = (ℰ_a/4)(x − x₀) + ϑ'/ϑ((x − x₀)/(2Ω_a))`.
pub fn frak_b(x: Complex64, frame: &Frame) -> Result<Complex64> {
    let lt = frame.log_theta_at(x)?;
    Ok(0.25 * frame.bd.e_a * (x - frame.x0) + lt.l1)
}

/// `𝔟` split into the elliptic part, evaluated at the lattice-reduced point,
/// and the lattice coordinates `(m, n)` of the shift `x − x_r = 2mΩ_a + 2nΩ_b`.
/// `𝔟(x) = 𝔟(x_r) + m·ℰ_aΩ_a/2 + n·(ℰ_aΩ_b/2 − 2πi)`; the increments are
/// returned separately so long sums never accumulate them numerically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFrakB {
    pub reduced: Complex64,
    pub m: i64,
    pub n: i64,
}

pub fn frak_b_split(x: Complex64, frame: &Frame) -> Result<SplitFrakB> {
    let bd = &frame.bd;
    let z = (x - frame.x0) / (2.0 * bd.omega_a);
    let (zr, m, n) = frame.ell.theta.reduce(z);
    let lt = log_theta(zr, &frame.ell.theta)?;
    Ok(SplitFrakB {
        reduced: 0.5 * bd.e_a * bd.omega_a * zr + lt.l1,
        m,
        n,
    })
}

/// Increments of `𝔟` under `x ↦ x + 2Ω_a` and `x ↦ x + 2Ω_b`.
pub fn frak_b_increments(bd: &BoutrouxData) -> (Complex64, Complex64) {
    (
        0.5 * bd.e_a * bd.omega_a,
        0.5 * bd.e_a * bd.omega_b - Complex64::new(0.0, 2.0 * std::f64::consts::PI),
    )
}

/// A rectangle `{e^{iφ} t : t_lo ≤ Re t ≤ t_hi, |Im t| ≤ half_width}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayWindow {
    pub phi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub half_width: f64,
}

impl RayWindow {
    pub fn contains(&self, x: Complex64) -> bool {
        let t = x * Complex64::from_polar(1.0, -self.phi);
        t.re >= self.t_lo && t.re <= self.t_hi && t.im.abs() <= self.half_width
    }

    fn corners(&self) -> [Complex64; 4] {
        let e = Complex64::from_polar(1.0, self.phi);
        let w = self.half_width;
        [
            e * Complex64::new(self.t_lo, -w),
            e * Complex64::new(self.t_hi, -w),
            e * Complex64::new(self.t_hi, w),
            e * Complex64::new(self.t_lo, w),
        ]
    }
}

/// Points `offset + i·e1 + j·e2` inside the window.
fn enumerate_lattice(
    win: &RayWindow,
    offset: Complex64,
    e1: Complex64,
    e2: Complex64,
) -> Vec<Complex64> {
    let (mut s_lo, mut s_hi, mut t_lo, mut t_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in win.corners() {
        let (s, t) = lattice_coords(c - offset, e1, e2);
        s_lo = s_lo.min(s);
        s_hi = s_hi.max(s);
        t_lo = t_lo.min(t);
        t_hi = t_hi.max(t);
    }
    let mut out = Vec::new();
    for i in (s_lo.floor() as i64)..=(s_hi.ceil() as i64) {
        for j in (t_lo.floor() as i64)..=(t_hi.ceil() as i64) {
            let p = offset + e1 * i as f64 + e2 * j as f64;
            if win.contains(p) {
                out.push(p);
            }
        }
    }
    out
}

/// Distance from `z` to the nearest point of `offset + e1ℤ + e2ℤ`.
fn lattice_distance(z: Complex64, offset: Complex64, e1: Complex64, e2: Complex64) -> f64 {
    let (s, t) = lattice_coords(z - offset, e1, e2);
    let (s0, t0) = (s.round(), t.round());
    let mut best = f64::INFINITY;
    for di in -2..=2 {
        for dj in -2..=2 {
            let p = offset + e1 * (s0 + di as f64) + e2 * (t0 + dj as f64);
            best = best.min((z - p).norm());
        }
    }
    best
}

/// `𝒫₀ = x₀ + Ω_aℤ + Ω_b(2ℤ + 1)` as `(offset, e1, e2)`.
fn p0_lattice(frame: &Frame) -> (Complex64, Complex64, Complex64) {
    let bd = &frame.bd;
    (frame.x0 + bd.omega_b, bd.omega_a, 2.0 * bd.omega_b)
}

/// `𝒬`: `sn((σ − x₀)/2) ∈ {±1, ±A^{−1/2}}`, i.e. `x₀ + Ω_a/2 + Ω_aℤ + Ω_bℤ`.
fn q_lattice(frame: &Frame) -> (Complex64, Complex64, Complex64) {
    let bd = &frame.bd;
    (frame.x0 + 0.5 * bd.omega_a, bd.omega_a, bd.omega_b)
}

/// Points of `𝒫₀` and `𝒬` inside the window.
pub fn pole_lattice(frame: &Frame, window: &RayWindow) -> (Vec<Complex64>, Vec<Complex64>) {
    let (o, e1, e2) = p0_lattice(frame);
    let p = enumerate_lattice(window, o, e1, e2);
    let (o, e1, e2) = q_lattice(frame);
    let q = enumerate_lattice(window, o, e1, e2);
    (p, q)
}

/// Distance from `x` to the nearest point of `𝒫₀`.
pub fn distance_to_p0(x: Complex64, frame: &Frame) -> f64 {
    let (o, e1, e2) = p0_lattice(frame);
    lattice_distance(x, o, e1, e2)
}

/// Distance from `x` to the nearest point of `𝒬`.
pub fn distance_to_q(x: Complex64, frame: &Frame) -> f64 {
    let (o, e1, e2) = q_lattice(frame);
    lattice_distance(x, o, e1, e2)
}

/// Half of the smallest distance between distinct points of `𝒫₀ ∪ 𝒬`.
pub fn max_hole_radius(frame: &Frame) -> f64 {
    let bd = &frame.bd;
    let x = frame.x0 + bd.omega_b;
    let mut best = f64::INFINITY;
    let (o, e1, e2) = p0_lattice(frame);
    for i in -2..=2 {
        for j in -2..=2 {
            let p = o + e1 * i as f64 + e2 * j as f64;
            if (p - x).norm() > 1e-12 {
                best = best.min((p - x).norm());
            }
        }
    }
    best = best.min(distance_to_q(x, frame));
    let y = frame.x0 + 0.5 * bd.omega_a;
    let (o, e1, e2) = q_lattice(frame);
    for i in -2..=2 {
        for j in -2..=2 {
            let p = o + e1 * i as f64 + e2 * j as f64;
            if (p - y).norm() > 1e-12 {
                best = best.min((p - y).norm());
            }
        }
    }
    0.5 * best
}

/// The half-strip `S(φ, t_∞, κ₀, δ₀)` together with its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripSpec {
    pub phi: f64,
    pub t_inf: f64,
    pub kappa0: f64,
    pub delta0: f64,
    pub frame: Frame,
}

impl StripSpec {
    pub fn new(phi: f64, t_inf: f64, kappa0: f64, delta0: f64, frame: Frame) -> Result<Self> {
        let limit = max_hole_radius(&frame);
        if !(delta0 > 0.0 && delta0 < limit) {
            return Err(PvError::Invalid(format!(
                "hole radius {delta0} must lie in (0, {limit}) so holes do not merge"
            )));
        }
        if !(kappa0 > 0.0) {
            return Err(PvError::Invalid(format!("strip half-width {kappa0} must be positive")));
        }
        Ok(Self {
            phi,
            t_inf,
            kappa0,
            delta0,
            frame,
        })
    }

    /// Radius of the discs excluded from evaluation near singular points.
    pub fn pole_fuzz(&self) -> f64 {
        0.25 * self.delta0
    }
}

/// Where a point sits relative to `S` and `Š = S ∖ ⋃_{σ∈𝒬} {|x − σ| < δ₀}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripClass {
    /// In `S` but inside a disc around a point of `𝒬`.
    InS,
    /// In `Š`.
    InSCheck,
    Outside,
}

pub fn strip_membership(x: Complex64, strip: &StripSpec) -> StripClass {
    let t = x * Complex64::from_polar(1.0, -strip.phi);
    if t.re <= strip.t_inf || t.im.abs() >= strip.kappa0 {
        return StripClass::Outside;
    }
    if distance_to_p0(x, &strip.frame) < strip.delta0 {
        return StripClass::Outside;
    }
    if distance_to_q(x, &strip.frame) < strip.delta0 {
        return StripClass::InS;
    }
    StripClass::InSCheck
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_periods::solve_boutroux;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn frame() -> Frame {
        let bd = solve_boutroux(0.7, Some(c(0.408, 0.422))).unwrap();
        Frame::new(bd, c(1.0, 0.5), c(0.3, -0.2)).unwrap()
    }

    #[test]
    fn trivial_values() {
        let f = frame();
        assert!(psi0(f.x0, &f).unwrap().norm() < 1e-13);
        let v = psi0(f.x0 + 0.5 * f.bd.omega_a, &f).unwrap();
        assert!((v - f.k()).norm() < 1e-10);
        assert!((b0(f.x0, &f).unwrap() - f.b0_at_x0).norm() < 1e-12);
        assert!(frak_b(f.x0, &f).unwrap().norm() < 1e-13);
    }

    #[test]
    fn reduction_preserves_b0_function() {
        let f = frame();
        let bd = f.bd;
        let x0 = f.x0 + 2.0 * bd.omega_b - 2.0 * bd.omega_a;
        let shifted = Frame::new(bd, x0, f.beta0).unwrap();
        assert!((shifted.x0 - f.x0).norm() < 1e-12);
        let ctx = bd.theta().unwrap();
        for x in [c(20.0, 17.0), c(3.0, 4.0)] {
            let z = (x - x0) / (2.0 * bd.omega_a);
            let direct = f.beta0
                - 2.0 * bd.e_a * x / bd.omega_a
                - 8.0 * crate::special_fn::theta_logderiv(z, &ctx).unwrap() / bd.omega_a;
            assert!((b0(x, &shifted).unwrap() - direct).norm() < 1e-10);
            let diff = b0(x, &shifted).unwrap() - shifted.b0_at_x0;
            assert!((diff - (b0(x, &f).unwrap() - f.b0_at_x0)).norm() < 1e-10);
        }
    }

    #[test]
    fn split_frak_b_reassembles() {
        let f = frame();
        let (ia, ib) = frak_b_increments(&f.bd);
        for x in [c(30.0, 25.0), c(-3.0, 2.0), c(7.5, 5.0)] {
            let s = frak_b_split(x, &f).unwrap();
            let whole = s.reduced + ia * s.m as f64 + ib * s.n as f64;
            assert!((whole - frak_b(x, &f).unwrap()).norm() < 1e-9);
        }
    }

    #[test]
    fn lattices_and_membership() {
        let f = frame();
        let win = RayWindow {
            phi: 0.7,
            t_lo: 0.0,
            t_hi: 40.0,
            half_width: 3.0,
        };
        let (p, q) = pole_lattice(&f, &win);
        assert!(!p.is_empty() && !q.is_empty());
        assert!(distance_to_p0(f.x0, &f) > 0.1);
        assert!(distance_to_p0(f.x0 + f.bd.omega_b, &f) < 1e-12);
        for s in q {
            let v = psi0(s, &f).unwrap().norm();
            assert!((v - 1.0).abs() < 1e-8 || (v - f.k().norm()).abs() < 1e-8);
        }
        let strip = StripSpec::new(0.7, 5.0, 3.0, 0.1, f).unwrap();
        let e = Complex64::from_polar(1.0, 0.7);
        assert_eq!(strip_membership(e * 4.0, &strip), StripClass::Outside);
        assert_eq!(strip_membership(p[0] + 0.05, &strip), StripClass::Outside);
    }
}
