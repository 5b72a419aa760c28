//! Closed-form primitives of rational functions of `sn u`, written with the
//! logarithmic derivative of ϑ, and the bounded combination `g(s)`.
//!
//! Each primitive is normalized to vanish at `u = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve_periods::BoutrouxData;
use crate::error::{PvError, Result};
use crate::special_fn::{log_theta, EllipticContext, LogTheta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// `1/(1 − sn²u)`
    InvOneMinusSn2,
    /// `sn u/(1 − sn²u)`
    SnOverOneMinusSn2,
    /// `1/(1 − A sn²u)`
    InvOneMinusASn2,
    /// `sn u/(1 − A sn²u)`
    SnOverOneMinusASn2,
    /// `1/(1 − sn²u)²`
    InvOneMinusSn2Sq,
    /// `sn u/(1 − sn²u)²`
    SnOverOneMinusSn2Sq,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 6] = [
        Self::InvOneMinusSn2,
        Self::SnOverOneMinusSn2,
        Self::InvOneMinusASn2,
        Self::SnOverOneMinusASn2,
        Self::InvOneMinusSn2Sq,
        Self::SnOverOneMinusSn2Sq,
    ];

    /// The integrand in terms of `s = sn u`.
    pub fn integrand(self, sn: Complex64, a: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        match self {
            Self::InvOneMinusSn2 => one / (1.0 - sn * sn),
            Self::SnOverOneMinusSn2 => sn / (1.0 - sn * sn),
            Self::InvOneMinusASn2 => one / (1.0 - a * sn * sn),
            Self::SnOverOneMinusASn2 => sn / (1.0 - a * sn * sn),
            Self::InvOneMinusSn2Sq => one / ((1.0 - sn * sn) * (1.0 - sn * sn)),
            Self::SnOverOneMinusSn2Sq => sn / ((1.0 - sn * sn) * (1.0 - sn * sn)),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::InvOneMinusSn2 => "inv_one_minus_sn2",
            Self::SnOverOneMinusSn2 => "sn_over_one_minus_sn2",
            Self::InvOneMinusASn2 => "inv_one_minus_a_sn2",
            Self::SnOverOneMinusASn2 => "sn_over_one_minus_a_sn2",
            Self::InvOneMinusSn2Sq => "inv_one_minus_sn2_sq",
            Self::SnOverOneMinusSn2Sq => "sn_over_one_minus_sn2_sq",
        }
    }

    fn shifted_by_nu0(self) -> bool {
        !matches!(self, Self::InvOneMinusASn2 | Self::SnOverOneMinusASn2)
    }
}

/// `(ϑ'/ϑ)(v ∓ ¼ + shift)` and their second derivatives in `v`.
struct Pair {
    minus: LogTheta,
    plus: LogTheta,
}

fn pair(ell: &EllipticContext, v: Complex64, shift: Complex64) -> Result<Pair> {
    Ok(Pair {
        minus: log_theta(v - 0.25 + shift, &ell.theta)?,
        plus: log_theta(v + 0.25 + shift, &ell.theta)?,
    })
}

/// Combination values `(Σ, Δ, Σ'', Δ'')` with `Σ = L₋ + L₊`, `Δ = L₋ − L₊`
/// and primes meaning `d²/dv²`.
fn combos(p: &Pair) -> [Complex64; 4] {
    [
        p.minus.l1 + p.plus.l1,
        p.minus.l1 - p.plus.l1,
        p.minus.l3 + p.plus.l3,
        p.minus.l3 - p.plus.l3,
    ]
}

/// Singularities of each integrand in `u`: `u ≡ ±K` for the `1 − sn²` kinds
/// and `u ≡ ±K + iK'` for the `1 − A sn²` kinds (mod `2K`, `2iK'`).
pub fn singularity_distance(kind: PrimitiveKind, u: Complex64, ell: &EllipticContext) -> f64 {
    let base = if kind.shifted_by_nu0() {
        ell.k_quarter
    } else {
        ell.k_quarter + 0.5 * ell.omega_b
    };
    let (e1, e2) = (0.5 * ell.omega_a, ell.omega_b);
    let z = u - base;
    let det = e1.re * e2.im - e1.im * e2.re;
    let s = ((z.re * e2.im - z.im * e2.re) / det).round();
    let t = ((e1.re * z.im - e1.im * z.re) / det).round();
    let mut best = f64::INFINITY;
    for di in -1..=1 {
        for dj in -1..=1 {
            let p = e1 * (s + di as f64) + e2 * (t + dj as f64);
            best = best.min((z - p).norm());
        }
    }
    best
}

/// Default exclusion radius around integrand singularities, in `u`.
pub const DEFAULT_FUZZ: f64 = 1e-6;

/// `∫₀ᵘ f(sn u) du` for the given kind.
pub fn primitive(kind: PrimitiveKind, u: Complex64, bd: &BoutrouxData) -> Result<Complex64> {
    let ell = bd.elliptic()?;
    primitive_with(kind, u, bd, &ell, DEFAULT_FUZZ)
}

/// As [`primitive`] with a prebuilt elliptic context and explicit fuzz radius.
pub fn primitive_with(
    kind: PrimitiveKind,
    u: Complex64,
    bd: &BoutrouxData,
    ell: &EllipticContext,
    fuzz: f64,
) -> Result<Complex64> {
    if singularity_distance(kind, u, ell) < fuzz {
        return Err(PvError::AtPole {
            what: "primitive integrand",
            at: u,
        });
    }
    let a = bd.a;
    let oa = bd.omega_a;
    let ea = bd.e_a;
    let shift = if kind.shifted_by_nu0() {
        ell.nu0
    } else {
        Complex64::new(0.0, 0.0)
    };
    let v = u / oa;
    let [s, d, s2, d2] = combos(&pair(ell, v, shift)?);
    let [s0, d0, s20, d20] = combos(&pair(ell, Complex64::new(0.0, 0.0), shift)?);
    let am1 = a - 1.0;
    let out = match kind {
        PrimitiveKind::InvOneMinusSn2 => (ea * u + s - s0) / (am1 * oa),
        PrimitiveKind::SnOverOneMinusSn2 => (d - d0) / (am1 * oa),
        PrimitiveKind::InvOneMinusASn2 => (ea * u + s - s0) / (-am1 * oa) + u,
        PrimitiveKind::SnOverOneMinusASn2 => -(d - d0) / (bd.k * (-am1) * oa),
        PrimitiveKind::InvOneMinusSn2Sq => {
            let f2 = (s2 - s20) / (oa * oa);
            let f0 = ea * u + s - s0;
            -(f2 + 4.0 * (1.0 - 2.0 * a) * f0) / (6.0 * am1 * am1 * oa) - a * u / (3.0 * am1)
        }
        PrimitiveKind::SnOverOneMinusSn2Sq => {
            let f2 = (d2 - d20) / (oa * oa);
            let f0 = d - d0;
            -(f2 + (1.0 - 5.0 * a) * f0) / (6.0 * am1 * am1 * oa)
        }
    };
    Ok(out)
}

/// `g(s) = (ℰ_a/2)s + ϑ'/ϑ(s/Ω_a)`.
pub fn g(s: Complex64, bd: &BoutrouxData) -> Result<Complex64> {
    let ctx = bd.theta()?;
    Ok(0.5 * bd.e_a * s + log_theta(s / bd.omega_a, &ctx)?.l1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_periods::solve_boutroux;
    use crate::leading_order::{frak_b, Frame};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bd() -> BoutrouxData {
        solve_boutroux(0.7, Some(c(0.408, 0.422))).unwrap()
    }

    #[test]
    fn primitives_vanish_at_origin() {
        let bd = bd();
        for kind in PrimitiveKind::ALL {
            assert!(primitive(kind, c(0.0, 0.0), &bd).unwrap().norm() < 1e-14);
        }
    }

    #[test]
    fn derivatives_match_integrands() {
        let bd = bd();
        let ell = bd.elliptic().unwrap();
        let h = 1e-4;
        for kind in PrimitiveKind::ALL {
            for u in [c(0.3, 0.2), c(0.9, -0.3), c(1.7, 0.5), c(-2.2, 1.1), c(4.0, -0.8)] {
                let fp = primitive(kind, u + h, &bd).unwrap();
                let fm = primitive(kind, u - h, &bd).unwrap();
                let fpp = primitive(kind, u + 2.0 * h, &bd).unwrap();
                let fmm = primitive(kind, u - 2.0 * h, &bd).unwrap();
                let d = (8.0 * (fp - fm) - (fpp - fmm)) / (12.0 * h);
                let sn = ell.sn_with_derivative(u).unwrap().sn;
                let exact = kind.integrand(sn, bd.a);
                assert!(
                    (d - exact).norm() < 1e-7 * exact.norm().max(1.0),
                    "{kind:?} at {u}: {d} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn g_matches_frak_b() {
        let bd = bd();
        let f = Frame::new(bd, c(1.0, 0.5), c(0.0, 0.0)).unwrap();
        for x in [c(10.0, 8.0), c(25.0, 21.0), c(3.0, 1.0)] {
            let lhs = g(0.5 * (x - f.x0), &bd).unwrap();
            let rhs = frak_b(x, &f).unwrap();
            assert!((lhs - rhs).norm() < 1e-12 * rhs.norm().max(1.0));
        }
        assert!(g(c(0.0, 0.0), &bd).unwrap().norm() < 1e-15);
    }
}
