//! Theta function `ϑ(z, τ) = Σ exp(πiτn² + 2πizn)`, its logarithmic
//! derivatives, and Jacobi `sn` with complex modulus built as a theta
//! quotient on the period lattice `(Ω_a, Ω_b) = (4K, 2iK')`.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{PvError, Result};

/// Hard cap on the one-sided number of series terms.
pub const MAX_TERMS: usize = 64;

/// Default truncation tolerance for the theta series.
pub const DEFAULT_TOL: f64 = 1e-12;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Nome and truncation data for `ϑ(·, τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaContext {
    pub tau: Complex64,
    pub q: Complex64,
    /// One-sided truncation for lattice-reduced arguments.
    pub n_terms: usize,
    pub tol: f64,
}

impl ThetaContext {
    pub fn new(tau: Complex64) -> Result<Self> {
        Self::with_tol(tau, DEFAULT_TOL)
    }

    pub fn with_tol(tau: Complex64, tol: f64) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.is_finite() {
            return Err(PvError::InvalidNome { im_tau: tau.im });
        }
        let q = (I * PI * tau).exp();
        let n = ((tol.ln() / q.norm().ln()).sqrt()).ceil() as usize + 2;
        if n > MAX_TERMS {
            return Err(PvError::TruncationCap {
                needed: n,
                cap: MAX_TERMS,
            });
        }
        Ok(Self {
            tau,
            q,
            n_terms: n,
            tol,
        })
    }

    /// Terms needed for an argument with the given imaginary part.
    fn terms_for(&self, z: Complex64) -> Result<usize> {
        let shift = (z.im.abs() / self.tau.im).ceil() as usize;
        let n = self.n_terms + shift;
        if n > MAX_TERMS {
            return Err(PvError::TruncationCap {
                needed: n,
                cap: MAX_TERMS,
            });
        }
        Ok(n)
    }

    /// Splits `z = z_r + m + nτ` with `z_r` in the centred fundamental cell.
    pub fn reduce(&self, z: Complex64) -> (Complex64, i64, i64) {
        let n = (z.im / self.tau.im).round();
        let z1 = z - self.tau * n;
        let m = z1.re.round();
        (z1 - m, m as i64, n as i64)
    }

    /// `[ϑ, ϑ', ϑ'', ϑ''']` by termwise summation (no lattice reduction).
    pub fn derivs(&self, z: Complex64) -> Result<[Complex64; 4]> {
        let n_max = self.terms_for(z)? as i64;
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for n in -n_max..=n_max {
            let nf = n as f64;
            let term = (I * PI * (self.tau * nf * nf + 2.0 * z * nf)).exp();
            let w = I * (2.0 * PI * nf);
            let mut t = term;
            for slot in out.iter_mut() {
                *slot += t;
                t *= w;
            }
        }
        Ok(out)
    }
}

/// `ϑ(z, τ)`.
pub fn theta(z: Complex64, ctx: &ThetaContext) -> Result<Complex64> {
    Ok(ctx.derivs(z)?[0])
}

/// `dϑ/dz`.
pub fn theta_prime(z: Complex64, ctx: &ThetaContext) -> Result<Complex64> {
    Ok(ctx.derivs(z)?[1])
}

/// Logarithmic derivatives of ϑ at a point, with the lattice shift that was
/// removed. `l1` is the analytic continuation of `ϑ'/ϑ`, i.e. it includes
/// the `-2πi·n` jump; `l2`, `l3` are elliptic and need no correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTheta {
    pub l1: Complex64,
    pub l2: Complex64,
    pub l3: Complex64,
    /// `ϑ'/ϑ` at the reduced argument.
    pub l1_reduced: Complex64,
    pub m: i64,
    pub n: i64,
}

/// `ϑ'/ϑ` together with its first two derivatives.
pub fn log_theta(z: Complex64, ctx: &ThetaContext) -> Result<LogTheta> {
    let (zr, m, n) = ctx.reduce(z);
    let [t0, t1, t2, t3] = ctx.derivs(zr)?;
    if t0.norm() < ctx.tol * t1.norm().max(1.0) {
        return Err(PvError::NearThetaZero { z });
    }
    let l1 = t1 / t0;
    let l2 = t2 / t0 - l1 * l1;
    let l3 = t3 / t0 - 3.0 * t2 * t1 / (t0 * t0) + 2.0 * l1 * l1 * l1;
    Ok(LogTheta {
        l1: l1 - I * (2.0 * PI * n as f64),
        l2,
        l3,
        l1_reduced: l1,
        m,
        n,
    })
}

/// `ϑ'/ϑ(z)`, continued analytically across the lattice.
pub fn theta_logderiv(z: Complex64, ctx: &ThetaContext) -> Result<Complex64> {
    Ok(log_theta(z, ctx)?.l1)
}

/// Data for `sn(u; k)` on the lattice `Ω_a = 4K`, `Ω_b = 2iK'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticContext {
    pub k: Complex64,
    pub k_quarter: Complex64,
    pub kprime_half: Complex64,
    pub omega_a: Complex64,
    pub omega_b: Complex64,
    pub theta: ThetaContext,
    /// `ν₀ = (1 + τ₀)/2`, the zero of ϑ in the fundamental cell.
    pub nu0: Complex64,
    pub c_sn: Complex64,
}

/// Result of evaluating sn together with its derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnValue {
    pub sn: Complex64,
    pub dsn: Complex64,
}

impl EllipticContext {
    pub fn new(k: Complex64, omega_a: Complex64, omega_b: Complex64) -> Result<Self> {
        let tau = omega_b / omega_a;
        let ctx = ThetaContext::new(tau)?;
        let nu0 = 0.5 * (1.0 + tau);
        let half = Complex64::new(0.5, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        // sn = c e^{2πiv} ϑ(v+ν₀)ϑ(v+ν₀+½) / (ϑ(v)ϑ(v+½)), v = u/Ω_a:
        // zeros at v ≡ 0, ½ and poles at v ≡ τ/2, ½+τ/2. sn'(0) = 1 fixes c.
        let num = theta_prime(nu0, &ctx)? * theta(nu0 + half, &ctx)?;
        let den = theta(zero, &ctx)? * theta(half, &ctx)?;
        let c_sn = omega_a * den / num;
        Ok(Self {
            k,
            k_quarter: omega_a / 4.0,
            kprime_half: omega_b / (2.0 * I),
            omega_a,
            omega_b,
            theta: ctx,
            nu0,
            c_sn,
        })
    }

    pub fn tau(&self) -> Complex64 {
        self.theta.tau
    }

    /// Reduces `u` modulo the sn period lattice `Ω_a ℤ + Ω_b ℤ`.
    pub fn reduce(&self, u: Complex64) -> Complex64 {
        let (vr, _, _) = self.theta.reduce(u / self.omega_a);
        vr * self.omega_a
    }

    /// Distance (in `u`) from the nearest pole `u ≡ Ω_b/2 (mod Ω_a/2, Ω_b)`.
    pub fn pole_distance(&self, u: Complex64) -> f64 {
        let ur = self.reduce(u);
        let mut best = f64::INFINITY;
        for a in -2..=2 {
            for b in [-1.0, 1.0, 3.0, -3.0] {
                let p = self.omega_a * (a as f64 * 0.5) + self.omega_b * (b * 0.5);
                best = best.min((ur - p).norm());
            }
        }
        best
    }

    /// sn and d sn/du.
    pub fn sn_with_derivative(&self, u: Complex64) -> Result<SnValue> {
        let scale = self.omega_a.norm().max(self.omega_b.norm());
        if self.pole_distance(u) < self.theta.tol * scale {
            return Err(PvError::AtPole {
                what: "sn",
                at: u,
            });
        }
        let v = self.reduce(u) / self.omega_a;
        let half = Complex64::new(0.5, 0.0);
        let th = &self.theta;
        let a = th.derivs(v + self.nu0)?;
        let b = th.derivs(v + self.nu0 + half)?;
        let c = th.derivs(v)?;
        let d = th.derivs(v + half)?;
        let e = (I * 2.0 * PI * v).exp();
        let num = a[0] * b[0];
        let dnum = a[1] * b[0] + a[0] * b[1] + I * 2.0 * PI * num;
        let den = c[0] * d[0];
        let dden = c[1] * d[0] + c[0] * d[1];
        let sn = self.c_sn * e * num / den;
        let dsn = self.c_sn * e * (dnum * den - num * dden) / (den * den) / self.omega_a;
        Ok(SnValue { sn, dsn })
    }
}

/// `sn(u; k)` for the lattice carried by `ell`.
pub fn jacobi_sn(u: Complex64, ell: &EllipticContext) -> Result<Complex64> {
    Ok(ell.sn_with_derivative(u)?.sn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn theta_at_tau_i_matches_direct_sum() {
        // Independent summation with 60 terms at q = e^{-π}.
        let q = (-PI).exp();
        let mut direct = 1.0;
        for n in 1..60 {
            direct += 2.0 * q.powi(n * n);
        }
        let ctx = ThetaContext::new(c(0.0, 1.0)).unwrap();
        let v = theta(c(0.0, 0.0), &ctx).unwrap();
        assert!((v.re - direct).abs() < 1e-14);
        assert!((v.re - 1.086_434_811_213_308).abs() < 1e-12);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn theta_quasi_periodicity() {
        let ctx = ThetaContext::new(c(0.2, 1.1)).unwrap();
        for &z in &[c(0.1, 0.05), c(-0.3, 0.2), c(0.45, -0.4)] {
            let t = theta(z, &ctx).unwrap();
            let t1 = theta(z + 1.0, &ctx).unwrap();
            assert!((t1 - t).norm() < 1e-12 * t.norm());
            let tt = theta(z + ctx.tau, &ctx).unwrap();
            let expect = (-I * PI * (ctx.tau + 2.0 * z)).exp() * t;
            assert!((tt - expect).norm() < 1e-11 * expect.norm());
        }
    }

    #[test]
    fn theta_prime_matches_finite_difference() {
        let ctx = ThetaContext::new(c(0.2, 1.1)).unwrap();
        let z = c(0.3, 0.1);
        let h = 1e-5;
        let fd = (theta(z + h, &ctx).unwrap() - theta(z - h, &ctx).unwrap()) / (2.0 * h);
        let d = theta_prime(z, &ctx).unwrap();
        assert!((fd - d).norm() < 10.0 * ctx.tol + 1e-9, "{fd} vs {d}");
        assert!(theta_prime(c(0.0, 0.0), &ctx).unwrap().norm() < 1e-14);
    }

    #[test]
    fn logderiv_shifts() {
        let ctx = ThetaContext::new(c(0.15, 0.8)).unwrap();
        assert!(theta_logderiv(c(0.0, 0.0), &ctx).unwrap().norm() < 1e-14);
        let z = c(0.21, 0.13);
        let l = theta_logderiv(z, &ctx).unwrap();
        let l1 = theta_logderiv(z + 1.0, &ctx).unwrap();
        let lt = theta_logderiv(z + ctx.tau, &ctx).unwrap();
        assert!((l1 - l).norm() < 1e-12);
        assert!((lt - (l - I * 2.0 * PI)).norm() < 1e-11);
    }

    #[test]
    fn logderiv_rejects_theta_zero() {
        let ctx = ThetaContext::new(c(0.15, 0.8)).unwrap();
        let zero = 0.5 * (1.0 + ctx.tau);
        assert!(matches!(
            theta_logderiv(zero, &ctx),
            Err(PvError::NearThetaZero { .. })
        ));
    }

    #[test]
    fn rejects_bad_nome_and_huge_arguments() {
        assert!(matches!(
            ThetaContext::new(c(0.3, -0.1)),
            Err(PvError::InvalidNome { .. })
        ));
        let ctx = ThetaContext::new(c(0.0, 1.0)).unwrap();
        assert!(matches!(
            theta(c(0.0, 200.0), &ctx),
            Err(PvError::TruncationCap { .. })
        ));
    }

    #[test]
    fn sn_special_values_for_real_modulus() {
        // k = 0.5: K = 1.685750354812596, K' = 2.156515647499643.
        let kk = 1.685_750_354_812_596;
        let kp = 2.156_515_647_499_643;
        let ell = EllipticContext::new(c(0.5, 0.0), c(4.0 * kk, 0.0), c(0.0, 2.0 * kp)).unwrap();
        assert!(jacobi_sn(c(0.0, 0.0), &ell).unwrap().norm() < 1e-14);
        assert!((jacobi_sn(c(kk, 0.0), &ell).unwrap() - 1.0).norm() < 1e-12);
        let v = jacobi_sn(c(kk, kp), &ell).unwrap();
        assert!((v - 2.0).norm() < 1e-11, "{v}");
        let u = c(0.37, 0.2);
        let a = jacobi_sn(u, &ell).unwrap();
        let b = jacobi_sn(u + 2.0 * kk, &ell).unwrap();
        assert!((a + b).norm() < 1e-12);
        assert!(matches!(
            jacobi_sn(c(0.0, kp), &ell),
            Err(PvError::AtPole { .. })
        ));
    }

    /// Descending Landen transformation (AGM recurrence) for `sn(u|k)`. The
    /// last step only fixes `sn` up to sign; `sign_ref` picks the branch.
    fn sn_landen(u: Complex64, k: Complex64, sign_ref: Complex64) -> Complex64 {
        let one = c(1.0, 0.0);
        let mut emc = one - k * k;
        let mut a = one;
        let (mut em, mut en) = (Vec::new(), Vec::new());
        let mut cc = one;
        for _ in 0..20 {
            em.push(a);
            emc = emc.sqrt();
            en.push(emc);
            cc = 0.5 * (a + emc);
            if (a - emc).norm() <= 1e-15 * a.norm() {
                break;
            }
            emc *= a;
            a = cc;
        }
        let u = u * cc;
        let (sn, cn) = (u.sin(), u.cos());
        let mut dn = one;
        let mut a = cn / sn;
        let mut cc = cc * a;
        for (b, e) in em.iter().zip(&en).rev() {
            a *= cc;
            cc *= dn;
            dn = (e + a) / (b + a);
            a = cc / b;
        }
        let v = one / (cc * cc + one).sqrt();
        if (v - sign_ref).norm() <= (v + sign_ref).norm() {
            v
        } else {
            -v
        }
    }

    #[test]
    fn sn_matches_landen_oracle_for_complex_modulus() {
        let bd = crate::curve_periods::solve_boutroux(0.7, Some(c(0.408, 0.422))).unwrap();
        let ell = bd.elliptic().unwrap();
        let k = ell.k;
        for &u in &[c(0.3, 0.1), c(1.1, -0.4), c(-0.7, 0.9), c(2.0, 0.3), c(0.2, -1.3)] {
            // continue the sign from sn(u) ≈ u near the origin
            let mut prev = u * 1e-3;
            let steps = 400;
            for j in 1..=steps {
                let s = u * (j as f64 / steps as f64);
                prev = sn_landen(s, k, prev);
            }
            let want = prev;
            let got = jacobi_sn(u, &ell).unwrap();
            assert!((got - want).norm() < 1e-10 * (1.0 + want.norm()), "u={u}: {got} vs {want}");
        }
    }
}
