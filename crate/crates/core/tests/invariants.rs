use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;
use pv_elliptic::curve_periods::{solve_boutroux, w_branch};
use pv_elliptic::dynamics::{psi_of_y, y_of_psi};
use pv_elliptic::leading_order::{b0, max_hole_radius, psi0_with_derivative};
use pv_elliptic::special_fn::{jacobi_sn, theta};
use pv_elliptic::verify::{measure_h_at, Observation, VerifyOptions};
use pv_elliptic::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn bd() -> &'static BoutrouxData {
    static BD: OnceLock<BoutrouxData> = OnceLock::new();
    BD.get_or_init(|| solve_boutroux(0.7, Some(c(0.408, 0.422))).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_quasi_periodic(zr in -0.5..0.5f64, zi in -0.3..0.3f64, tr in -0.5..0.5f64, ti in 0.5..1.5f64) {
        let tau = c(tr, ti);
        let ctx = ThetaContext::new(tau).unwrap();
        let z = c(zr, zi);
        let t = theta(z, &ctx).unwrap();
        let t1 = theta(z + 1.0, &ctx).unwrap();
        let tt = theta(z + tau, &ctx).unwrap();
        let expect = (-Complex64::i() * PI * (tau + 2.0 * z)).exp() * t;
        let scale = t.norm().max(1e-3);
        prop_assert!((t1 - t).norm() < 1e-10 * scale);
        prop_assert!((tt - expect).norm() < 1e-10 * expect.norm().max(1e-3));
    }

    #[test]
    fn sn_satisfies_first_order_equation(ur in -3.0..3.0f64, ui in -1.5..1.5f64) {
        let ell = bd().elliptic().unwrap();
        let u = c(ur, ui);
        prop_assume!(ell.pole_distance(u) > 0.2);
        let v = ell.sn_with_derivative(u).unwrap();
        let k2 = ell.k * ell.k;
        let lhs = v.dsn * v.dsn;
        let rhs = (1.0 - v.sn * v.sn) * (1.0 - k2 * v.sn * v.sn);
        prop_assert!((lhs - rhs).norm() < 1e-8 * (1.0 + lhs.norm()));
    }

    #[test]
    fn curve_branch_squares_correctly(zr in -3.0..3.0f64, zi in -3.0..3.0f64) {
        let curve = CurveBranch::new(bd().a);
        let z = c(zr, zi);
        prop_assume!(curve.branch_points().iter().all(|p| (z - p).norm() > 1e-3));
        let w = w_branch(&curve, z).unwrap();
        let want = (1.0 - z * z) * (bd().a - z * z);
        prop_assert!((w * w - want).norm() < 1e-12 * (1.0 + want.norm()));
    }

    #[test]
    fn frame_is_lattice_invariant(m in -3i32..3, n in -3i32..3, t in 40.0..300.0f64) {
        let b = *bd();
        let x0 = c(0.9, 0.4);
        let beta0 = c(0.3, -0.2);
        let f = Frame::new(b, x0, beta0).unwrap();
        let g = Frame::new(
            b,
            x0 + 2.0 * b.omega_a * m as f64 + 2.0 * b.omega_b * n as f64,
            beta0 + c(0.0, 16.0 * PI * n as f64) / b.omega_a,
        ).unwrap();
        prop_assert!((f.x0 - g.x0).norm() < 1e-9);
        prop_assert!((f.b0_at_x0 - (f.beta0 - 2.0 * b.e_a * f.x0 / b.omega_a)).norm() == 0.0);
        let x = Complex64::from_polar(t, b.phi);
        let (p, _) = psi0_with_derivative(x, &f).unwrap();
        prop_assume!(p.norm() < 1e6);
        let (q, _) = psi0_with_derivative(x, &g).unwrap();
        prop_assert!((p - q).norm() < 1e-8 * (1.0 + p.norm()));
        prop_assert!((b0(x, &f).unwrap() - b0(x, &g).unwrap()).norm() < 1e-7 * (1.0 + t));
    }

    #[test]
    fn painleve_params_derived_fields(a in -2.0..2.0f64, b in -2.0..2.0f64, d in -2.0..2.0f64) {
        let p = PainleveParams::real(a, b, d);
        prop_assert_eq!(p.a_theta, c((a - b + d).powi(2) / 8.0, 0.0));
        prop_assert_eq!(p.b_theta, c((a - b - d).powi(2) / 8.0, 0.0));
        prop_assert_eq!(p.c_theta, c(1.0 - a - b, 0.0));
    }

    #[test]
    fn mobius_round_trip(yr in -5.0..5.0f64, yi in -5.0..5.0f64) {
        let y = c(yr, yi);
        prop_assume!((y - 1.0).norm() > 1e-3);
        let back = y_of_psi(psi_of_y(y).unwrap()).unwrap();
        prop_assert!((back - y).norm() < 1e-10 * (1.0 + y.norm()));
    }

    #[test]
    fn measured_shift_is_exact(t in 40.0..400.0f64, er in -2e-3..2e-3f64, ei in -2e-3..2e-3f64) {
        let f = Frame::new(*bd(), c(0.9, 0.4), Complex64::new(0.0, 0.0)).unwrap();
        let x = Complex64::from_polar(t, bd().phi);
        let eps = c(er, ei);
        let psi = psi0_with_derivative(x + eps, &f).unwrap().0;
        if let Ok(s) = measure_h_at(&Observation { x, psi, b: psi }, &f, &VerifyOptions::default()) {
            prop_assert!((s.h - eps).norm() < 1e-9);
        }
    }
}

#[test]
fn boutroux_data_invariants() {
    for phi in [-1.2, -0.7, -0.3, 0.3, 0.7, 1.2] {
        let b = solve_boutroux(phi, None).unwrap();
        let ray = Complex64::from_polar(1.0, phi);
        assert!((ray * b.e_a).re.abs() < 1e-10);
        assert!((ray * b.e_b).re.abs() < 1e-10);
        assert!(b.tau0.im > 0.0);
        assert!(b.k.re >= 0.0 && b.k.re <= 1.0);
        let ell = b.elliptic().unwrap();
        assert!(jacobi_sn(c(0.0, 0.0), &ell).unwrap().norm() < 1e-14);
        assert!((ell.sn_with_derivative(c(0.0, 0.0)).unwrap().dsn - 1.0).norm() < 1e-10);
    }
}

#[test]
fn strip_rejects_merging_holes() {
    let f = Frame::new(*bd(), c(0.9, 0.4), c(0.0, 0.0)).unwrap();
    let limit = max_hole_radius(&f);
    assert!(StripSpec::new(0.7, 30.0, 1.0, 0.9 * limit, f).is_ok());
    assert!(StripSpec::new(0.7, 30.0, 1.0, 1.1 * limit, f).is_err());
}
