//! The curve `w² = (1 − z²)(A − z²)`: upper-sheet branch, the cycles
//! **a** and **b**, their periods, and the Boutroux equations for `A_φ`.
//!
//! Cut convention: `[−1, −k] ∪ [k, 1]` with `k = A^{1/2}`, `Re k ≥ 0`. On the
//! upper sheet `z⁻¹√(1 − z²) → i` and `z⁻¹√(A − z²) → i`, so `w ~ −z²` at ∞.
//!
//! Cycle **a** encircles the segment `[−k, k]` and therefore crosses both
//! cuts (half of it runs on the lower sheet); it carries `Ω_a = 4K`.
//! Cycle **b** encircles the cut `[k, 1]` on the upper sheet; it carries
//! `Ω_b = 2iK'`. The orientation of **b** is chosen so that
//! `Im(Ω_b/Ω_a) > 0`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{PvError, Result};
use crate::quadrature::GaussLegendre;
use crate::special_fn::{EllipticContext, ThetaContext};

/// Gauss–Legendre order used on every polyline piece.
pub const NODES_PER_SEGMENT: usize = 64;
/// Stopping criterion for the order-doubling estimate.
pub const PERIOD_QUAD_TOL: f64 = 1e-12;
/// Target for `|residual|` in the Newton solve.
pub const BOUTROUX_TOL: f64 = 1e-10;
/// Minimum separation allowed between branch points and cycle paths.
pub const MIN_SAFETY: f64 = 0.05;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Branch data for the curve at a given `A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveBranch {
    pub a: Complex64,
    /// `A^{1/2}` with non-negative real part.
    pub k: Complex64,
}

impl CurveBranch {
    pub fn new(a: Complex64) -> Self {
        let mut k = a.sqrt();
        if k.re < 0.0 {
            k = -k;
        }
        Self { a, k }
    }

    pub fn branch_points(&self) -> [Complex64; 4] {
        [c(-1.0, 0.0), -self.k, self.k, c(1.0, 0.0)]
    }

    /// Smallest separation governing the cycle construction: branch point
    /// pairs and the distance from `±1` to the segment `[−k, k]`.
    pub fn min_gap(&self) -> f64 {
        let bp = self.branch_points();
        let mut gap = f64::INFINITY;
        for i in 0..4 {
            for j in (i + 1)..4 {
                gap = gap.min((bp[i] - bp[j]).norm());
            }
        }
        for p in [c(1.0, 0.0), c(-1.0, 0.0)] {
            gap = gap.min(point_segment_distance(p, -self.k, self.k));
        }
        gap
    }

    /// Safety radius used for the cycle paths.
    pub fn safety_radius(&self) -> f64 {
        let gap = self.min_gap();
        (0.1 * gap).max(MIN_SAFETY).min(0.3 * gap)
    }

    fn nearest_branch_point(&self, z: Complex64) -> (Complex64, f64) {
        self.branch_points()
            .into_iter()
            .map(|b| (b, (z - b).norm()))
            .fold((c(0.0, 0.0), f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }

    /// Upper-sheet value in closed form; analytic off the two cuts.
    fn w_upper(&self, z: Complex64) -> Complex64 {
        let one = c(1.0, 0.0);
        let f = (z - one) * ((z - self.k) / (z - one)).sqrt();
        let h = (z + one) * ((z + self.k) / (z + one)).sqrt();
        -f * h
    }
}

fn point_segment_distance(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a) * d.conj()).re / len2;
    let s = s.clamp(0.0, 1.0);
    (p - (a + d * s)).norm()
}

/// Upper-sheet `w(A, z)`.
pub fn w_branch(curve: &CurveBranch, z: Complex64) -> Result<Complex64> {
    let (bp, dist) = curve.nearest_branch_point(z);
    let radius = 1e-8;
    if dist < radius {
        return Err(PvError::BranchPointProximity {
            z,
            branch_point: bp,
            distance: dist,
            radius,
        });
    }
    Ok(curve.w_upper(z))
}

/// Which basic cycle a path realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cycle {
    A,
    B,
}

/// A closed polyline realizing one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePath {
    pub cycle: Cycle,
    /// Corners; the path closes from the last node back to the first.
    pub nodes: Vec<Complex64>,
    /// Subdivisions per side.
    pub pieces: Vec<usize>,
    pub safety: f64,
}

impl CyclePath {
    /// Minimum distance from the polyline to the given points.
    pub fn min_distance_to(&self, pts: &[Complex64]) -> f64 {
        let n = self.nodes.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = self.nodes[i];
            let b = self.nodes[(i + 1) % n];
            for p in pts {
                best = best.min(point_segment_distance(*p, a, b));
            }
        }
        best
    }

    fn reversed(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        let mut pieces = self.pieces.clone();
        // side i of the reversed path is side (n-2-i) of the original
        let n = pieces.len();
        pieces.rotate_left(n - 1);
        pieces.reverse();
        Self {
            cycle: self.cycle,
            nodes,
            pieces,
            safety: self.safety,
        }
    }
}

/// Counter-clockwise rectangle around the segment `p → q` at distance `d`.
fn rectangle_around(p: Complex64, q: Complex64, d: f64) -> Vec<Complex64> {
    let u = (q - p) / (q - p).norm();
    let n = I * u;
    vec![
        p - u * d - n * d,
        q + u * d - n * d,
        q + u * d + n * d,
        p - u * d + n * d,
    ]
}

fn pieces_for(nodes: &[Complex64], d: f64) -> Vec<usize> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let len = (nodes[(i + 1) % n] - nodes[i]).norm();
            ((len / d).ceil() as usize).max(1)
        })
        .collect()
}

/// Polylines for the cycles **a** (around `[−k, k]`) and **b** (around `[k, 1]`).
pub fn build_cycles(curve: &CurveBranch) -> Result<(CyclePath, CyclePath)> {
    let gap = curve.min_gap();
    if gap < 2.0 * 1e-3 || (curve.k - 1.0).norm() < 1e-3 || curve.k.norm() < 1e-3 {
        return Err(PvError::DegenerateModulus { a: curve.a });
    }
    let d = curve.safety_radius();
    let a_nodes = rectangle_around(-curve.k, curve.k, d);
    let b_nodes = rectangle_around(curve.k, c(1.0, 0.0), d);
    let a = CyclePath {
        cycle: Cycle::A,
        pieces: pieces_for(&a_nodes, d),
        nodes: a_nodes,
        safety: d,
    };
    let b = CyclePath {
        cycle: Cycle::B,
        pieces: pieces_for(&b_nodes, d),
        nodes: b_nodes,
        safety: d,
    };
    Ok((a, b))
}

/// `(∮ dz/w, ∮ (A − z²)/w dz)` along a path, with `w` continued from the
/// upper-sheet value at the first node by picking, at each quadrature node,
/// the square root closest to the previous value.
fn cycle_integrals(
    curve: &CurveBranch,
    path: &CyclePath,
    rule: &GaussLegendre,
    refine: usize,
) -> Result<(Complex64, Complex64)> {
    let n = path.nodes.len();
    let mut w_prev = w_branch(curve, path.nodes[0])?;
    let mut omega = c(0.0, 0.0);
    let mut energy = c(0.0, 0.0);
    for side in 0..n {
        let p = path.nodes[side];
        let q = path.nodes[(side + 1) % n];
        let m = path.pieces[side] * refine;
        for j in 0..m {
            let a = p + (q - p) * (j as f64 / m as f64);
            let b = p + (q - p) * ((j + 1) as f64 / m as f64);
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
                let z = mid + half * *x;
                let w2 = (1.0 - z * z) * (curve.a - z * z);
                let mut w = w2.sqrt();
                if (w - w_prev).norm() > (w + w_prev).norm() {
                    w = -w;
                }
                w_prev = w;
                omega += half * *wt / w;
                energy += half * *wt * (curve.a - z * z) / w;
            }
        }
    }
    Ok((omega, energy))
}

/// The four period integrals with their quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Periods {
    pub omega_a: Complex64,
    pub omega_b: Complex64,
    pub e_a: Complex64,
    pub e_b: Complex64,
    pub quad_error: f64,
}

/// `Ω_c = ∮_c dz/w` and `ℰ_c = ∮_c √((A − z²)/(1 − z²)) dz` for `c ∈ {a, b}`.
pub fn periods(curve: &CurveBranch) -> Result<Periods> {
    let (pa, pb) = build_cycles(curve)?;
    let rule = GaussLegendre::new(NODES_PER_SEGMENT);
    let mut refine = 1;
    let (mut oa, mut ea) = cycle_integrals(curve, &pa, &rule, refine)?;
    let (mut ob, mut eb) = cycle_integrals(curve, &pb, &rule, refine)?;
    loop {
        refine *= 2;
        let (oa2, ea2) = cycle_integrals(curve, &pa, &rule, refine)?;
        let (ob2, eb2) = cycle_integrals(curve, &pb, &rule, refine)?;
        let err = [(oa2 - oa), (ea2 - ea), (ob2 - ob), (eb2 - eb)]
            .iter()
            .map(|d| d.norm())
            .fold(0.0, f64::max);
        let scale = oa2.norm().max(ob2.norm()).max(1.0);
        oa = oa2;
        ea = ea2;
        ob = ob2;
        eb = eb2;
        if err <= PERIOD_QUAD_TOL * scale {
            let (ob, eb) = orient_b(oa, ob, eb, curve, &pb)?;
            return Ok(Periods {
                omega_a: oa,
                omega_b: ob,
                e_a: ea,
                e_b: eb,
                quad_error: err,
            });
        }
        if refine > 64 {
            return Err(PvError::QuadratureNotConverged { estimate: err });
        }
    }
}

/// Orientation of **b** making `Im τ₀ > 0`.
fn orient_b(
    oa: Complex64,
    ob: Complex64,
    eb: Complex64,
    _curve: &CurveBranch,
    _pb: &CyclePath,
) -> Result<(Complex64, Complex64)> {
    let tau = ob / oa;
    if tau.im.abs() < 1e-12 {
        return Err(PvError::Invalid(format!(
            "period ratio {tau} is real; cycles do not form a lattice basis"
        )));
    }
    if tau.im > 0.0 {
        Ok((ob, eb))
    } else {
        Ok((-ob, -eb))
    }
}

/// The clockwise/counter-clockwise **b** path actually integrated, for tests.
pub fn oriented_b_path(curve: &CurveBranch) -> Result<CyclePath> {
    let (pa, pb) = build_cycles(curve)?;
    let rule = GaussLegendre::new(NODES_PER_SEGMENT);
    let (oa, _) = cycle_integrals(curve, &pa, &rule, 2)?;
    let (ob, _) = cycle_integrals(curve, &pb, &rule, 2)?;
    Ok(if (ob / oa).im > 0.0 { pb } else { pb.reversed() })
}

/// Solved modulus and period data for one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoutrouxData {
    pub phi: f64,
    pub a: Complex64,
    pub k: Complex64,
    pub omega_a: Complex64,
    pub omega_b: Complex64,
    pub e_a: Complex64,
    pub e_b: Complex64,
    pub tau0: Complex64,
    pub residual: (f64, f64),
}

impl BoutrouxData {
    pub fn from_periods(phi: f64, curve: &CurveBranch, p: &Periods) -> Self {
        let e = Complex64::from_polar(1.0, phi);
        Self {
            phi,
            a: curve.a,
            k: curve.k,
            omega_a: p.omega_a,
            omega_b: p.omega_b,
            e_a: p.e_a,
            e_b: p.e_b,
            tau0: p.omega_b / p.omega_a,
            residual: ((e * p.e_a).re, (e * p.e_b).re),
        }
    }

    /// `Ω_a ℰ_b − Ω_b ℰ_a`; equals `−4πi` with the orientation used here.
    pub fn bilinear(&self) -> Complex64 {
        self.omega_a * self.e_b - self.omega_b * self.e_a
    }

    pub fn elliptic(&self) -> Result<EllipticContext> {
        EllipticContext::new(self.k, self.omega_a, self.omega_b)
    }

    pub fn theta(&self) -> Result<ThetaContext> {
        ThetaContext::new(self.tau0)
    }

    pub fn ray(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.phi)
    }
}

/// The Riemann bilinear constant: two residues at the points over `z = ∞`.
pub const BILINEAR_CONSTANT: Complex64 = Complex64::new(0.0, -4.0 * PI);

/// `(Re e^{iφ}ℰ_a, Re e^{iφ}ℰ_b)`.
pub fn boutroux_residual(phi: f64, curve: &CurveBranch) -> Result<(f64, f64)> {
    let p = periods(curve)?;
    let e = Complex64::from_polar(1.0, phi);
    Ok(((e * p.e_a).re, (e * p.e_b).re))
}

/// Search rectangle and grid for unseeded solves.
pub const SEED_RE: (f64, f64) = (-1.0, 2.0);
pub const SEED_IM: (f64, f64) = (-2.0, 2.0);
pub const SEED_GRID: usize = 41;
const MAX_NEWTON: usize = 60;
const MAX_HALVINGS: usize = 40;

fn admissible(a: Complex64) -> bool {
    let curve = CurveBranch::new(a);
    curve.k.re <= 1.0 && curve.min_gap() > 0.1 && curve.k.norm() > 0.05
}

fn residual_vec(phi: f64, a: Complex64) -> Result<[f64; 2]> {
    let (r0, r1) = boutroux_residual(phi, &CurveBranch::new(a))?;
    Ok([r0, r1])
}

/// Damped Newton on `(Re A, Im A) ↦ residual`, Jacobian by central differences.
pub fn newton_boutroux(phi: f64, seed: Complex64) -> Result<BoutrouxData> {
    let mut a = seed;
    let mut r = residual_vec(phi, a)?;
    let norm = |r: &[f64; 2]| r[0].hypot(r[1]);
    for _ in 0..MAX_NEWTON {
        if norm(&r) <= 1e-3 * BOUTROUX_TOL {
            break;
        }
        let h = 1e-6;
        let rp = residual_vec(phi, a + h)?;
        let rm = residual_vec(phi, a - h)?;
        let ip = residual_vec(phi, a + I * h)?;
        let im = residual_vec(phi, a - I * h)?;
        let j = [
            [(rp[0] - rm[0]) / (2.0 * h), (ip[0] - im[0]) / (2.0 * h)],
            [(rp[1] - rm[1]) / (2.0 * h), (ip[1] - im[1]) / (2.0 * h)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            return Err(PvError::NotConverged {
                what: "boutroux newton (singular jacobian)",
                iterations: 0,
                residual: norm(&r),
            });
        }
        let dx = -(j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let dy = -(-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        let step = c(dx, dy);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = a + step * lambda;
            let curve = CurveBranch::new(trial);
            if curve.min_gap() < 1e-3 || curve.k.norm() < 1e-3 {
                lambda *= 0.5;
                continue;
            }
            if let Ok(rt) = residual_vec(phi, trial) {
                if norm(&rt) < norm(&r) {
                    a = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let curve = CurveBranch::new(a);
    if curve.min_gap() < 1e-3 {
        return Err(PvError::DegenerateModulus { a });
    }
    if norm(&r) > BOUTROUX_TOL {
        return Err(PvError::NotConverged {
            what: "boutroux newton",
            iterations: MAX_NEWTON,
            residual: norm(&r),
        });
    }
    let p = periods(&curve)?;
    Ok(BoutrouxData::from_periods(phi, &curve, &p))
}

/// Solves the Boutroux equations for `0 < |φ| < π/2`.
pub fn solve_boutroux(phi: f64, seed: Option<Complex64>) -> Result<BoutrouxData> {
    if !(phi.abs() > 0.0 && phi.abs() < FRAC_PI_2) {
        return Err(PvError::Invalid(format!(
            "phase {phi} outside 0 < |phi| < pi/2"
        )));
    }
    if let Some(s) = seed {
        return newton_boutroux(phi, s);
    }
    let seeds = seed_candidates(phi);
    let mut last_err = PvError::Fit("no admissible seed in search rectangle".into());
    for s in seeds {
        match newton_boutroux(phi, s) {
            Ok(bd) if bd.k.re <= 1.0 + 1e-12 && bd.tau0.im > 0.0 => return Ok(bd),
            Ok(bd) => {
                last_err = PvError::Fit(format!("converged to inadmissible A = {}", bd.a));
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Grid cells ordered by scale-free residual, best first (local minima only).
fn seed_candidates(phi: f64) -> Vec<Complex64> {
    let n = SEED_GRID;
    let cell = |i: usize, j: usize| {
        c(
            SEED_RE.0 + (SEED_RE.1 - SEED_RE.0) * i as f64 / (n - 1) as f64,
            SEED_IM.0 + (SEED_IM.1 - SEED_IM.0) * j as f64 / (n - 1) as f64,
        )
    };
    let values: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let a = cell(idx / n, idx % n);
            if !admissible(a) {
                return f64::INFINITY;
            }
            let curve = CurveBranch::new(a);
            match periods(&curve) {
                Ok(p) => {
                    let e = Complex64::from_polar(1.0, phi);
                    let r = (e * p.e_a).re.hypot((e * p.e_b).re);
                    r / (p.e_a.norm() + p.e_b.norm())
                }
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    let mut minima: Vec<(f64, Complex64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = values[i * n + j];
            if !v.is_finite() {
                continue;
            }
            let mut is_min = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                        continue;
                    }
                    if values[ii as usize * n + jj as usize] < v {
                        is_min = false;
                    }
                }
            }
            if is_min {
                minima.push((v, cell(i, j)));
            }
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    minima.into_iter().take(6).map(|m| m.1).collect()
}

/// Solves along a sorted phase grid, seeding each point with the previous
/// modulus. On failure returns the solved prefix together with the error.
pub fn continue_in_phi(
    phi_grid: &[f64],
) -> std::result::Result<Vec<BoutrouxData>, (Vec<BoutrouxData>, usize, PvError)> {
    let mut out: Vec<BoutrouxData> = Vec::with_capacity(phi_grid.len());
    for (i, &phi) in phi_grid.iter().enumerate() {
        let seed = out.last().map(|b| b.a);
        match solve_boutroux(phi, seed) {
            Ok(bd) => out.push(bd),
            Err(e) => return Err((out, i, e)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w_squared_identity_and_sign_at_infinity() {
        let curve = CurveBranch::new(c(0.3, 0.4));
        for z in [c(2.0, 1.0), c(-0.3, 0.7), c(0.1, -2.0)] {
            let w = w_branch(&curve, z).unwrap();
            assert!((w * w - (1.0 - z * z) * (curve.a - z * z)).norm() < 1e-12);
        }
        let z = c(0.0, 1e4);
        let w = w_branch(&curve, z).unwrap();
        assert!((w / (-z * z) - 1.0).norm() < 1e-7);
    }

    #[test]
    fn branch_point_proximity_is_reported() {
        let curve = CurveBranch::new(c(0.25, 0.0));
        assert!(matches!(
            w_branch(&curve, c(0.5, 1e-10)),
            Err(PvError::BranchPointProximity { .. })
        ));
    }

    #[test]
    fn cycles_keep_their_distance() {
        let curve = CurveBranch::new(c(0.25, 0.0));
        let (a, b) = build_cycles(&curve).unwrap();
        let bp = curve.branch_points();
        assert!((a.min_distance_to(&bp) - 0.05).abs() < 1e-12);
        assert!((b.min_distance_to(&bp) - 0.05).abs() < 1e-12);
        assert!(build_cycles(&CurveBranch::new(c(1.0, 0.0))).is_err());
    }

    #[test]
    fn contractible_loop_integrates_to_zero() {
        let curve = CurveBranch::new(c(0.3, 0.2));
        let rule = GaussLegendre::new(NODES_PER_SEGMENT);
        let path = CyclePath {
            cycle: Cycle::A,
            nodes: rectangle_around(c(0.0, 1.0), c(0.5, 1.5), 0.2),
            pieces: vec![2; 4],
            safety: 0.2,
        };
        let (o, e) = cycle_integrals(&curve, &path, &rule, 1).unwrap();
        assert!(o.norm() < 1e-13 && e.norm() < 1e-13);
    }

    #[test]
    fn bilinear_relation_is_a_independent() {
        for a in [c(0.25, 0.0), c(0.3, 0.2), c(-0.5, 0.7), c(0.9, -0.3)] {
            let p = periods(&CurveBranch::new(a)).unwrap();
            let bil = p.omega_a * p.e_b - p.omega_b * p.e_a;
            assert!((bil - BILINEAR_CONSTANT).norm() < 1e-10, "A={a}: {bil}");
            assert!((p.omega_b / p.omega_a).im > 0.0);
        }
    }

    #[test]
    fn boutroux_solution_and_conjugate_symmetry() {
        let bd = solve_boutroux(0.7, None).unwrap();
        assert!((bd.a - c(0.40798753519568737, 0.4223475361311922)).norm() < 1e-8, "{}", bd.a);
        assert!((bd.ray() * bd.e_a).re.abs() < 1e-10);
        let neg = solve_boutroux(-0.7, None).unwrap();
        assert!((neg.a - bd.a.conj()).norm() < 1e-8);
    }

    #[test]
    fn continuation_reaches_small_phase() {
        let grid: Vec<f64> = (0..=8).map(|i| 0.7 - 0.05 * i as f64).collect();
        let sols = continue_in_phi(&grid).unwrap();
        let last = sols.last().unwrap();
        assert!((last.a - c(0.0718517016352758, 0.21150806953476323)).norm() < 1e-7, "{}", last.a);
    }
}
