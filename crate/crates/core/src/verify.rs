//! Fitting the frame `(x₀, β₀)` of a numerical trajectory, measuring the
//! phase shift `h` and the Lagrangian correction, and comparing both with the
//! predicted error terms over dyadic windows.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve_periods::{solve_boutroux, BoutrouxData};
use crate::dynamics::{
    integrate_ray, sample_psi_b, y_of_psi, InitialCondition, IntegratorOptions, PainleveParams,
    Trajectory,
};
use crate::error::{PvError, Result};
use crate::error_term::{predictions, tail_table, Prediction, SweepOptions};
use crate::leading_order::{
    b0, distance_to_p0, distance_to_q, max_hole_radius, psi0_with_derivative, strip_membership,
    Frame, FrameParams, StripClass, StripSpec,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One usable sample: position, `ψ` and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Complex64,
    pub psi: Complex64,
    pub b: Complex64,
}

/// Converts trajectory samples, dropping those where `ψ` or `b` is singular.
pub fn observations(traj: &Trajectory, params: &PainleveParams, bd: &BoutrouxData) -> Vec<Observation> {
    traj.samples
        .iter()
        .filter_map(|s| {
            let (psi, _, b) = sample_psi_b(s, params, traj.phi, bd.a).ok()?;
            (psi.is_finite() && b.is_finite()).then_some(Observation { x: s.x, psi, b })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Fraction of the samples, by `|x|`, used as far field.
    pub far_fraction: f64,
    /// Grid resolution per cell direction for the `x₀` search.
    pub grid: usize,
    /// Samples with `|ψ| > psi_cap·max(1, |A|^{1/2})` are dropped: near
    /// `𝒫₀` the `O(x⁻²)` constants grow like powers of `ψ`.
    pub psi_cap: f64,
    /// `|dψ₀/dx|` below this rejects a sample in `measure_h`.
    pub conditioning: f64,
    /// Hole radius `δ₀` around `𝒫₀` and `𝒬`; `None` picks `min(0.8, max/2)`.
    pub hole_radius: Option<f64>,
    /// Half-width of the strip around the ray.
    pub kappa0: f64,
    /// Allowed `β₀` spread is `beta_spread_factor/|x|_min` of the far field.
    pub beta_spread_factor: f64,
    pub min_per_window: usize,
    /// Outer offset refinements of `x₀` (each costs one contour sweep).
    pub refine_iterations: usize,
    pub sweep: SweepOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            far_fraction: 1.0 / 3.0,
            grid: 32,
            psi_cap: 1.2,
            conditioning: 0.05,
            hole_radius: None,
            kappa0: 1.0,
            beta_spread_factor: 200.0,
            min_per_window: 8,
            refine_iterations: 2,
            sweep: SweepOptions::default(),
        }
    }
}

fn far_field(obs: &[Observation], fraction: f64) -> Vec<Observation> {
    let mut v = obs.to_vec();
    v.sort_by(|a, b| a.x.norm().total_cmp(&b.x.norm()));
    let keep = ((v.len() as f64) * fraction).ceil() as usize;
    v.split_off(v.len() - keep.min(v.len()))
}

/// Result of the `x₀` fit with the far-field model `ψ₀(x + κ/x; x₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct X0Fit {
    pub x0: Complex64,
    pub kappa: Complex64,
    /// Root mean square of `ψ − ψ₀` at the optimum.
    pub rms: f64,
    /// One-sigma uncertainty of `x₀` from the Gauss–Newton normal matrix.
    pub uncertainty: f64,
    /// Best objective of a different basin divided by the best one.
    pub separation: f64,
    pub samples: usize,
}

fn objective(obs: &[Observation], frame: &Frame, kappa: Complex64) -> f64 {
    obs.iter()
        .map(|o| match psi0_with_derivative(o.x + kappa / o.x, frame) {
            Ok((p, _)) if p.is_finite() => (p - o.psi).norm_sqr().min(1e6),
            _ => 1e6,
        })
        .sum()
}

/// Fits `x₀` by least squares on `ψ` over the far field: a grid on the
/// fundamental cell, then Gauss–Newton in `(x₀, κ)`.
pub fn fit_x0(obs: &[Observation], bd: &BoutrouxData, opts: &VerifyOptions) -> Result<X0Fit> {
    let far: Vec<Observation> = far_field(obs, opts.far_fraction)
        .into_iter()
        .filter(|o| o.psi.norm() < psi_limit(bd, opts))
        .collect();
    if far.len() < 16 {
        return Err(PvError::InsufficientSamples {
            lo: obs.first().map_or(0.0, |o| o.x.norm()),
            hi: obs.last().map_or(0.0, |o| o.x.norm()),
            count: far.len(),
            needed: 16,
        });
    }
    let n = opts.grid.max(4);
    let (e1, e2) = (2.0 * bd.omega_a, 2.0 * bd.omega_b);
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let x0 = e1 * (i as f64 / n as f64) + e2 * (j as f64 / n as f64);
            Frame::new(*bd, x0, ZERO).map_or(f64::INFINITY, |f| objective(&far, &f, ZERO))
        })
        .collect();
    let at = |i: usize, j: usize| values[(i % n) * n + (j % n)];
    // local minima on the periodic grid
    let mut minima: Vec<(f64, usize, usize)> = Vec::new();
    for &(i, j) in &cells {
        let v = at(i, j);
        let is_min = (0..3).all(|di| {
            (0..3).all(|dj| (di == 1 && dj == 1) || v <= at(i + n + di - 1, j + n + dj - 1))
        });
        if is_min {
            minima.push((v, i, j));
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut refined: Vec<(f64, Complex64, Complex64, f64)> = Vec::new();
    for &(_, i, j) in minima.iter().take(4) {
        let start = e1 * (i as f64 / n as f64) + e2 * (j as f64 / n as f64);
        if let Ok(r) = gauss_newton(&far, bd, start) {
            refined.push(r);
        }
    }
    refined.sort_by(|a, b| a.0.total_cmp(&b.0));
    let Some(&(best, x0, kappa, unc)) = refined.first() else {
        return Err(PvError::Fit("x0 refinement failed from every grid minimum".into()));
    };
    let x0 = Frame::new(*bd, x0, ZERO)?.x0;
    let separation = refined
        .iter()
        .skip(1)
        .find(|r| lattice_gap(r.1, x0, bd) > 1e-3)
        .map_or(f64::INFINITY, |r| r.0 / best.max(1e-300));
    if separation < 1.5 {
        return Err(PvError::Fit(format!(
            "flat objective: two distinct x0 minima within factor {separation:.3}"
        )));
    }
    Ok(X0Fit {
        x0,
        kappa,
        rms: (best / far.len() as f64).sqrt(),
        uncertainty: unc,
        separation,
        samples: far.len(),
    })
}

/// Distance between two `x₀` values modulo `2Ω_aℤ + 2Ω_bℤ`.
pub fn lattice_gap(a: Complex64, b: Complex64, bd: &BoutrouxData) -> f64 {
    let (e1, e2) = (2.0 * bd.omega_a, 2.0 * bd.omega_b);
    let d = a - b;
    let det = e1.re * e2.im - e1.im * e2.re;
    let s = ((d.re * e2.im - d.im * e2.re) / det).round();
    let t = ((e1.re * d.im - e1.im * d.re) / det).round();
    let mut best = f64::INFINITY;
    for di in -1..=1 {
        for dj in -1..=1 {
            best = best.min((d - e1 * (s + di as f64) - e2 * (t + dj as f64)).norm());
        }
    }
    best
}

/// Solves the 2×2 complex system `M z = r`.
fn solve2(m: [[Complex64; 2]; 2], r: [Complex64; 2]) -> Option<[Complex64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.norm() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some([
        (r[0] * m[1][1] - m[0][1] * r[1]) / det,
        (m[0][0] * r[1] - m[1][0] * r[0]) / det,
    ])
}

/// Gauss–Newton on `r_j = ψ₀(x_j + κ/x_j; x₀) − ψ_j`, which is holomorphic
/// in `(x₀, κ)`, so the complex normal equations apply directly.
fn gauss_newton(
    far: &[Observation],
    bd: &BoutrouxData,
    start: Complex64,
) -> Result<(f64, Complex64, Complex64, f64)> {
    let mut x0 = start;
    let mut kappa = ZERO;
    let mut last = f64::INFINITY;
    for _ in 0..40 {
        let frame = Frame::new(*bd, x0, ZERO)?;
        let mut m = [[ZERO; 2]; 2];
        let mut rhs = [ZERO; 2];
        let mut obj = 0.0;
        for o in far {
            let (p, dp) = psi0_with_derivative(o.x + kappa / o.x, &frame)?;
            let r = p - o.psi;
            let jac = [-dp, dp / o.x];
            for a in 0..2 {
                for b in 0..2 {
                    m[a][b] += jac[a].conj() * jac[b];
                }
                rhs[a] -= jac[a].conj() * r;
            }
            obj += r.norm_sqr();
        }
        let step = solve2(m, rhs).ok_or_else(|| PvError::Fit("singular normal matrix".into()))?;
        x0 += step[0];
        kappa += step[1];
        let unc = (obj / (far.len().max(3) - 2) as f64 / m[0][0].norm()).sqrt();
        if step[0].norm() < 1e-13 && step[1].norm() < 1e-10 * (1.0 + kappa.norm()) {
            return Ok((obj, x0, kappa, unc));
        }
        if !x0.is_finite() || step[0].norm() > 10.0 {
            return Err(PvError::Fit("Gauss-Newton diverged".into()));
        }
        last = obj.min(last);
    }
    Err(PvError::NotConverged {
        what: "fit_x0",
        iterations: 40,
        residual: last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta0: Complex64,
    /// Largest deviation among the samples kept by the estimator.
    pub spread: f64,
    pub samples: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Componentwise median after dropping the worst decile by distance from the
/// first median.
fn robust_center(vals: &[Complex64]) -> (Complex64, f64) {
    let med = |v: &[Complex64]| {
        let mut re: Vec<f64> = v.iter().map(|z| z.re).collect();
        let mut im: Vec<f64> = v.iter().map(|z| z.im).collect();
        Complex64::new(median(&mut re), median(&mut im))
    };
    let first = med(vals);
    let mut by_dev: Vec<Complex64> = vals.to_vec();
    by_dev.sort_by(|a, b| (a - first).norm().total_cmp(&(b - first).norm()));
    let keep = (by_dev.len() as f64 * 0.9).ceil() as usize;
    by_dev.truncate(keep.max(1));
    let center = med(&by_dev);
    let spread = by_dev.iter().map(|z| (z - center).norm()).fold(0.0, f64::max);
    (center, spread)
}

/// Fits `β₀` from `b(x) − b₀(x)|_{β₀=0} = β₀ + O(x⁻¹)` over the far field.
pub fn fit_beta0(
    obs: &[Observation],
    x0: Complex64,
    bd: &BoutrouxData,
    opts: &VerifyOptions,
) -> Result<BetaFit> {
    let frame = Frame::new(*bd, x0, ZERO)?;
    let far = far_field(obs, opts.far_fraction);
    let vals: Vec<Complex64> = far
        .iter()
        .filter(|o| o.psi.norm() < psi_limit(bd, opts))
        .filter_map(|o| b0(o.x, &frame).ok().map(|base| o.b - base))
        .filter(|v| v.is_finite())
        .collect();
    if vals.len() < 8 {
        return Err(PvError::InsufficientSamples {
            lo: far.first().map_or(0.0, |o| o.x.norm()),
            hi: far.last().map_or(0.0, |o| o.x.norm()),
            count: vals.len(),
            needed: 8,
        });
    }
    let (beta0, spread) = robust_center(&vals);
    let x_min = far.iter().map(|o| o.x.norm()).fold(f64::INFINITY, f64::min);
    let allowed = opts.beta_spread_factor / x_min;
    if spread > allowed {
        return Err(PvError::Fit(format!(
            "beta0 spread {spread:.3e} exceeds {allowed:.3e}; wrong x0 or non-generic data"
        )));
    }
    Ok(BetaFit {
        beta0,
        spread,
        samples: vals.len(),
    })
}

/// A measured phase shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HSample {
    pub x: Complex64,
    pub h: Complex64,
    pub iterations: usize,
}

/// Why `measure_h` rejected a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HRejection {
    IllConditioned,
    Diverged,
    BranchAmbiguity,
}

/// Smallest nonzero element of `Ω_aℤ + Ω_bℤ`.
fn min_lattice_spacing(bd: &BoutrouxData) -> f64 {
    let mut best = f64::INFINITY;
    for i in -2i32..=2 {
        for j in -2i32..=2 {
            if i == 0 && j == 0 {
                continue;
            }
            best = best.min((bd.omega_a * i as f64 + bd.omega_b * j as f64).norm());
        }
    }
    best
}

/// Solves `ψ₀(x + h) = ψ` by Newton from `h = 0`, at most five iterations.
pub fn measure_h_at(
    obs: &Observation,
    frame: &Frame,
    opts: &VerifyOptions,
) -> std::result::Result<HSample, HRejection> {
    let (_, d0) = psi0_with_derivative(obs.x, frame).map_err(|_| HRejection::Diverged)?;
    if d0.norm() < opts.conditioning {
        return Err(HRejection::IllConditioned);
    }
    let limit = 0.25 * min_lattice_spacing(&frame.bd);
    let mut h = ZERO;
    for it in 1..=5 {
        let (p, dp) = psi0_with_derivative(obs.x + h, frame).map_err(|_| HRejection::Diverged)?;
        if dp.norm() < 1e-300 {
            return Err(HRejection::Diverged);
        }
        let step = (p - obs.psi) / dp;
        h -= step;
        if !h.is_finite() {
            return Err(HRejection::Diverged);
        }
        if h.norm() > limit {
            return Err(HRejection::BranchAmbiguity);
        }
        if step.norm() <= 1e-14 * (1.0 + obs.x.norm()) {
            return Ok(HSample {
                x: obs.x,
                h,
                iterations: it,
            });
        }
    }
    Err(HRejection::Diverged)
}

/// `h` at every sample that passes the conditioning and branch checks.
pub fn measure_h(
    obs: &[Observation],
    frame: &Frame,
    opts: &VerifyOptions,
) -> (Vec<HSample>, Vec<(Complex64, HRejection)>) {
    let res: Vec<_> = obs
        .par_iter()
        .map(|o| (o.x, measure_h_at(o, frame, opts)))
        .collect();
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (x, r) in res {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => bad.push((x, e)),
        }
    }
    (ok, bad)
}

/// Largest `|ψ|` a sample may have to enter the fits and the report.
pub fn psi_limit(bd: &BoutrouxData, opts: &VerifyOptions) -> f64 {
    opts.psi_cap * bd.a.sqrt().norm().max(1.0)
}

/// Hole radius used for `Š`.
pub fn hole_radius(frame: &Frame, opts: &VerifyOptions) -> f64 {
    opts.hole_radius
        .unwrap_or_else(|| (0.5 * max_hole_radius(frame)).min(0.8))
}

/// Samples that lie in `Š` for the frame.
pub fn in_strip(obs: &[Observation], frame: &Frame, t_inf: f64, opts: &VerifyOptions) -> Result<Vec<Observation>> {
    let strip = StripSpec::new(frame.bd.phi, t_inf, opts.kappa0, hole_radius(frame, opts), *frame)?;
    Ok(obs
        .iter()
        .copied()
        .filter(|o| strip_membership(o.x, &strip) == StripClass::InSCheck)
        .collect())
}

/// Least-squares fit of `r_j ≈ Σ c_k x_j^{-k}` over the given powers, with
/// weights `|x_j|²` so that an `O(x⁻¹)` scatter is weighted evenly.
/// Returns the coefficients in the same order.
fn fit_inverse_powers(xs: &[Complex64], rs: &[Complex64], powers: &[i32]) -> Option<Vec<Complex64>> {
    let n = powers.len();
    let mut m = vec![vec![ZERO; n + 1]; n];
    for (x, r) in xs.iter().zip(rs) {
        let basis: Vec<Complex64> = powers.iter().map(|&k| x.powi(-k)).collect();
        let w = x.norm_sqr();
        for a in 0..n {
            for b in 0..n {
                m[a][b] += w * basis[a].conj() * basis[b];
            }
            m[a][n] += w * basis[a].conj() * r;
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm()))?;
        if m[piv][col].norm() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..=n {
                    let v = m[col][k];
                    m[row][k] -= f * v;
                }
            }
        }
    }
    let c: Vec<Complex64> = (0..n).map(|i| m[i][n] / m[i][i]).collect();
    c.iter().all(|v| v.is_finite()).then_some(c)
}

/// Constant offset of `r` with `x⁻¹` and `x⁻²` nuisance terms.
fn offset_with_nuisance(xs: &[Complex64], rs: &[Complex64]) -> Option<Complex64> {
    fit_inverse_powers(xs, rs, &[0, 1, 2]).map(|c| c[0])
}

/// Record of the frame fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFit {
    pub frame: FrameParams,
    pub x0_fit: X0Fit,
    pub beta_fit: BetaFit,
    /// `(δx₀, δβ₀)` applied by each refinement pass.
    pub refinements: Vec<(Complex64, Complex64)>,
}

/// Predictions, measured `h` and the observations they belong to.
struct Evaluated {
    obs: Vec<Observation>,
    hs: Vec<HSample>,
    preds: Vec<Prediction>,
    table: crate::error_term::TailTable,
}

fn evaluate(
    obs: &[Observation],
    frame: &Frame,
    params: &PainleveParams,
    t_inf: f64,
    opts: &VerifyOptions,
) -> Result<Evaluated> {
    let strip_obs = in_strip(obs, frame, t_inf, opts)?;
    let mut kept = Vec::new();
    let mut hs = Vec::new();
    let cap = psi_limit(&frame.bd, opts);
    for o in strip_obs.iter().filter(|o| o.psi.norm() < cap) {
        if let Ok(h) = measure_h_at(o, frame, opts) {
            kept.push(*o);
            hs.push(h);
        }
    }
    if kept.is_empty() {
        return Err(PvError::Fit("no sample survives the strip and conditioning filters".into()));
    }
    let phi = frame.bd.phi;
    let ray = Complex64::from_polar(1.0, -phi);
    let ts: Vec<f64> = kept.iter().map(|o| (o.x * ray).re).collect();
    let table = tail_table(frame, params, &ts, &opts.sweep)?;
    let preds = predictions(frame, params, &table)?;
    Ok(Evaluated {
        obs: kept,
        hs,
        preds,
        table,
    })
}

fn b_residuals(ev: &Evaluated, frame: &Frame) -> Result<Vec<Complex64>> {
    ev.obs
        .iter()
        .zip(&ev.hs)
        .zip(&ev.preds)
        .map(|((o, h), p)| Ok(o.b - b0(o.x, frame)? - p.b_corr(h.h)))
        .collect()
}

/// Fits the frame: far-field `x₀` and `β₀`, then offset refinements that
/// remove the constant parts of `h_num − h_asym` and of the `b` residual.
/// A shift `x₀ → x₀ + δ` moves `h_num` by exactly `δ`, and `β₀ → β₀ + ε`
/// moves `b₀` by `ε`; an `x⁻²` nuisance term keeps the remainder from
/// biasing the offsets.
pub fn fit_frame(
    obs: &[Observation],
    bd: &BoutrouxData,
    params: &PainleveParams,
    opts: &VerifyOptions,
) -> Result<(Frame, FrameFit)> {
    let x0_fit = fit_x0(obs, bd, opts)?;
    let beta_fit = fit_beta0(obs, x0_fit.x0, bd, opts)?;
    let mut frame = Frame::new(*bd, x0_fit.x0, beta_fit.beta0)?;
    let t_inf = obs
        .iter()
        .map(|o| o.x.norm())
        .fold(f64::INFINITY, f64::min)
        - 1e-9;
    let mut refinements = Vec::new();
    for _ in 0..opts.refine_iterations {
        let mut ev = evaluate(obs, &frame, params, t_inf, opts)?;
        // β₀ enters the predictions only through coefficients: no new sweep
        let mut dbeta_total = ZERO;
        for _ in 0..4 {
            let rs = b_residuals(&ev, &frame)?;
            let xs: Vec<Complex64> = ev.obs.iter().map(|o| o.x).collect();
            let d = offset_with_nuisance(&xs, &rs).ok_or_else(|| PvError::Fit("b offset fit".into()))?;
            frame = Frame::new(*bd, frame.x0, frame.beta0 + d)?;
            ev.preds = predictions(&frame, params, &ev.table)?;
            dbeta_total += d;
            if d.norm() < 1e-12 {
                break;
            }
        }
        let xs: Vec<Complex64> = ev.obs.iter().map(|o| o.x).collect();
        let rs: Vec<Complex64> = ev.hs.iter().zip(&ev.preds).map(|(h, p)| h.h - p.h_asym).collect();
        let c = offset_with_nuisance(&xs, &rs).ok_or_else(|| PvError::Fit("h offset fit".into()))?;
        frame = Frame::new(*bd, frame.x0 - c, frame.beta0)?;
        refinements.push((-c, dbeta_total));
        if c.norm() < 1e-12 {
            break;
        }
    }
    if opts.refine_iterations > 0 {
        // the last x₀ move changes b₀; re-fit its constant once more
        let mut ev = evaluate(obs, &frame, params, t_inf, opts)?;
        let mut dbeta_total = ZERO;
        for _ in 0..4 {
            let rs = b_residuals(&ev, &frame)?;
            let xs: Vec<Complex64> = ev.obs.iter().map(|o| o.x).collect();
            let d = offset_with_nuisance(&xs, &rs).ok_or_else(|| PvError::Fit("b offset fit".into()))?;
            frame = Frame::new(*bd, frame.x0, frame.beta0 + d)?;
            ev.preds = predictions(&frame, params, &ev.table)?;
            dbeta_total += d;
            if d.norm() < 1e-12 {
                break;
            }
        }
        refinements.push((ZERO, dbeta_total));
    }
    let params_out = frame.params();
    Ok((
        frame,
        FrameFit {
            frame: params_out,
            x0_fit,
            beta_fit,
            refinements,
        },
    ))
}

/// One row of a comparison report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: f64,
    pub x: Complex64,
    pub psi_num: Complex64,
    pub h_num: Complex64,
    /// `Δ = h/2`
    pub delta_num: Complex64,
    pub h_pred: Complex64,
    pub h_detailed: Complex64,
    pub b_num: Complex64,
    pub b0: Complex64,
    pub b_corr_pred: Complex64,
    pub budget: f64,
}

/// Statistics over `|x| ∈ [t_lo, t_hi)`. The order statistics are scaled by
/// `|x|` so an `O(x⁻²)` mismatch halves from one window to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub t_lo: f64,
    pub t_hi: f64,
    pub count: usize,
    /// `sup |x·Δ_num|`
    pub w: f64,
    /// `sup |x|·|h_num − h_asym|`
    pub r_h: f64,
    /// `sup |x|·|b_num − b₀|`
    pub r_b_raw: f64,
    /// `sup |x|·|b_num − b₀ − b_corr|`
    pub r_b: f64,
    /// `sup |x|·|h_detailed − h_asym|`
    pub r_detailed: f64,
    /// `sup` of the prediction budget
    pub budget: f64,
}

/// Ratios `R(2T)/R(T)` for consecutive windows and the gate outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTest {
    pub ratios: Vec<f64>,
    /// Longest run of consecutive ratios inside the band.
    pub longest_run: usize,
    pub pass: bool,
}

pub const ORDER_BAND: (f64, f64) = (0.35, 0.72);

impl OrderTest {
    pub fn from_values(values: &[f64], required_run: usize) -> Self {
        let ratios: Vec<f64> = values.windows(2).map(|w| w[1] / w[0]).collect();
        let mut run = 0;
        let mut longest = 0;
        for r in &ratios {
            if *r >= ORDER_BAND.0 && *r <= ORDER_BAND.1 {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        Self {
            ratios,
            longest_run: longest,
            pass: longest >= required_run,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    /// `max W / min W < 2` over at least three windows.
    pub w_bounded: bool,
    pub w_spread: f64,
    pub h_order: OrderTest,
    pub b_order: OrderTest,
    pub detailed_order: OrderTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub phi: f64,
    pub a: Complex64,
    pub frame: FrameParams,
    pub rows: Vec<ReportRow>,
    pub windows: Vec<WindowStat>,
    pub gates: Gates,
    pub rejected: usize,
    pub sweep_cutoff: f64,
}

/// Dyadic windows `[T₀2^k, T₀2^{k+1})` starting at the smallest `|x|`.
pub fn window_stats(rows: &[ReportRow], min_count: usize) -> Result<Vec<WindowStat>> {
    let t0 = rows.iter().map(|r| r.t).fold(f64::INFINITY, f64::min);
    let t_end = rows.iter().map(|r| r.t).fold(0.0, f64::max);
    let mut out = Vec::new();
    let mut lo = t0;
    while lo < t_end * (1.0 - 1e-12) {
        let hi = 2.0 * lo;
        let sel: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| r.t >= lo && (r.t < hi || (hi >= t_end && r.t <= hi)))
            .collect();
        if sel.len() < min_count {
            return Err(PvError::InsufficientSamples {
                lo,
                hi,
                count: sel.len(),
                needed: min_count,
            });
        }
        let sup = |f: &dyn Fn(&ReportRow) -> f64| sel.iter().map(|r| f(r)).fold(0.0, f64::max);
        out.push(WindowStat {
            t_lo: lo,
            t_hi: hi,
            count: sel.len(),
            w: sup(&|r| (r.x * r.delta_num).norm()),
            r_h: sup(&|r| r.x.norm() * (r.h_num - r.h_pred).norm()),
            r_b_raw: sup(&|r| r.x.norm() * (r.b_num - r.b0).norm()),
            r_b: sup(&|r| r.x.norm() * (r.b_num - r.b0 - r.b_corr_pred).norm()),
            r_detailed: sup(&|r| r.x.norm() * (r.h_detailed - r.h_pred).norm()),
            budget: sup(&|r| r.budget),
        });
        lo = hi;
    }
    Ok(out)
}

pub fn gates(windows: &[WindowStat]) -> Gates {
    let ws: Vec<f64> = windows.iter().map(|w| w.w).collect();
    let w_max = ws.iter().copied().fold(0.0, f64::max);
    let w_min = ws.iter().copied().fold(f64::INFINITY, f64::min);
    let w_spread = w_max / w_min;
    let col = |f: fn(&WindowStat) -> f64| windows.iter().map(f).collect::<Vec<_>>();
    Gates {
        w_bounded: ws.len() >= 3 && w_spread.is_finite() && w_spread < 2.0,
        w_spread,
        h_order: OrderTest::from_values(&col(|w| w.r_h), 2),
        b_order: OrderTest::from_values(&col(|w| w.r_b), 2),
        detailed_order: OrderTest::from_values(&col(|w| w.r_detailed), 2),
    }
}

/// Builds the comparison report for a fitted frame.
pub fn compare(
    obs: &[Observation],
    frame: &Frame,
    params: &PainleveParams,
    opts: &VerifyOptions,
) -> Result<ComparisonReport> {
    let t_inf = obs
        .iter()
        .map(|o| o.x.norm())
        .fold(f64::INFINITY, f64::min)
        - 1e-9;
    let ev = evaluate(obs, frame, params, t_inf, opts)?;
    let ray = Complex64::from_polar(1.0, -frame.bd.phi);
    let rows: Vec<ReportRow> = ev
        .obs
        .iter()
        .zip(&ev.hs)
        .zip(&ev.preds)
        .map(|((o, h), p)| {
            let b0v = b0(o.x, frame)?;
            Ok(ReportRow {
                t: (o.x * ray).re,
                x: o.x,
                psi_num: o.psi,
                h_num: h.h,
                delta_num: 0.5 * h.h,
                h_pred: p.h_asym,
                h_detailed: p.h_detailed,
                b_num: o.b,
                b0: b0v,
                b_corr_pred: p.b_corr(h.h),
                budget: p.budget,
            })
        })
        .collect::<Result<_>>()?;
    let windows = window_stats(&rows, opts.min_per_window)?;
    let gates = gates(&windows);
    Ok(ComparisonReport {
        phi: frame.bd.phi,
        a: frame.bd.a,
        frame: frame.params(),
        rows,
        windows,
        gates,
        rejected: obs.len() - ev.obs.len(),
        sweep_cutoff: ev.table.cutoff,
    })
}

/// Whether a point is clear of both lattices by the hole radius.
pub fn clear_of_holes(x: Complex64, frame: &Frame, radius: f64) -> bool {
    distance_to_p0(x, frame) >= radius && distance_to_q(x, frame) >= radius
}

/// Stage of the end-to-end pipeline, reported with failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Boutroux,
    Integrate,
    Fit,
    Compare,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Boutroux => "boutroux",
            Stage::Integrate => "integrate",
            Stage::Fit => "fit",
            Stage::Compare => "compare",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: PvError,
}

fn at(stage: Stage) -> impl FnOnce(PvError) -> PipelineError {
    move |source| PipelineError { stage, source }
}

/// Initial data on the leading-order orbit: `y` and `dy/dt` from
/// `ψ₀(e^{iφ}t₀)` for the given frame.
pub fn leading_order_ic(frame: &Frame, t0: f64) -> Result<InitialCondition> {
    let ray = frame.bd.ray();
    let (p, dp) = psi0_with_derivative(ray * t0, frame)?;
    Ok(InitialCondition {
        t0,
        y0: y_of_psi(p)?,
        dy0: ray * (-2.0 * dp / ((p - 1.0) * (p - 1.0))),
    })
}

/// Everything the pipeline needs besides the Boutroux data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInput {
    pub params: PainleveParams,
    pub phi: f64,
    pub a_seed: Option<Complex64>,
    /// Explicit initial data, or a frame to seed it from.
    pub ic: Option<InitialCondition>,
    pub seed_frame: FrameParams,
    pub t0: f64,
    pub t_end: f64,
    /// Samples with `Re t` below this are dropped before fitting.
    pub t_inf: f64,
    pub sample_step: f64,
    pub integrator: IntegratorOptions,
    pub verify: VerifyOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub bd: BoutrouxData,
    pub ic: InitialCondition,
    pub trajectory: Trajectory,
    pub fit: FrameFit,
    pub report: ComparisonReport,
}

/// Output times `t0 + k·step` up to `t_end`.
pub fn sample_times(t0: f64, t_end: f64, step: f64) -> Vec<f64> {
    let n = ((t_end - t0) / step + 1e-9).floor() as usize;
    (1..=n).map(|k| t0 + step * k as f64).collect()
}

/// Boutroux solve, integration, frame fit and comparison.
pub fn run_pipeline(input: &PipelineInput) -> std::result::Result<PipelineOutput, PipelineError> {
    let bd = solve_boutroux(input.phi, input.a_seed).map_err(at(Stage::Boutroux))?;
    let ic = match input.ic {
        Some(ic) => ic,
        None => {
            let f = Frame::new(bd, input.seed_frame.x0, input.seed_frame.beta0)
                .map_err(at(Stage::Integrate))?;
            leading_order_ic(&f, input.t0).map_err(at(Stage::Integrate))?
        }
    };
    let outs = sample_times(ic.t0, input.t_end, input.sample_step);
    let trajectory = integrate_ray(&ic, input.t_end, &input.params, input.phi, &outs, &input.integrator)
        .map_err(at(Stage::Integrate))?;
    let obs: Vec<Observation> = observations(&trajectory, &input.params, &bd)
        .into_iter()
        .filter(|o| (o.x * Complex64::from_polar(1.0, -input.phi)).re >= input.t_inf)
        .collect();
    let (frame, fit) = fit_frame(&obs, &bd, &input.params, &input.verify).map_err(at(Stage::Fit))?;
    let report = compare(&obs, &frame, &input.params, &input.verify).map_err(at(Stage::Compare))?;
    Ok(PipelineOutput {
        bd,
        ic,
        trajectory,
        fit,
        report,
    })
}
