//! Error-term formulas: `F₁`, `F₂`, the tail integrals `∫^x_∞`, and the
//! predicted `h(x)` and `b(x) − b₀(x)`.
//!
//! Every tail integral is assembled from a fixed table of elementary
//! integrands `f(ξ) ξ^{−p}` with `f` built from `ψ₀`, `𝔟` and
//! `D = A − ψ₀²`. A single sweep along the canonical contour evaluates all of
//! them at once for a sorted list of points on the ray.
//!
//! Canonical contour: the ray `Im t = 0` from `x` to `∞`, with a box detour
//! around each point of `𝒫₀ ∪ 𝒬` that comes within the detour radius. The box
//! passes on the side of the point facing the line `Im t = 0`, so the contour
//! never crosses the cut `l(σ)` that leaves `σ` away from that line.
//!
//! Orientation: `∫^x_∞ F dξ = −∫_x^∞ F dξ`.
//!
//! Tails: the integrands are quasi-periodic along the ray, so the integral
//! is smoothly truncated with `χ(t/R)` (`χ = 1` on `[0, 1]`, `0` beyond `2`,
//! a `C⁴` polynomial in between, continued as a polynomial on detours). For
//! `p = 2` the truncated part is restored from the windowed mean of `f`.
//! The bound reported is the change between cutoffs `R/2` and `R`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::PainleveParams;
use crate::error::{PvError, Result};
use crate::leading_order::{
    distance_to_p0, distance_to_q, frak_b, max_hole_radius, pole_lattice, psi0_with_derivative,
    Frame, RayWindow,
};
use crate::primitives::{primitive_with, PrimitiveKind};
use crate::quadrature::GaussLegendre;
use crate::special_fn::log_theta;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative proximity at which the denominators of `F₁`, `F₂` are rejected.
pub const DENOMINATOR_FUZZ: f64 = 1e-10;

/// `F₁(ψ, b) = (4(θ₀+θ₁)ψ − b) / (2(A − ψ²))`.
#[allow(non_snake_case)]
pub fn F1(psi: Complex64, b: Complex64, a: Complex64, params: &PainleveParams) -> Result<Complex64> {
    let d = a - psi * psi;
    if d.norm() < DENOMINATOR_FUZZ * a.norm().max(1.0) {
        return Err(PvError::Singular {
            what: "F1 denominator",
            at: psi,
            detail: "psi^2 = A".into(),
        });
    }
    Ok((4.0 * params.sum01() * psi - b) / (2.0 * d))
}

/// `F₂(ψ) = 2(2(θ₀−θ₁)θ_∞ψ + (θ₀−θ₁)² + θ_∞²) / ((1 − ψ²)(A − ψ²))`.
#[allow(non_snake_case)]
pub fn F2(psi: Complex64, a: Complex64, params: &PainleveParams) -> Result<Complex64> {
    let d = (1.0 - psi * psi) * (a - psi * psi);
    if d.norm() < DENOMINATOR_FUZZ * a.norm().max(1.0) {
        return Err(PvError::Singular {
            what: "F2 denominator",
            at: psi,
            detail: "psi^2 in {1, A}".into(),
        });
    }
    Ok(2.0 * (params.cross() * psi + params.quad()) / d)
}

// ---------------------------------------------------------------------------
// contour

/// Box detour spanning `lo ≤ Re t ≤ hi` at height `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detour {
    pub center: Complex64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// The ray `Im t = 0` with box detours, in the `t`-plane.
#[derive(Debug, Clone)]
pub struct CanonicalContour {
    pub phi: f64,
    pub radius: f64,
    pub detours: Vec<Detour>,
    frame: Frame,
    ray: Complex64,
}

/// Default detour radius: well inside the hole-separation limit.
pub fn default_detour_radius(frame: &Frame) -> f64 {
    (0.5 * max_hole_radius(frame)).min(0.5)
}

impl CanonicalContour {
    pub fn new(frame: &Frame, t_lo: f64, t_hi: f64, radius: f64) -> Result<Self> {
        let limit = 0.5 * max_hole_radius(frame);
        if !(radius > 0.0 && radius <= limit) {
            return Err(PvError::Invalid(format!(
                "detour radius {radius} must lie in (0, {limit}]"
            )));
        }
        let phi = frame.bd.phi;
        let win = RayWindow {
            phi,
            t_lo: t_lo - 2.0 * radius,
            t_hi: t_hi + 2.0 * radius,
            half_width: radius,
        };
        let (p, q) = pole_lattice(frame, &win);
        let rot = Complex64::from_polar(1.0, -phi);
        let mut detours: Vec<Detour> = p
            .into_iter()
            .chain(q)
            .map(|s| {
                let t = s * rot;
                let level = if t.im >= 0.0 { t.im - radius } else { t.im + radius };
                Detour {
                    center: t,
                    lo: t.re - radius,
                    hi: t.re + radius,
                    level,
                }
            })
            .collect();
        detours.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        Ok(Self {
            phi,
            radius,
            detours,
            frame: *frame,
            ray: Complex64::from_polar(1.0, phi),
        })
    }

    pub fn ray(&self) -> Complex64 {
        self.ray
    }

    /// True when the real point `t` lies under a detour (not on the contour).
    pub fn in_detour(&self, t: f64) -> bool {
        self.detours.iter().any(|d| t > d.lo && t < d.hi)
    }

    fn detour_at(&self, t: f64) -> Option<&Detour> {
        self.detours.iter().find(|d| t > d.lo && t < d.hi)
    }

    /// Straight legs in the `t`-plane from real `a` to real `b > a`. An
    /// endpoint under a detour joins the box by a vertical segment on the
    /// side away from the singular point.
    pub fn legs(&self, a: f64, b: f64) -> Result<Vec<(Complex64, Complex64)>> {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let mut out = Vec::new();
        let mut cur = a;
        if let Some(d) = self.detour_at(a) {
            if (c(a, 0.0) - d.center).norm() < 0.5 * self.radius {
                return Err(PvError::Invalid(format!("contour endpoint {a} too close to a singular point")));
            }
            let end = b.min(d.hi);
            out.push((c(a, 0.0), c(a, d.level)));
            out.push((c(a, d.level), c(end, d.level)));
            out.push((c(end, d.level), c(end, 0.0)));
            cur = end;
        }
        for d in &self.detours {
            if cur >= b || d.hi <= cur || d.lo >= b {
                continue;
            }
            if d.lo > cur {
                out.push((c(cur, 0.0), c(d.lo, 0.0)));
            }
            let end = b.min(d.hi);
            out.push((c(d.lo, 0.0), c(d.lo, d.level)));
            out.push((c(d.lo, d.level), c(end, d.level)));
            out.push((c(end, d.level), c(end, 0.0)));
            cur = end;
        }
        if b > cur {
            out.push((c(cur, 0.0), c(b, 0.0)));
        }
        Ok(out)
    }

    fn singular_distance(&self, xi: Complex64) -> f64 {
        distance_to_p0(xi, &self.frame).min(distance_to_q(xi, &self.frame))
    }

    /// Visits Gauss–Legendre nodes `(t, dt-weight)` along the contour from
    /// `a` to `b`, panels shrinking near singular points.
    pub fn for_each_node<F>(&self, rule: &GaussLegendre, a: f64, b: f64, h_max: f64, mut visit: F) -> Result<()>
    where
        F: FnMut(Complex64, Complex64) -> Result<()>,
    {
        for (p, q) in self.legs(a, b)? {
            let len = (q - p).norm();
            if len == 0.0 {
                continue;
            }
            let dir = (q - p) / len;
            let mut s = 0.0;
            while s < len {
                let t0 = p + dir * s;
                let d = self.singular_distance(t0 * self.ray);
                let h = (0.5 * d).clamp(1e-4, h_max).min(len - s);
                let mid = t0 + dir * (0.5 * h);
                let half = dir * (0.5 * h);
                for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                    visit(mid + half * *x, half * *w)?;
                }
                s += h;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// elementary integrands

/// Values of the frame at one point of the contour.
#[derive(Debug, Clone, Copy)]
pub struct NodeValues {
    pub psi: Complex64,
    pub dpsi: Complex64,
    /// `A − ψ₀²`
    pub d: Complex64,
    /// `𝔟`
    pub g: Complex64,
}

impl NodeValues {
    pub fn at(xi: Complex64, frame: &Frame) -> Result<Self> {
        let (psi, dpsi) = psi0_with_derivative(xi, frame)?;
        Ok(Self {
            psi,
            dpsi,
            d: frame.bd.a - psi * psi,
            g: frak_b(xi, frame)?,
        })
    }
}

/// Elementary integrands `f(ξ)`, each paired with a power `ξ^{−p}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Elem {
    PsiOverD1,
    InvD1,
    GOverD1,
    Psi2OverD2,
    InvD2,
    G2OverD2,
    PsiOverD2,
    GPsiOverD2,
    GOverD2,
    Psi2OverD,
    InvD,
    G2OverD,
    PsiOverD,
    GPsiOverD,
    GOverD,
    G,
    F2,
}

pub const N_ELEM: usize = 17;

/// Elliptic factor `E` with a closed-form primitive, for `g^j E ξ^{−p}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    PsiOverD,
    InvD,
    Psi2OverD2,
    InvD2,
    PsiOverD2,
    Psi2OverD,
    One,
    F2,
}

impl Elem {
    pub const ALL: [Elem; N_ELEM] = [
        Elem::PsiOverD1,
        Elem::InvD1,
        Elem::GOverD1,
        Elem::Psi2OverD2,
        Elem::InvD2,
        Elem::G2OverD2,
        Elem::PsiOverD2,
        Elem::GPsiOverD2,
        Elem::GOverD2,
        Elem::Psi2OverD,
        Elem::InvD,
        Elem::G2OverD,
        Elem::PsiOverD,
        Elem::GPsiOverD,
        Elem::GOverD,
        Elem::G,
        Elem::F2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(p, j, E)`: the integrand is `g^j E(ξ) ξ^{−p}`.
    pub fn shape(self) -> (i32, u32, Factor) {
        use Elem::*;
        match self {
            PsiOverD1 => (1, 0, Factor::PsiOverD),
            InvD1 => (1, 0, Factor::InvD),
            GOverD1 => (1, 1, Factor::InvD),
            Psi2OverD2 => (2, 0, Factor::Psi2OverD2),
            InvD2 => (2, 0, Factor::InvD2),
            G2OverD2 => (2, 2, Factor::InvD2),
            PsiOverD2 => (2, 0, Factor::PsiOverD2),
            GPsiOverD2 => (2, 1, Factor::PsiOverD2),
            GOverD2 => (2, 1, Factor::InvD2),
            Psi2OverD => (2, 0, Factor::Psi2OverD),
            InvD => (2, 0, Factor::InvD),
            G2OverD => (2, 2, Factor::InvD),
            PsiOverD => (2, 0, Factor::PsiOverD),
            GPsiOverD => (2, 1, Factor::PsiOverD),
            GOverD => (2, 1, Factor::InvD),
            G => (2, 1, Factor::One),
            F2 => (2, 0, Factor::F2),
        }
    }

    pub fn power(self) -> i32 {
        self.shape().0
    }
}

impl Factor {
    pub fn eval(self, v: &NodeValues, params: &PainleveParams) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        match self {
            Factor::PsiOverD => v.psi / v.d,
            Factor::InvD => one / v.d,
            Factor::Psi2OverD2 => v.psi * v.psi / (v.d * v.d),
            Factor::InvD2 => one / (v.d * v.d),
            Factor::PsiOverD2 => v.psi / (v.d * v.d),
            Factor::Psi2OverD => v.psi * v.psi / v.d,
            Factor::One => one,
            Factor::F2 => {
                2.0 * (params.cross() * v.psi + params.quad()) / ((1.0 - v.psi * v.psi) * v.d)
            }
        }
    }

    /// A primitive in `ξ` of the factor, via the closed-form primitives in
    /// `σ = (ξ − x₀)/2`.
    pub fn primitive(
        self,
        xi: Complex64,
        frame: &Frame,
        params: &PainleveParams,
    ) -> Result<Complex64> {
        let bd = &frame.bd;
        let ell = frame.elliptic();
        let (a, k) = (bd.a, bd.k);
        let s = 0.5 * (xi - frame.x0);
        let p = |kind| primitive_with(kind, s, bd, ell, 1e-9);
        use PrimitiveKind::*;
        Ok(match self {
            Factor::PsiOverD => 2.0 / k * p(SnOverOneMinusSn2)?,
            Factor::InvD => 2.0 / a * p(InvOneMinusSn2)?,
            Factor::Psi2OverD2 => 2.0 / a * (p(InvOneMinusSn2Sq)? - p(InvOneMinusSn2)?),
            Factor::InvD2 => 2.0 / (a * a) * p(InvOneMinusSn2Sq)?,
            Factor::PsiOverD2 => 2.0 * k / (a * a) * p(SnOverOneMinusSn2Sq)?,
            Factor::Psi2OverD => 2.0 * (p(InvOneMinusSn2)? - s),
            Factor::One => xi,
            Factor::F2 => {
                // 1/((1−s²)(1−As²)) = (1/(1−s²) − A/(1−As²))/(1−A)
                let even = (p(InvOneMinusSn2)? - a * p(InvOneMinusASn2)?) / (a * (1.0 - a));
                let odd = k * (p(SnOverOneMinusSn2)? - a * p(SnOverOneMinusASn2)?) / (a * (1.0 - a));
                2.0 * 2.0 * (params.quad() * even + params.cross() * odd)
            }
        })
    }
}

impl Elem {
    pub fn eval(self, v: &NodeValues, params: &PainleveParams) -> Complex64 {
        let (_, j, f) = self.shape();
        let e = f.eval(v, params);
        match j {
            0 => e,
            1 => v.g * e,
            _ => v.g * v.g * e,
        }
    }
}

/// `d𝔟/dξ = ℰ_a/4 + (ϑ'/ϑ)'((ξ − x₀)/(2Ω_a))/(2Ω_a)`.
pub fn frak_b_derivative(xi: Complex64, frame: &Frame) -> Result<Complex64> {
    let bd = &frame.bd;
    let lt = log_theta((xi - frame.x0) / (2.0 * bd.omega_a), &frame.elliptic().theta)?;
    Ok(0.25 * bd.e_a + lt.l2 / (2.0 * bd.omega_a))
}

// ---------------------------------------------------------------------------
// tail sweep

/// Settings for the contour sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    /// Cutoff `R = max(cutoff_factor · t_max, min_cutoff)`.
    pub cutoff_factor: f64,
    pub min_cutoff: f64,
    pub h_max: f64,
    pub nodes: usize,
    /// `None` picks [`default_detour_radius`].
    pub detour_radius: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            cutoff_factor: 10.0,
            min_cutoff: 1000.0,
            h_max: 1.0,
            nodes: 16,
            detour_radius: None,
        }
    }
}

fn smoothstep(s: Complex64) -> Complex64 {
    let s2 = s * s;
    s2 * s2 * s * (126.0 - 420.0 * s + 540.0 * s2 - 315.0 * s2 * s + 70.0 * s2 * s2)
}

fn smoothstep_slope(s: Complex64) -> Complex64 {
    let u = s * (1.0 - s);
    let u2 = u * u;
    630.0 * u2 * u2
}

/// `χ(u)` continued off the real axis piecewise by `Re u`.
fn cutoff(u: Complex64) -> Complex64 {
    if u.re <= 1.0 {
        Complex64::new(1.0, 0.0)
    } else if u.re >= 2.0 {
        ZERO
    } else {
        1.0 - smoothstep(u - 1.0)
    }
}

/// `−χ'(u)`, a unit-mass bump on `[1, 2]`.
fn cutoff_density(u: Complex64) -> Complex64 {
    if u.re <= 1.0 || u.re >= 2.0 {
        ZERO
    } else {
        smoothstep_slope(u - 1.0)
    }
}

/// `∫₁^∞ (1 − χ(u)) u⁻² du`.
fn cutoff_tail_constant() -> f64 {
    let rule = GaussLegendre::new(32);
    let v = rule.segment(Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0), |u| {
        smoothstep(u - 1.0) / (u * u)
    });
    v.re + 0.5
}

/// Tail integrals `∫^{x_i}_∞` of every elementary integrand at sorted ray
/// points `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailTable {
    pub ts: Vec<f64>,
    pub values: Vec<[Complex64; N_ELEM]>,
    /// Per-integrand bound, from comparing cutoffs `R/2` and `R`.
    pub bounds: [f64; N_ELEM],
    pub cutoff: f64,
    /// Windowed means of `f` over `[R, 2R]`.
    pub means: [Complex64; N_ELEM],
}

impl TailTable {
    pub fn get(&self, i: usize, e: Elem) -> Complex64 {
        self.values[i][e.index()]
    }
}

struct SweepState<'a> {
    frame: &'a Frame,
    params: &'a PainleveParams,
    ray: Complex64,
    r_cut: f64,
    half: f64,
    acc_r: [Complex64; N_ELEM],
    acc_h: [Complex64; N_ELEM],
    mean_r: [Complex64; N_ELEM],
    mean_h: [Complex64; N_ELEM],
}

impl SweepState<'_> {
    fn node(&mut self, t: Complex64, wdt: Complex64) -> Result<()> {
        let xi = t * self.ray;
        let v = NodeValues::at(xi, self.frame)?;
        let inv = 1.0 / xi;
        let inv2 = inv * inv;
        let chi_r = cutoff(t / self.r_cut);
        let chi_h = cutoff(t / self.half);
        let w_r = cutoff_density(t / self.r_cut) / self.r_cut;
        let w_h = cutoff_density(t / self.half) / self.half;
        let dxi = wdt * self.ray;
        for (i, e) in Elem::ALL.into_iter().enumerate() {
            let f = e.eval(&v, self.params);
            let term = f * if e.power() == 1 { inv } else { inv2 } * dxi;
            self.acc_r[i] += term * chi_r;
            self.acc_h[i] += term * chi_h;
            self.mean_r[i] += f * w_r * wdt;
            self.mean_h[i] += f * w_h * wdt;
        }
        Ok(())
    }
}

/// One sweep of the canonical contour from `t_0` out to `2R`, recording all
/// elementary tails at the given points.
pub fn tail_table(
    frame: &Frame,
    params: &PainleveParams,
    ts: &[f64],
    opts: &SweepOptions,
) -> Result<TailTable> {
    if ts.is_empty() {
        return Err(PvError::Invalid("no evaluation points".into()));
    }
    if ts.windows(2).any(|w| w[1] < w[0]) || !(ts[0] > 0.0) {
        return Err(PvError::Invalid("evaluation points must be positive and sorted".into()));
    }
    let t_max = *ts.last().unwrap();
    let r_cut = (opts.cutoff_factor * t_max).max(opts.min_cutoff).max(2.0 * t_max);
    let half = 0.5 * r_cut;
    let radius = opts.detour_radius.unwrap_or_else(|| default_detour_radius(frame));
    let contour = CanonicalContour::new(frame, ts[0], 2.0 * r_cut, radius)?;
    let rule = GaussLegendre::new(opts.nodes);
    let ray = contour.ray();
    let powers: Vec<i32> = Elem::ALL.iter().map(|e| e.power()).collect();

    let mut st = SweepState {
        frame,
        params,
        ray,
        r_cut,
        half,
        acc_r: [ZERO; N_ELEM],
        acc_h: [ZERO; N_ELEM],
        mean_r: [ZERO; N_ELEM],
        mean_h: [ZERO; N_ELEM],
    };
    let mut cum: Vec<[Complex64; N_ELEM]> = Vec::with_capacity(ts.len());
    cum.push([ZERO; N_ELEM]);
    for w in ts.windows(2) {
        contour.for_each_node(&rule, w[0], w[1], opts.h_max, |t, wdt| st.node(t, wdt))?;
        cum.push(st.acc_r);
    }
    contour.for_each_node(&rule, t_max, 2.0 * r_cut, opts.h_max, |t, wdt| st.node(t, wdt))?;
    let SweepState { acc_r, acc_h, mean_r, mean_h, .. } = st;

    let c2 = cutoff_tail_constant();
    let rot = Complex64::from_polar(1.0, -frame.bd.phi);
    let mut bounds = [0.0f64; N_ELEM];
    let mut values = Vec::with_capacity(ts.len());
    for c in &cum {
        let mut row = [ZERO; N_ELEM];
        for i in 0..N_ELEM {
            let (corr_r, corr_h) = if powers[i] == 2 {
                (mean_r[i] * rot * c2 / r_cut, mean_h[i] * rot * c2 / half)
            } else {
                (ZERO, ZERO)
            };
            let val_r = acc_r[i] - c[i] + corr_r;
            let val_h = acc_h[i] - c[i] + corr_h;
            row[i] = -val_r;
            bounds[i] = bounds[i].max((val_r - val_h).norm());
        }
        values.push(row);
    }
    Ok(TailTable {
        ts: ts.to_vec(),
        values,
        bounds,
        cutoff: r_cut,
        means: mean_r,
    })
}

// ---------------------------------------------------------------------------
// assembled predictions

/// How a tail integral was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Exact integration by parts against closed-form primitives.
    PartsDecomposition,
    /// Contour sweep with smooth cutoff.
    CutoffSweep,
    /// Plain quadrature to a finite endpoint.
    DirectOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailIntegralResult {
    pub value: Complex64,
    pub truncation: f64,
    pub tail_bound: f64,
    pub method: TailMethod,
}

/// All predicted quantities at one ray point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: Complex64,
    pub i1: Complex64,
    pub i2: Complex64,
    pub i3: Complex64,
    /// `∫^x_∞ F₂ dξ/ξ²`
    pub f2_integral: Complex64,
    pub h_asym: Complex64,
    pub h_detailed: Complex64,
    /// `−I₃ − 4((θ₀−θ₁)² + θ_∞²)/x`; add `b₀'(x)h` to get `b − b₀`.
    pub b_corr_base: Complex64,
    /// Variant of `b_corr_base` built from the expanded remainder.
    pub b_detailed_base: Complex64,
    /// `b₀'(x) = 4ψ₀' − 2(A − ψ₀²)`.
    pub b0_prime: Complex64,
    /// Sum of per-integrand bounds weighted by their coefficients.
    pub budget: f64,
}

impl Prediction {
    /// `b − b₀` predicted with the supplied `h`.
    pub fn b_corr(&self, h: Complex64) -> Complex64 {
        self.b0_prime * h + self.b_corr_base
    }

    pub fn b_detailed(&self, h: Complex64) -> Complex64 {
        self.b0_prime * h + self.b_detailed_base
    }
}

fn lin(coeffs: &[(Complex64, Elem)], row: &[Complex64; N_ELEM], bounds: &[f64; N_ELEM]) -> (Complex64, f64) {
    coeffs.iter().fold((ZERO, 0.0), |(v, b), (c, e)| {
        (v + c * row[e.index()], b + c.norm() * bounds[e.index()])
    })
}

/// Coefficients of `I₁` over the elementary table.
pub fn i1_coefficients(frame: &Frame, params: &PainleveParams) -> Vec<(Complex64, Elem)> {
    let th = params.sum01();
    let beta = frame.b0_at_x0;
    vec![
        (2.0 * th, Elem::PsiOverD1),
        (-0.5 * beta, Elem::InvD1),
        (4.0 / frame.bd.omega_a, Elem::GOverD1),
    ]
}

/// Coefficients of `I₂ = ∫ F₁² dξ/ξ²`, from expanding the square with
/// `b₀ = b₀(x₀) − 8𝔟/Ω_a`.
pub fn i2_coefficients(frame: &Frame, params: &PainleveParams) -> Vec<(Complex64, Elem)> {
    let th = params.sum01();
    let beta = frame.b0_at_x0;
    let oa = frame.bd.omega_a;
    vec![
        (4.0 * th * th, Elem::Psi2OverD2),
        (0.25 * beta * beta, Elem::InvD2),
        (16.0 / (oa * oa), Elem::G2OverD2),
        (-2.0 * th * beta, Elem::PsiOverD2),
        (16.0 * th / oa, Elem::GPsiOverD2),
        (-4.0 * beta / oa, Elem::GOverD2),
    ]
}

/// Coefficients of `I₃ = ∫ (A − ψ₀²) F₁² dξ/ξ²`.
pub fn i3_coefficients(frame: &Frame, params: &PainleveParams) -> Vec<(Complex64, Elem)> {
    let th = params.sum01();
    let beta = frame.b0_at_x0;
    let oa = frame.bd.omega_a;
    vec![
        (4.0 * th * th, Elem::Psi2OverD),
        (0.25 * beta * beta, Elem::InvD),
        (16.0 / (oa * oa), Elem::G2OverD),
        (-2.0 * th * beta, Elem::PsiOverD),
        (16.0 * th / oa, Elem::GPsiOverD),
        (-4.0 * beta / oa, Elem::GOverD),
    ]
}

/// Explicit `x⁻¹` coefficient of `I₂`: `(16(θ₀+θ₁)²A + b₀(x₀)²)/(12A(A−1))`.
pub fn i2_leading_coefficient(a: Complex64, sum01: Complex64, b0_at_x0: Complex64) -> Complex64 {
    (16.0 * sum01 * sum01 * a + b0_at_x0 * b0_at_x0) / (12.0 * a * (a - 1.0))
}

/// Explicit `x⁻¹` coefficient in the detailed form of `h`:
/// `−2(2θ₀²+2θ₁²+θ_∞²)/(A−1) − b₀(x₀)²/(8A(A−1))`.
pub fn h_detailed_leading_coefficient(a: Complex64, params: &PainleveParams, b0_at_x0: Complex64) -> Complex64 {
    -2.0 * params.quad_detailed() / (a - 1.0) - b0_at_x0 * b0_at_x0 / (8.0 * a * (a - 1.0))
}

/// Assembles every prediction from a tail table.
pub fn predictions(
    frame: &Frame,
    params: &PainleveParams,
    table: &TailTable,
) -> Result<Vec<Prediction>> {
    let bd = &frame.bd;
    let a = bd.a;
    let oa = bd.omega_a;
    let th = params.sum01();
    let beta = frame.b0_at_x0;
    let c1 = i1_coefficients(frame, params);
    let c2 = i2_coefficients(frame, params);
    let c3 = i3_coefficients(frame, params);
    let detailed = [
        (-2.0 * th, Elem::PsiOverD1),
        (0.5 * beta, Elem::InvD1),
        (-4.0 / oa, Elem::GOverD1),
        (-2.0 * beta / (a * (a - 1.0) * oa), Elem::G),
        (-24.0 * th / oa, Elem::GPsiOverD2),
        (-24.0 / (oa * oa), Elem::G2OverD2),
    ];
    let b_detailed = [(-16.0 * th / oa, Elem::GPsiOverD), (-16.0 / (oa * oa), Elem::G2OverD)];
    let ray = Complex64::from_polar(1.0, bd.phi);
    let mut out = Vec::with_capacity(table.ts.len());
    for (i, &t) in table.ts.iter().enumerate() {
        let row = &table.values[i];
        let x = ray * t;
        let (i1, e1) = lin(&c1, row, &table.bounds);
        let (i2, e2) = lin(&c2, row, &table.bounds);
        let (i3, e3) = lin(&c3, row, &table.bounds);
        let (hd, ed) = lin(&detailed, row, &table.bounds);
        let (bd_int, eb) = lin(&b_detailed, row, &table.bounds);
        let (psi, dpsi) = psi0_with_derivative(x, frame)?;
        let b0_prime = 4.0 * dpsi - 2.0 * (a - psi * psi);
        let quad = params.quad();
        out.push(Prediction {
            x,
            i1,
            i2,
            i3,
            f2_integral: row[Elem::F2.index()],
            h_asym: -2.0 * quad / ((a - 1.0) * x) - i1 - 1.5 * i2,
            h_detailed: h_detailed_leading_coefficient(a, params, beta) / x + hd,
            b_corr_base: -4.0 * quad / x - i3,
            b_detailed_base: -4.0 * params.quad_detailed() / x + bd_int,
            b0_prime,
            budget: e1 + 1.5 * e2 + e3 + ed + eb,
        });
    }
    Ok(out)
}

/// Which combination of elementary integrands to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    I1,
    I2,
    I3,
}

fn coefficients(kind: TailKind, frame: &Frame, params: &PainleveParams) -> Vec<(Complex64, Elem)> {
    match kind {
        TailKind::I1 => i1_coefficients(frame, params),
        TailKind::I2 => i2_coefficients(frame, params),
        TailKind::I3 => i3_coefficients(frame, params),
    }
}

fn single_point(
    kind: TailKind,
    x: Complex64,
    frame: &Frame,
    params: &PainleveParams,
    tol: f64,
) -> Result<TailIntegralResult> {
    let t = ray_coordinate(x, frame.bd.phi)?;
    let table = tail_table(frame, params, &[t], &SweepOptions::default())?;
    let (value, bound) = lin(&coefficients(kind, frame, params), &table.values[0], &table.bounds);
    if bound > tol {
        return Err(PvError::QuadratureNotConverged { estimate: bound });
    }
    Ok(TailIntegralResult {
        value,
        truncation: table.cutoff,
        tail_bound: bound,
        method: TailMethod::CutoffSweep,
    })
}

/// Real ray coordinate of a point on the ray.
pub fn ray_coordinate(x: Complex64, phi: f64) -> Result<f64> {
    let t = x * Complex64::from_polar(1.0, -phi);
    if t.im.abs() > 1e-9 * t.norm().max(1.0) || !(t.re > 0.0) {
        return Err(PvError::Invalid(format!("{x} is not on the ray arg x = {phi}")));
    }
    Ok(t.re)
}

/// `∫^x_∞ F₁(ψ₀, b₀) dξ/ξ`.
#[allow(non_snake_case)]
pub fn I1(x: Complex64, frame: &Frame, params: &PainleveParams, tol: f64) -> Result<TailIntegralResult> {
    single_point(TailKind::I1, x, frame, params, tol)
}

/// `∫^x_∞ F₁(ψ₀, b₀)² dξ/ξ²`.
#[allow(non_snake_case)]
pub fn I2(x: Complex64, frame: &Frame, params: &PainleveParams, tol: f64) -> Result<TailIntegralResult> {
    single_point(TailKind::I2, x, frame, params, tol)
}

/// `∫^x_∞ (A − ψ₀²) F₁(ψ₀, b₀)² dξ/ξ²`.
#[allow(non_snake_case)]
pub fn I3(x: Complex64, frame: &Frame, params: &PainleveParams, tol: f64) -> Result<TailIntegralResult> {
    single_point(TailKind::I3, x, frame, params, tol)
}

fn single_prediction(x: Complex64, frame: &Frame, params: &PainleveParams, tol: f64) -> Result<Prediction> {
    let t = ray_coordinate(x, frame.bd.phi)?;
    let table = tail_table(frame, params, &[t], &SweepOptions::default())?;
    let p = predictions(frame, params, &table)?[0];
    if p.budget > tol {
        return Err(PvError::QuadratureNotConverged { estimate: p.budget });
    }
    Ok(p)
}

/// `h(x) = −2((θ₀−θ₁)²+θ_∞²)/(A−1) x⁻¹ − I₁ − (3/2) I₂`, up to `O(x⁻²)`.
pub fn h_asym(x: Complex64, frame: &Frame, params: &PainleveParams, tol: f64) -> Result<Complex64> {
    Ok(single_prediction(x, frame, params, tol)?.h_asym)
}

/// The expanded eight-term form of `h`.
pub fn h_detailed(x: Complex64, frame: &Frame, params: &PainleveParams, tol: f64) -> Result<Complex64> {
    Ok(single_prediction(x, frame, params, tol)?.h_detailed)
}

/// `b − b₀ = b₀'(x)h − 4((θ₀−θ₁)²+θ_∞²)x⁻¹ − I₃`, up to `O(x⁻²)`.
pub fn b_corr_asym(
    x: Complex64,
    h: Complex64,
    frame: &Frame,
    params: &PainleveParams,
    tol: f64,
) -> Result<Complex64> {
    Ok(single_prediction(x, frame, params, tol)?.b_corr(h))
}

// ---------------------------------------------------------------------------
// finite-interval forms

/// Raw integrands for the direct oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrand {
    Zero,
    /// `ξ⁻²`
    InvSquare,
    /// `F₁ ξ⁻¹`
    F1,
    /// `F₁² ξ⁻²`
    F1Squared,
    /// `(A − ψ₀²)F₁² ξ⁻²`
    DF1Squared,
    /// `F₂ ξ⁻²`
    F2,
    Elementary(Elem),
}

impl Integrand {
    fn eval(self, xi: Complex64, frame: &Frame, params: &PainleveParams) -> Result<Complex64> {
        if let Integrand::Zero = self {
            return Ok(ZERO);
        }
        if let Integrand::InvSquare = self {
            return Ok(1.0 / (xi * xi));
        }
        let a = frame.bd.a;
        let v = NodeValues::at(xi, frame)?;
        let b0 = frame.b0_at_x0 - 8.0 * v.g / frame.bd.omega_a;
        Ok(match self {
            Integrand::F1 => F1(v.psi, b0, a, params)? / xi,
            Integrand::F1Squared => F1(v.psi, b0, a, params)?.powi(2) / (xi * xi),
            Integrand::DF1Squared => v.d * F1(v.psi, b0, a, params)?.powi(2) / (xi * xi),
            Integrand::F2 => F2(v.psi, a, params)? / (xi * xi),
            Integrand::Elementary(e) => e.eval(&v, params) * xi.powi(-e.power()),
            Integrand::Zero | Integrand::InvSquare => unreachable!(),
        })
    }
}

/// `−∫_x^{e^{iφ}T} f dξ` along the canonical contour: the truncated
/// `∫^x_∞` without any tail treatment.
pub fn direct_oracle(
    integrand: Integrand,
    x: Complex64,
    t_cut: f64,
    frame: &Frame,
    params: &PainleveParams,
) -> Result<Complex64> {
    let t = ray_coordinate(x, frame.bd.phi)?;
    if !(t_cut >= 10.0 * t) {
        return Err(PvError::Invalid(format!("oracle cutoff {t_cut} below 10|x|")));
    }
    let radius = default_detour_radius(frame);
    let contour = CanonicalContour::new(frame, t, t_cut, radius)?;
    let rule = GaussLegendre::new(20);
    let ray = contour.ray();
    let mut acc = ZERO;
    contour.for_each_node(&rule, t, t_cut, 0.5, |tt, w| {
        let xi = tt * ray;
        acc += integrand.eval(xi, frame, params)? * w * ray;
        Ok(())
    })?;
    Ok(-acc)
}

/// `−∫_x^{e^{iφ}T} g^j E ξ^{−p} dξ` by one integration by parts against the
/// closed-form primitive `P` of `E`:
/// `[g^j P ξ^{−p}] − ∫ P (j g^{j−1} g' ξ^{−p} − p g^j ξ^{−p−1}) dξ`.
pub fn parts_elementary(
    e: Elem,
    x: Complex64,
    t_cut: f64,
    frame: &Frame,
    params: &PainleveParams,
) -> Result<Complex64> {
    let t = ray_coordinate(x, frame.bd.phi)?;
    let radius = default_detour_radius(frame);
    let contour = CanonicalContour::new(frame, t, t_cut, radius)?;
    let rule = GaussLegendre::new(20);
    let ray = contour.ray();
    let (p, j, factor) = e.shape();
    let pf = p as f64;
    let jf = j as f64;
    let boundary = |xi: Complex64| -> Result<Complex64> {
        let g = frak_b(xi, frame)?;
        Ok(g.powu(j) * factor.primitive(xi, frame, params)? * xi.powi(-p))
    };
    let xb = ray * t_cut;
    let mut acc = boundary(xb)? - boundary(x)?;
    let mut rem = ZERO;
    contour.for_each_node(&rule, t, t_cut, 0.5, |tt, w| {
        let xi = tt * ray;
        let pr = factor.primitive(xi, frame, params)?;
        let g = if j > 0 { frak_b(xi, frame)? } else { ZERO };
        let mut inner = -pf * g.powu(j) * xi.powi(-p - 1);
        if j > 0 {
            let dg = frak_b_derivative(xi, frame)?;
            inner += jf * g.powu(j - 1) * dg * xi.powi(-p);
        }
        rem += pr * inner * w * ray;
        Ok(())
    })?;
    acc -= rem;
    Ok(-acc)
}

/// `I₁`, `I₂` or `I₃` truncated at `T`, assembled from parts-decomposed
/// elementary pieces.
pub fn parts_truncated(
    kind: TailKind,
    x: Complex64,
    t_cut: f64,
    frame: &Frame,
    params: &PainleveParams,
) -> Result<TailIntegralResult> {
    let mut value = ZERO;
    for (c, e) in coefficients(kind, frame, params) {
        value += c * parts_elementary(e, x, t_cut, frame, params)?;
    }
    Ok(TailIntegralResult {
        value,
        truncation: t_cut,
        tail_bound: f64::NAN,
        method: TailMethod::PartsDecomposition,
    })
}

/// The raw integrand matching a tail kind.
pub fn raw_integrand(kind: TailKind) -> Integrand {
    match kind {
        TailKind::I1 => Integrand::F1,
        TailKind::I2 => Integrand::F1Squared,
        TailKind::I3 => Integrand::DF1Squared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_periods::solve_boutroux;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn setup() -> (Frame, PainleveParams) {
        let bd = solve_boutroux(0.7, Some(c(0.408, 0.422))).unwrap();
        let frame = Frame::new(bd, c(1.0, 0.5), c(0.3, -0.2)).unwrap();
        (frame, PainleveParams::real(1.0 / 3.0, 0.2, 1.0 / 7.0))
    }

    #[test]
    fn f1_f2_arithmetic() {
        let p = PainleveParams::real(0.5, 0.5, 0.0);
        let v = F1(c(1.0, 0.0), c(2.0, 0.0), c(4.0, 0.0), &p).unwrap();
        assert!((v - 1.0 / 3.0).norm() < 1e-15);
        let p = PainleveParams::real(1.0, 0.0, 1.0);
        let v = F2(c(2.0, 0.0), c(9.0, 0.0), &p).unwrap();
        assert!((v + 0.8).norm() < 1e-15);
        assert!(F1(c(2.0, 0.0), ZERO, c(4.0, 0.0), &p).is_err());
    }

    #[test]
    fn cutoff_pieces() {
        assert!((cutoff(c(1.5, 0.0)) - 0.5).norm() < 1e-14);
        let rule = GaussLegendre::new(16);
        let m = rule.segment(c(1.0, 0.0), c(2.0, 0.0), cutoff_density);
        assert!((m - 1.0).norm() < 1e-14);
    }

    #[test]
    fn oracle_inverse_square() {
        let (f, p) = setup();
        let x = f.bd.ray() * 50.0;
        let v = direct_oracle(Integrand::InvSquare, x, 500.0, &f, &p).unwrap();
        let exact = -(1.0 / x - 1.0 / (f.bd.ray() * 500.0));
        assert!((v - exact).norm() < 1e-13);
        assert_eq!(direct_oracle(Integrand::Zero, x, 500.0, &f, &p).unwrap(), ZERO);
    }

    #[test]
    fn contour_detours_avoid_singular_points() {
        let (f, _) = setup();
        let cont = CanonicalContour::new(&f, 30.0, 400.0, default_detour_radius(&f)).unwrap();
        assert!(!cont.detours.is_empty());
        let legs = cont.legs(30.0, 400.0).unwrap();
        let ray = cont.ray();
        for (a, b) in legs {
            for k in 0..=20 {
                let t = a + (b - a) * (k as f64 / 20.0);
                let d = distance_to_p0(t * ray, &f).min(distance_to_q(t * ray, &f));
                assert!(d > 0.99 * cont.radius, "{t}: {d}");
            }
        }
    }

    #[test]
    fn parts_matches_direct_on_finite_interval() {
        let (f, p) = setup();
        let x = f.bd.ray() * 40.0;
        for e in [Elem::PsiOverD1, Elem::GOverD1, Elem::G2OverD2, Elem::F2, Elem::G] {
            let parts = parts_elementary(e, x, 400.0, &f, &p).unwrap();
            let direct = direct_oracle(Integrand::Elementary(e), x, 400.0, &f, &p).unwrap();
            assert!((parts - direct).norm() < 1e-9, "{e:?}: {parts} vs {direct}");
        }
    }
}
