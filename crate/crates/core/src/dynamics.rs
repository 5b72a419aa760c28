//! Painlevé V along the ray `x = e^{iφ}t`: right-hand side in the `y` and
//! `1/y` charts, an adaptive DOP853 integrator in complex `t` with detours
//! around the points where the equation is singular, and the Lagrangian
//! correction `b(x)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dop853;
use crate::error::{PvError, Result};

/// `θ₀, θ₁, θ_∞` and the derived coefficients of the equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ThetaTriple", into = "ThetaTriple")]
pub struct PainleveParams {
    pub theta0: Complex64,
    pub theta1: Complex64,
    pub theta_inf: Complex64,
    /// `(θ₀ − θ₁ + θ_∞)²/8`
    pub a_theta: Complex64,
    /// `(θ₀ − θ₁ − θ_∞)²/8`
    pub b_theta: Complex64,
    /// `1 − θ₀ − θ₁`
    pub c_theta: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaTriple {
    pub theta0: Complex64,
    pub theta1: Complex64,
    pub theta_inf: Complex64,
}

impl From<ThetaTriple> for PainleveParams {
    fn from(t: ThetaTriple) -> Self {
        Self::new(t.theta0, t.theta1, t.theta_inf)
    }
}

impl From<PainleveParams> for ThetaTriple {
    fn from(p: PainleveParams) -> Self {
        Self {
            theta0: p.theta0,
            theta1: p.theta1,
            theta_inf: p.theta_inf,
        }
    }
}

impl PainleveParams {
    pub fn new(theta0: Complex64, theta1: Complex64, theta_inf: Complex64) -> Self {
        let p = theta0 - theta1 + theta_inf;
        let m = theta0 - theta1 - theta_inf;
        Self {
            theta0,
            theta1,
            theta_inf,
            a_theta: p * p / 8.0,
            b_theta: m * m / 8.0,
            c_theta: 1.0 - theta0 - theta1,
        }
    }

    pub fn real(theta0: f64, theta1: f64, theta_inf: f64) -> Self {
        Self::new(theta0.into(), theta1.into(), theta_inf.into())
    }

    /// `θ₀ + θ₁`
    pub fn sum01(&self) -> Complex64 {
        self.theta0 + self.theta1
    }

    /// `(θ₀ − θ₁)² + θ_∞²`
    pub fn quad(&self) -> Complex64 {
        let d = self.theta0 - self.theta1;
        d * d + self.theta_inf * self.theta_inf
    }

    /// `2θ₀² + 2θ₁² + θ_∞²`
    pub fn quad_detailed(&self) -> Complex64 {
        2.0 * self.theta0 * self.theta0
            + 2.0 * self.theta1 * self.theta1
            + self.theta_inf * self.theta_inf
    }

    /// `2(θ₀ − θ₁)θ_∞`
    pub fn cross(&self) -> Complex64 {
        2.0 * (self.theta0 - self.theta1) * self.theta_inf
    }
}

/// State coordinates used by the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    Y,
    /// `u = 1/y`, used near poles of `y`.
    InvY,
}

/// Distance below which `y` counts as sitting on `0` or `1` in the right-hand side.
pub const SINGULAR_FUZZ: f64 = 1e-12;

fn rotation(phi: f64) -> Complex64 {
    Complex64::from_polar(1.0, phi)
}

/// `(dy/dt, d²y/dt²)` for Painlevé V along `x = e^{iφ}t`.
pub fn pv_rhs(
    t: Complex64,
    y: Complex64,
    dy: Complex64,
    params: &PainleveParams,
    phi: f64,
) -> Result<(Complex64, Complex64)> {
    if y.norm() < SINGULAR_FUZZ || (y - 1.0).norm() < SINGULAR_FUZZ {
        return Err(PvError::Singular {
            what: "Painlevé V coefficient",
            at: t,
            detail: format!("y = {y}"),
        });
    }
    if t.norm() == 0.0 {
        return Err(PvError::Singular {
            what: "Painlevé V coefficient",
            at: t,
            detail: "t = 0".into(),
        });
    }
    let e2 = rotation(2.0 * phi);
    let x = rotation(phi) * t;
    let ym1 = y - 1.0;
    let forcing = ym1 * ym1 / (x * x) * (params.a_theta * y - params.b_theta / y)
        + params.c_theta * y / x
        - y * (y + 1.0) / (2.0 * ym1);
    let ddy = (0.5 / y + 1.0 / ym1) * dy * dy - dy / t + e2 * forcing;
    Ok((dy, ddy))
}

/// `(du/dt, d²u/dt²)` for `u = 1/y`.
pub fn pv_rhs_inv(
    t: Complex64,
    u: Complex64,
    du: Complex64,
    params: &PainleveParams,
    phi: f64,
) -> Result<(Complex64, Complex64)> {
    if u.norm() < SINGULAR_FUZZ || (u - 1.0).norm() < SINGULAR_FUZZ {
        return Err(PvError::Singular {
            what: "Painlevé V coefficient (1/y chart)",
            at: t,
            detail: format!("u = {u}"),
        });
    }
    let e2 = rotation(2.0 * phi);
    let x = rotation(phi) * t;
    let om = 1.0 - u;
    // u² times the forcing of the y equation, rewritten in u
    let forcing = om * om * (params.a_theta - params.b_theta * u * u) / (u * x * x)
        + params.c_theta * u / x
        - u * (1.0 + u) / (2.0 * om);
    let ddu = (1.5 - 1.0 / om) * du * du / u - du / t - e2 * forcing;
    Ok((du, ddu))
}

/// `ψ = (y + 1)/(y − 1)`.
pub fn psi_of_y(y: Complex64) -> Result<Complex64> {
    if (y - 1.0).norm() < SINGULAR_FUZZ {
        return Err(PvError::AtPole { what: "psi_of_y", at: y });
    }
    Ok((y + 1.0) / (y - 1.0))
}

/// `y = (ψ + 1)/(ψ − 1)`; the same Möbius map.
pub fn y_of_psi(psi: Complex64) -> Result<Complex64> {
    if (psi - 1.0).norm() < SINGULAR_FUZZ {
        return Err(PvError::AtPole { what: "y_of_psi", at: psi });
    }
    Ok((psi + 1.0) / (psi - 1.0))
}

/// `dψ/dt` from `y` and `dy/dt`.
pub fn dpsi_of_y(y: Complex64, dy: Complex64) -> Result<Complex64> {
    if (y - 1.0).norm() < SINGULAR_FUZZ {
        return Err(PvError::AtPole { what: "dpsi_of_y", at: y });
    }
    let ym1 = y - 1.0;
    Ok(-2.0 * dy / (ym1 * ym1))
}

/// `a_φ` with `y* = dy/dt`.
pub fn lagrangian_a(
    t: Complex64,
    y: Complex64,
    dy: Complex64,
    params: &PainleveParams,
    phi: f64,
) -> Result<Complex64> {
    if y.norm() < SINGULAR_FUZZ || (y - 1.0).norm() < SINGULAR_FUZZ || t.norm() == 0.0 {
        return Err(PvError::Singular {
            what: "Lagrangian",
            at: t,
            detail: format!("y = {y}"),
        });
    }
    let em = rotation(-phi);
    let em2 = em * em;
    let ym1 = y - 1.0;
    let p = params.theta0 - params.theta1 + params.theta_inf;
    let m = params.theta0 - params.theta1 - params.theta_inf;
    Ok(1.0 - 4.0 * (em2 * dy * dy - y * y) / (y * ym1 * ym1)
        + 4.0 * em * params.sum01() * (y + 1.0) / ym1 / t
        + em2 * ym1 / y * (p * p * y - m * m) / (t * t))
}

/// `b(x) = x(a_φ − A_φ)` with `x = e^{iφ}t`.
pub fn lagrangian_b(
    t: Complex64,
    y: Complex64,
    dy: Complex64,
    params: &PainleveParams,
    phi: f64,
    a: Complex64,
) -> Result<Complex64> {
    Ok(rotation(phi) * t * (lagrangian_a(t, y, dy, params, phi)? - a))
}

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    /// Switch to `u = 1/y` when `|y|` exceeds this.
    pub chart_threshold: f64,
    /// `|y − 1|` or `|y|` below this forces a detour.
    pub detection_fuzz: f64,
    pub detour_radius: f64,
    pub max_detours: usize,
    pub max_steps: usize,
    /// Relative minimum step, `h_min = h_min_rel·|t|`.
    pub h_min_rel: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            h_init: 1e-3,
            h_max: 0.25,
            chart_threshold: 1e3,
            detection_fuzz: 1e-3,
            detour_radius: 0.5,
            max_detours: 100_000,
            max_steps: 20_000_000,
            h_min_rel: 1e-8,
        }
    }
}

/// Initial data at a point of the ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub t0: f64,
    pub y0: Complex64,
    /// `dy/dt` at `t0`.
    pub dy0: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: Complex64,
    pub x: Complex64,
    pub y: Complex64,
    /// `dy/dt`
    pub dy: Complex64,
    pub chart: Chart,
}

/// What a detour went around, as predicted when it was planned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetourReason {
    /// `y → ∞`
    Pole,
    /// `y → 1`
    One,
    /// `y → 0`
    Zero,
    StepCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetourEvent {
    /// Predicted location in `t`.
    pub center: Complex64,
    pub radius: f64,
    /// Real span `[lo, hi]` of `t` replaced by the detour.
    pub lo: f64,
    pub hi: f64,
    /// Height of the box above the ray; detours always go up.
    pub height: f64,
    pub reason: DetourReason,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub chart_switches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub phi: f64,
    /// Samples on the real ray, in increasing `t`.
    pub samples: Vec<Sample>,
    /// Requested output points that fell inside a detour span.
    pub skipped: Vec<f64>,
    pub detours: Vec<DetourEvent>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    /// Whether real `t` lies in the span of some detour.
    pub fn in_detour(&self, t: f64) -> bool {
        self.detours.iter().any(|d| t > d.lo && t < d.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    chart: Chart,
    z: [Complex64; 2],
}

impl State {
    fn y_dy(&self) -> (Complex64, Complex64) {
        match self.chart {
            Chart::Y => (self.z[0], self.z[1]),
            Chart::InvY => {
                let y = 1.0 / self.z[0];
                (y, -self.z[1] * y * y)
            }
        }
    }

    fn from_y(chart: Chart, y: Complex64, dy: Complex64) -> Self {
        match chart {
            Chart::Y => Self { chart, z: [y, dy] },
            Chart::InvY => {
                let u = 1.0 / y;
                Self {
                    chart,
                    z: [u, -dy * u * u],
                }
            }
        }
    }
}

/// Outcome of a leg along a straight segment.
enum LegEnd {
    Done,
    /// Stopped early on the real ray because a singular point is close ahead.
    Event {
        t: f64,
        center: Complex64,
        reason: DetourReason,
    },
}

struct Integrator<'a> {
    params: &'a PainleveParams,
    phi: f64,
    opts: &'a IntegratorOptions,
    stats: IntegratorStats,
    h: f64,
    /// Centers of recent detours; predictions near them are ignored.
    recent: Vec<Complex64>,
}

impl Integrator<'_> {
    fn rhs(&mut self, t: Complex64, chart: Chart, z: &[Complex64; 2]) -> Result<[Complex64; 2]> {
        self.stats.rhs_evals += 1;
        let (a, b) = match chart {
            Chart::Y => pv_rhs(t, z[0], z[1], self.params, self.phi)?,
            Chart::InvY => pv_rhs_inv(t, z[0], z[1], self.params, self.phi)?,
        };
        Ok([a, b])
    }

    /// One DOP853 step of complex length `h·dir`; returns the new state and
    /// the scaled error norm.
    fn step(
        &mut self,
        t: Complex64,
        dir: Complex64,
        h: f64,
        st: &State,
    ) -> Result<([Complex64; 2], f64)> {
        let dt = dir * h;
        let mut k = [[Complex64::new(0.0, 0.0); 2]; dop853::STAGES];
        for i in 0..dop853::STAGES {
            let mut z = st.z;
            for (j, a) in dop853::A[i].iter().enumerate() {
                if *a != 0.0 {
                    z[0] += dt * *a * k[j][0];
                    z[1] += dt * *a * k[j][1];
                }
            }
            k[i] = self.rhs(t + dt * dop853::C[i], st.chart, &z)?;
        }
        let mut out = st.z;
        let mut err = [Complex64::new(0.0, 0.0); 2];
        for i in 0..dop853::STAGES {
            for c in 0..2 {
                out[c] += dt * dop853::B[i] * k[i][c];
                err[c] += dt * dop853::E5[i] * k[i][c];
            }
        }
        let mut norm = 0.0;
        for c in 0..2 {
            let scale = self.opts.atol + self.opts.rtol * st.z[c].norm().max(out[c].norm());
            norm += (err[c].norm() / scale).powi(2);
        }
        if !norm.is_finite() {
            norm = f64::INFINITY;
        }
        Ok((out, (0.5 * norm).sqrt()))
    }

    fn maybe_switch(&mut self, st: &mut State) {
        let thr = self.opts.chart_threshold;
        let (y, dy) = st.y_dy();
        let want = if y.norm() > thr { Chart::InvY } else { Chart::Y };
        if want != st.chart {
            *st = State::from_y(want, y, dy);
            self.stats.chart_switches += 1;
        }
    }

    /// Predicted nearby singular point from Newton steps on `y − 1`, `y`, `1/y`.
    fn predict(&self, t: Complex64, st: &State) -> Option<(Complex64, DetourReason)> {
        let (y, dy) = st.y_dy();
        let mut best: Option<(Complex64, DetourReason)> = None;
        let mut consider = |c: Complex64, r: DetourReason| {
            if !c.re.is_finite() || !c.im.is_finite() {
                return;
            }
            if best.is_none_or(|(b, _)| (c - t).norm() < (b - t).norm()) {
                best = Some((c, r));
            }
        };
        if dy.norm() > 0.0 {
            if (y - 1.0).norm() < 0.5 {
                consider(t - (y - 1.0) / dy, DetourReason::One);
            }
            if y.norm() < 0.5 {
                consider(t - y / dy, DetourReason::Zero);
            }
        }
        match st.chart {
            Chart::InvY => {
                let (u, du) = (st.z[0], st.z[1]);
                if du.norm() > 0.0 {
                    consider(t - u / du, DetourReason::Pole);
                }
            }
            Chart::Y => {
                if y.norm() > 10.0 && dy.norm() > 0.0 {
                    consider(t + y / dy, DetourReason::Pole);
                }
            }
        }
        best
    }

    fn is_recent(&self, c: Complex64) -> bool {
        let r = self.opts.detour_radius;
        self.recent.iter().any(|p| (p - c).norm() < 1.5 * r)
    }

    /// Integrates from `p` to `q` along a straight segment, landing exactly on
    /// each `targets` point (given as distances from `p`) and calling
    /// `record`. On the real ray (`watch = true`), stops when a singular
    /// point is predicted within reach.
    fn leg(
        &mut self,
        p: Complex64,
        q: Complex64,
        st: &mut State,
        targets: &[f64],
        watch: bool,
        record: &mut dyn FnMut(Complex64, &State),
    ) -> Result<LegEnd> {
        let len = (q - p).norm();
        if len == 0.0 {
            return Ok(LegEnd::Done);
        }
        let dir = (q - p) / len;
        let r = self.opts.detour_radius;
        let fuzz = self.opts.detection_fuzz;
        let mut s = 0.0;
        let mut next_target = 0;
        while next_target < targets.len() && targets[next_target] <= 0.0 {
            next_target += 1;
        }
        let mut steps = 0usize;
        while s < len {
            let t = p + dir * s;
            if watch {
                if let Some((c, reason)) = self.predict(t, st) {
                    let ahead = (c - t) * dir.conj();
                    if !self.is_recent(c) && ahead.im.abs() < r && ahead.re > -0.5 * r {
                        if (c - t).norm() < 1.5 * r {
                            return Ok(LegEnd::Event {
                                t: t.re,
                                center: c,
                                reason,
                            });
                        }
                        // approach in short steps so the prediction sharpens
                        self.h = self.h.min(0.25 * (c - t).norm());
                    }
                }
            }
            let (y, _) = st.y_dy();
            if watch && ((y - 1.0).norm() < fuzz || y.norm() < fuzz) {
                let reason = if y.norm() < fuzz {
                    DetourReason::Zero
                } else {
                    DetourReason::One
                };
                return Ok(LegEnd::Event {
                    t: t.re,
                    center: t,
                    reason,
                });
            }
            let h_min = self.opts.h_min_rel * t.norm().max(1.0);
            let mut h = self.h.min(self.opts.h_max).min(len - s);
            let mut clipped = false;
            if next_target < targets.len() && s + h >= targets[next_target] {
                h = targets[next_target] - s;
                clipped = true;
            }
            steps += 1;
            if self.stats.accepted + self.stats.rejected > self.opts.max_steps {
                return Err(PvError::NotConverged {
                    what: "integrate_ray",
                    iterations: self.opts.max_steps,
                    residual: f64::NAN,
                });
            }
            let attempt = self.step(t, dir, h, st);
            let (z, err) = match attempt {
                Ok(v) => v,
                Err(_) => ([Complex64::new(f64::NAN, 0.0); 2], f64::INFINITY),
            };
            if err <= 1.0 {
                st.z = z;
                s += h;
                self.stats.accepted += 1;
                if clipped || (next_target < targets.len() && (targets[next_target] - s).abs() < 1e-12) {
                    s = targets[next_target].min(len);
                    record(p + dir * s, st);
                    next_target += 1;
                }
                self.maybe_switch(st);
                let fac = if err == 0.0 { 6.0 } else { (0.9 * err.powf(-1.0 / 8.0)).clamp(0.333, 6.0) };
                if !clipped {
                    self.h = h * fac;
                } else {
                    self.h = self.h.max(h * fac.min(1.0));
                }
            } else {
                self.stats.rejected += 1;
                let fac = if err.is_finite() { (0.9 * err.powf(-1.0 / 8.0)).clamp(0.1, 0.9) } else { 0.25 };
                self.h = h * fac;
                if self.h < h_min {
                    if watch {
                        return Ok(LegEnd::Event {
                            t: t.re,
                            center: t + dir * h,
                            reason: DetourReason::StepCollapse,
                        });
                    }
                    return Err(PvError::StepCollapse { t });
                }
            }
        }
        let _ = steps;
        Ok(LegEnd::Done)
    }
}

/// Integrates Painlevé V from `ic.t0` to `t_end` along the ray, recording
/// samples at the requested real `outputs`. Each detour is a box above the
/// ray around a predicted singular point. If the integrator fails inside the
/// box, the box is retried with a radius enlarged by 1.5, then by 1.5 again.
pub fn integrate_ray(
    ic: &InitialCondition,
    t_end: f64,
    params: &PainleveParams,
    phi: f64,
    outputs: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if !(ic.t0 > 0.0) || !(t_end >= ic.t0) {
        return Err(PvError::Invalid(format!(
            "need 0 < t0 <= t_end, got t0 = {}, t_end = {t_end}",
            ic.t0
        )));
    }
    if outputs.windows(2).any(|w| w[1] < w[0]) {
        return Err(PvError::Invalid("output points must be sorted".into()));
    }
    if (ic.y0 - 1.0).norm() < opts.detection_fuzz || ic.y0.norm() < opts.detection_fuzz {
        return Err(PvError::Singular {
            what: "initial condition",
            at: ic.t0.into(),
            detail: format!("y0 = {}", ic.y0),
        });
    }
    let outputs: Vec<f64> = outputs
        .iter()
        .copied()
        .filter(|&t| t > ic.t0 && t <= t_end)
        .collect();
    let mut it = Integrator {
        params,
        phi,
        opts,
        stats: IntegratorStats::default(),
        h: opts.h_init,
        recent: Vec::new(),
    };
    let ray = rotation(phi);
    let mut st = State::from_y(Chart::Y, ic.y0, ic.dy0);
    it.maybe_switch(&mut st);
    let mut samples = Vec::with_capacity(outputs.len() + 1);
    let sample = |t: Complex64, st: &State| {
        let (y, dy) = st.y_dy();
        Sample {
            t,
            x: ray * t,
            y,
            dy,
            chart: st.chart,
        }
    };
    samples.push(sample(ic.t0.into(), &st));
    let mut skipped = Vec::new();
    let mut detours: Vec<DetourEvent> = Vec::new();
    let mut t = ic.t0;
    let mut next = 0;

    while t < t_end {
        let targets: Vec<f64> = outputs[next..].iter().map(|o| o - t).collect();
        let mut rec = |tc: Complex64, s: &State| samples.push(sample(tc, s));
        let end = it.leg(t.into(), t_end.into(), &mut st, &targets, true, &mut rec)?;
        let (te, center, reason) = match end {
            LegEnd::Done => break,
            LegEnd::Event { t, center, reason } => (t, center, reason),
        };
        while next < outputs.len() && outputs[next] <= te {
            next += 1;
        }
        t = te;
        if detours.len() >= opts.max_detours {
            return Err(PvError::TooManyDetours {
                count: detours.len(),
                t,
            });
        }

        let saved = (st, it.h);
        let mut radius = opts.detour_radius;
        let mut done = None;
        for attempt in 1..=3u32 {
            st = saved.0;
            it.h = saved.1;
            let lo = t.max(center.re - radius);
            let hi = center.re + radius;
            let height = center.im.max(0.0) + radius;
            let targets: Vec<f64> = outputs[next..]
                .iter()
                .take_while(|&&o| o <= lo)
                .map(|o| o - t)
                .collect();
            let mut approach = Vec::new();
            let mut rec = |tc: Complex64, s: &State| approach.push(sample(tc, s));
            let corners = [
                Complex64::new(t, 0.0),
                Complex64::new(lo, 0.0),
                Complex64::new(lo, height),
                Complex64::new(hi, height),
                Complex64::new(hi, 0.0),
            ];
            let mut ok = true;
            for (i, w) in corners.windows(2).enumerate() {
                let r = if i == 0 {
                    it.leg(w[0], w[1], &mut st, &targets, false, &mut rec)
                } else {
                    it.leg(w[0], w[1], &mut st, &[], false, &mut |_, _| {})
                };
                if r.is_err() {
                    ok = false;
                    break;
                }
            }
            if ok {
                done = Some((lo, hi, height, attempt, approach));
                break;
            }
            radius *= 1.5;
        }
        let Some((lo, hi, height, attempts, approach)) = done else {
            return Err(PvError::StepCollapse { t: center });
        };
        samples.extend(approach);
        while next < outputs.len() && outputs[next] <= lo {
            next += 1;
        }
        while next < outputs.len() && outputs[next] < hi {
            skipped.push(outputs[next]);
            next += 1;
        }
        detours.push(DetourEvent {
            center,
            radius,
            lo,
            hi,
            height,
            reason,
            attempts,
        });
        it.recent.push(center);
        if it.recent.len() > 8 {
            it.recent.remove(0);
        }
        t = hi;
        if t >= t_end {
            break;
        }
        if next < outputs.len() && (outputs[next] - t).abs() < 1e-12 {
            samples.push(sample(t.into(), &st));
            next += 1;
        }
    }
    Ok(Trajectory {
        phi,
        samples,
        skipped,
        detours,
        stats: it.stats,
    })
}

/// Residual of `4ψ'² = (1 − ψ²)(A − ψ²) − (1 − ψ²)(4(θ₀ + θ₁)ψ − b)/x
/// + 4(2(θ₀ − θ₁)θ_∞ψ + (θ₀ − θ₁)² + θ_∞²)/x²`, derivatives in `x`.
pub fn psi_equation_residual(
    x: Complex64,
    psi: Complex64,
    dpsi: Complex64,
    b: Complex64,
    a: Complex64,
    params: &PainleveParams,
) -> Complex64 {
    let om = 1.0 - psi * psi;
    4.0 * dpsi * dpsi
        - (om * (a - psi * psi) - om * (4.0 * params.sum01() * psi - b) / x
            + 4.0 * (params.cross() * psi + params.quad()) / (x * x))
}

/// Right-hand side of `b' = −2(A − ψ²) + 4ψ' + (4(θ₀ + θ₁)ψ − b)/x`.
pub fn b_equation_rhs(
    x: Complex64,
    psi: Complex64,
    dpsi: Complex64,
    b: Complex64,
    a: Complex64,
    params: &PainleveParams,
) -> Complex64 {
    -2.0 * (a - psi * psi) + 4.0 * dpsi + (4.0 * params.sum01() * psi - b) / x
}

/// Residuals of the leading system `4ψ₀'² = (1 − ψ₀²)(A − ψ₀²)` and
/// `b₀' = −2(A − ψ₀²) + 4ψ₀'`, given `b₀'`.
pub fn leading_system_residual(
    psi0: Complex64,
    dpsi0: Complex64,
    db0: Complex64,
    a: Complex64,
) -> (Complex64, Complex64) {
    let p2 = psi0 * psi0;
    (
        4.0 * dpsi0 * dpsi0 - (1.0 - p2) * (a - p2),
        db0 - (-2.0 * (a - p2) + 4.0 * dpsi0),
    )
}

/// `ψ`, `dψ/dx` and `b` at a sample.
pub fn sample_psi_b(
    s: &Sample,
    params: &PainleveParams,
    phi: f64,
    a: Complex64,
) -> Result<(Complex64, Complex64, Complex64)> {
    let psi = psi_of_y(s.y)?;
    let dpsi = rotation(-phi) * dpsi_of_y(s.y, s.dy)?;
    let b = lagrangian_b(s.t, s.y, s.dy, params, phi, a)?;
    Ok((psi, dpsi, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_periods::{solve_boutroux, BoutrouxData};
    use crate::leading_order::{psi0_with_derivative, Frame};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn setup() -> (BoutrouxData, PainleveParams, InitialCondition) {
        let bd = solve_boutroux(0.7, Some(c(0.408, 0.422))).unwrap();
        let frame = Frame::new(bd, c(1.0, 0.5), c(0.3, -0.2)).unwrap();
        let params = PainleveParams::real(1.0 / 3.0, 0.2, 1.0 / 7.0);
        let ray = rotation(0.7);
        let t0 = 30.0;
        let (p, dp) = psi0_with_derivative(ray * t0, &frame).unwrap();
        let ic = InitialCondition {
            t0,
            y0: y_of_psi(p).unwrap(),
            dy0: ray * (-2.0 * dp / ((p - 1.0) * (p - 1.0))),
        };
        (bd, params, ic)
    }

    fn grid(a: f64, b: f64, dt: f64) -> Vec<f64> {
        let n = ((b - a) / dt).round() as usize;
        (1..=n).map(|i| a + dt * i as f64).collect()
    }

    /// Largest relative difference of `y` on samples present in both runs.
    fn max_diff(a: &Trajectory, b: &Trajectory) -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut shared = 0;
        for s in &a.samples {
            if let Some(o) = b.samples.iter().find(|o| (o.t - s.t).norm() < 1e-9) {
                let d = (s.y - o.y).norm() / s.y.norm().max(1.0);
                worst = worst.max(d);
                shared += 1;
            }
        }
        (worst, shared)
    }

    #[test]
    fn rhs_with_zero_parameters_and_derivative() {
        let y = c(0.3, 0.7);
        let t = c(12.0, 0.0);
        // θ₀ = θ₁ = ½, θ_∞ = 0 removes a_θ, b_θ and c_θ, leaving only the last term
        let p = PainleveParams::real(0.5, 0.5, 0.0);
        for phi in [0.0, 0.7] {
            let (_, ddy) = pv_rhs(t, y, c(0.0, 0.0), &p, phi).unwrap();
            let expect = -rotation(2.0 * phi) * y * (y + 1.0) / (2.0 * (y - 1.0));
            assert!((ddy - expect).norm() < 1e-15);
        }
        // with all θ = 0 the c_θ = 1 term survives as well
        let p = PainleveParams::real(0.0, 0.0, 0.0);
        let (_, ddy) = pv_rhs(t, y, c(0.0, 0.0), &p, 0.0).unwrap();
        let expect = y / t - y * (y + 1.0) / (2.0 * (y - 1.0));
        assert!((ddy - expect).norm() < 1e-15);
        assert!(pv_rhs(c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), &p, 0.0).is_err());
    }

    #[test]
    fn inverse_chart_matches_chain_rule() {
        let (_, params, _) = setup();
        let (t, y, dy) = (c(7.0, 0.3), c(2.5, -1.2), c(0.4, 0.9));
        let (_, ddy) = pv_rhs(t, y, dy, &params, 0.7).unwrap();
        let u = 1.0 / y;
        let du = -dy * u * u;
        let (_, ddu) = pv_rhs_inv(t, u, du, &params, 0.7).unwrap();
        // u'' = 2y'²/y³ − y''/y²
        let expect = 2.0 * dy * dy / (y * y * y) - ddy / (y * y);
        assert!((ddu - expect).norm() < 1e-13 * expect.norm().max(1.0));
    }

    #[test]
    fn one_small_step_agrees_with_taylor() {
        let (_, params, ic) = setup();
        let opts = IntegratorOptions::default();
        let (_, ddy) = pv_rhs(ic.t0.into(), ic.y0, ic.dy0, &params, 0.7).unwrap();
        let mut errs = Vec::new();
        for h in [1e-2, 5e-3] {
            let tr = integrate_ray(&ic, ic.t0 + h, &params, 0.7, &[ic.t0 + h], &opts).unwrap();
            let y = tr.samples.last().unwrap().y;
            let taylor = ic.y0 + h * ic.dy0 + 0.5 * h * h * ddy;
            errs.push((y - taylor).norm());
        }
        // third-order remainder: halving h divides the gap by about 8
        let ratio = errs[0] / errs[1];
        assert!(ratio > 6.0 && ratio < 10.0, "{errs:?}");
    }

    #[test]
    fn moebius_maps() {
        assert!((psi_of_y(c(0.0, 0.0)).unwrap() + 1.0).norm() < 1e-15);
        assert!(psi_of_y(c(-1.0, 0.0)).unwrap().norm() < 1e-15);
        assert!(psi_of_y(c(1.0, 0.0)).is_err());
        for k in 0..100 {
            let y = c((k as f64 * 0.37).sin() * 3.0, (k as f64 * 0.91).cos() * 2.0);
            if (y - 1.0).norm() < 1e-3 {
                continue;
            }
            let back = y_of_psi(psi_of_y(y).unwrap()).unwrap();
            assert!((back - y).norm() < 1e-12 * y.norm().max(1.0));
        }
    }

    #[test]
    fn lagrangian_without_parameters() {
        let p = PainleveParams::real(0.0, 0.0, 0.0);
        let (t, y, dy, phi) = (c(5.0, 0.0), c(0.4, 0.2), c(-0.3, 0.8), 0.7);
        let em2 = rotation(-2.0 * phi);
        let expect = 1.0 - 4.0 * (em2 * dy * dy - y * y) / (y * (y - 1.0) * (y - 1.0));
        assert!((lagrangian_a(t, y, dy, &p, phi).unwrap() - expect).norm() < 1e-14);
    }

    #[test]
    fn zero_length_interval() {
        let (_, params, ic) = setup();
        let tr = integrate_ray(&ic, ic.t0, &params, 0.7, &[], &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.samples.len(), 1);
        assert!(tr.detours.is_empty());
    }

    #[test]
    fn trajectory_satisfies_psi_and_b_equations() {
        let (bd, params, ic) = setup();
        let outs = grid(ic.t0, 200.0, 0.25);
        let tr = integrate_ray(&ic, 200.0, &params, 0.7, &outs, &IntegratorOptions::default()).unwrap();
        assert!(!tr.detours.is_empty());
        let mut worst = 0.0f64;
        for s in &tr.samples {
            let (psi, dpsi, b) = sample_psi_b(s, &params, 0.7, bd.a).unwrap();
            let r = psi_equation_residual(s.x, psi, dpsi, b, bd.a, &params);
            worst = worst.max(r.norm() / (1.0 + psi.norm().powi(4)));
        }
        assert!(worst < 1e-9, "psi residual {worst}");

        // b' by a five-point stencil on a fine grid
        let h = 0.01;
        let fine = integrate_ray(&ic, 80.0, &params, 0.7, &grid(ic.t0, 80.0, h), &IntegratorOptions::default()).unwrap();
        let ray = rotation(0.7);
        let mut worst_b = 0.0f64;
        let mut checked = 0;
        for w in fine.samples.windows(5) {
            if (w[4].t.re - w[0].t.re - 4.0 * h).abs() > 1e-9 {
                continue;
            }
            let bs: Vec<Complex64> = w
                .iter()
                .map(|s| sample_psi_b(s, &params, 0.7, bd.a).unwrap().2)
                .collect();
            let (psi, dpsi, b) = sample_psi_b(&w[2], &params, 0.7, bd.a).unwrap();
            let db = (8.0 * (bs[3] - bs[1]) - (bs[4] - bs[0])) / (12.0 * h * ray);
            let rhs = b_equation_rhs(w[2].x, psi, dpsi, b, bd.a, &params);
            worst_b = worst_b.max((db - rhs).norm() / (1.0 + rhs.norm()));
            checked += 1;
        }
        assert!(checked > 1000);
        assert!(worst_b < 1e-5, "b residual {worst_b}");
    }

    #[test]
    fn tolerance_halving_converges() {
        let (_, params, ic) = setup();
        let outs = grid(ic.t0, 150.0, 0.5);
        let mut o = IntegratorOptions {
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        };
        let a = integrate_ray(&ic, 150.0, &params, 0.7, &outs, &o).unwrap();
        o.rtol *= 0.5;
        o.atol *= 0.5;
        let b = integrate_ray(&ic, 150.0, &params, 0.7, &outs, &o).unwrap();
        let (d, shared) = max_diff(&a, &b);
        assert!(shared > 150);
        assert!(d < 10.0 * 1e-10, "difference {d}");
    }

    #[test]
    fn chart_threshold_is_transparent() {
        let (_, params, ic) = setup();
        let outs = grid(ic.t0, 150.0, 0.5);
        let a = integrate_ray(&ic, 150.0, &params, 0.7, &outs, &IntegratorOptions::default()).unwrap();
        let o = IntegratorOptions {
            chart_threshold: 1e4,
            ..Default::default()
        };
        let b = integrate_ray(&ic, 150.0, &params, 0.7, &outs, &o).unwrap();
        assert!(a.samples.iter().all(|s| s.chart == Chart::Y || s.y.norm() > 1e3));
        let (d, shared) = max_diff(&a, &b);
        assert!(shared > 150);
        assert!(d < 1e-8, "difference {d}");
    }

    #[test]
    fn detour_radius_does_not_change_continuation() {
        let (_, params, ic) = setup();
        let outs = grid(ic.t0, 150.0, 0.5);
        let a = integrate_ray(&ic, 150.0, &params, 0.7, &outs, &IntegratorOptions::default()).unwrap();
        let o = IntegratorOptions {
            detour_radius: 1.0,
            ..Default::default()
        };
        let b = integrate_ray(&ic, 150.0, &params, 0.7, &outs, &o).unwrap();
        assert!(b.skipped.len() > a.skipped.len());
        let (d, shared) = max_diff(&a, &b);
        assert!(shared > 100);
        assert!(d < 1e-8, "difference {d}");
    }

    #[test]
    fn detours_go_up_and_skip_their_span() {
        let (_, params, ic) = setup();
        let outs = grid(ic.t0, 150.0, 0.1);
        let tr = integrate_ray(&ic, 150.0, &params, 0.7, &outs, &IntegratorOptions::default()).unwrap();
        for d in &tr.detours {
            assert!(d.height > 0.0 && d.hi > d.lo);
            assert!(d.center.im < d.height);
        }
        for s in &tr.samples[1..] {
            assert!(!tr.in_detour(s.t.re));
            assert_eq!(s.t.im, 0.0);
        }
        for t in &tr.skipped {
            assert!(tr.in_detour(*t));
        }
        assert_eq!(tr.samples.len() - 1 + tr.skipped.len(), outs.len());
    }
}
