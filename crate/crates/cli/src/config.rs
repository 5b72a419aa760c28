use std::path::Path;

use pv_elliptic::dynamics::{InitialCondition, IntegratorOptions, ThetaTriple};
use pv_elliptic::identities::IdentityOptions;
use pv_elliptic::verify::VerifyOptions;
use pv_elliptic::{Complex64, FrameParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The half-strip the comparisons live in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StripConfig {
    /// Also the start of the trajectory when no `ic` is given.
    pub t_inf: f64,
    pub kappa0: f64,
    /// `None` lets the verifier choose.
    pub delta0: Option<f64>,
}

impl Default for StripConfig {
    fn default() -> Self {
        Self {
            t_inf: 30.0,
            kappa0: 1.0,
            delta0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub integrator: IntegratorOptions,
    /// Largest Boutroux residual accepted by `boutroux`.
    pub boutroux: f64,
    /// Relative tolerance on the bilinear relation.
    pub bilinear: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            integrator: IntegratorOptions::default(),
            boutroux: 1e-10,
            bilinear: 1e-9,
        }
    }
}

/// File names written into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputNames {
    pub report: String,
    pub table: String,
    pub plot: String,
}

impl Default for OutputNames {
    fn default() -> Self {
        Self {
            report: "report.json".into(),
            table: "table.csv".into(),
            plot: "plot.txt".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoutrouxConfig {
    /// Phases solved by continuation; empty means just `phi`.
    pub phi_grid: Vec<f64>,
}

fn default_seed_frame() -> FrameParams {
    FrameParams {
        x0: Complex64::new(1.0, 0.5),
        beta0: Complex64::new(0.3, -0.2),
    }
}

fn default_sample_step() -> f64 {
    0.25
}

/// One run of any subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ThetaTriple,
    pub phi: f64,
    /// Starting guess for `A`.
    #[serde(default)]
    pub a_seed: Option<Complex64>,
    #[serde(default)]
    pub strip: StripConfig,
    /// Initial data; when absent it is taken on the leading-order orbit of
    /// `seed_frame` at `t = strip.t_inf`.
    #[serde(default)]
    pub ic: Option<InitialCondition>,
    #[serde(default = "default_seed_frame")]
    pub seed_frame: FrameParams,
    pub t_end: f64,
    #[serde(default = "default_sample_step")]
    pub sample_step: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: OutputNames,
    #[serde(default)]
    pub boutroux: BoutrouxConfig,
    #[serde(default)]
    pub identities: IdentityOptions,
    #[serde(default)]
    pub verify: VerifyOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !self.phi.is_finite() || self.phi.abs() >= std::f64::consts::FRAC_PI_2 {
            return bad("phi must lie in (-pi/2, pi/2)");
        }
        if !(self.strip.t_inf > 0.0) || !(self.strip.kappa0 > 0.0) {
            return bad("strip.t_inf and strip.kappa0 must be positive");
        }
        if matches!(self.strip.delta0, Some(d) if !(d > 0.0)) {
            return bad("strip.delta0 must be positive");
        }
        if !(self.sample_step > 0.0) {
            return bad("sample_step must be positive");
        }
        let t0 = self.t0();
        if !(self.t_end >= t0) {
            return bad("t_end must not precede the initial point");
        }
        Ok(())
    }

    pub fn t0(&self) -> f64 {
        self.ic.map_or(self.strip.t_inf, |ic| ic.t0)
    }

    /// Applies `--tol` and `--phi`.
    pub fn with_overrides(mut self, tol: Option<f64>, phi: Option<f64>) -> Result<Self, CliError> {
        if let Some(tol) = tol {
            if !(tol > 0.0) {
                return Err(CliError::Config("--tol must be positive".into()));
            }
            self.tolerances.integrator.rtol = tol;
            self.tolerances.integrator.atol = 1e-2 * tol;
            self.tolerances.boutroux = tol;
        }
        if let Some(phi) = phi {
            self.phi = phi;
            self.boutroux.phi_grid.clear();
        }
        self.validate()?;
        Ok(self)
    }

    /// Verifier options with the strip settings applied.
    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            hole_radius: self.strip.delta0.or(self.verify.hole_radius),
            kappa0: self.strip.kappa0,
            ..self.verify
        }
    }

    pub fn identity_options(&self) -> IdentityOptions {
        IdentityOptions {
            t_lo: self.strip.t_inf,
            kappa0: self.strip.kappa0,
            ..self.identities
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT: &str = include_str!("../../../configs/default.json");

    #[test]
    fn round_trips_exactly() {
        let cfg: RunConfig = serde_json::from_str(DEFAULT).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, serde_json::to_string_pretty(&back).unwrap());
    }

    #[test]
    fn awkward_floats_survive() {
        let mut cfg: RunConfig = serde_json::from_str(DEFAULT).unwrap();
        cfg.phi = 0.1 + 0.2;
        cfg.seed_frame.x0 = Complex64::new(1.0 / 3.0, -f64::MIN_POSITIVE);
        cfg.tolerances.integrator.rtol = 1.2345678901234567e-11;
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_unknown_keys_at_every_level() {
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT).unwrap();
        v["bogus"] = 1.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT).unwrap();
        v["strip"]["bogus"] = 1.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT).unwrap();
        v["seed_frame"]["bogus"] = 1.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn overrides() {
        let cfg: RunConfig = serde_json::from_str(DEFAULT).unwrap();
        let o = cfg.clone().with_overrides(Some(1e-8), Some(-0.3)).unwrap();
        assert_eq!(o.phi, -0.3);
        assert_eq!(o.tolerances.integrator.rtol, 1e-8);
        assert!(cfg.clone().with_overrides(Some(-1.0), None).is_err());
        assert!(cfg.with_overrides(None, Some(2.0)).is_err());
    }
}
