//! Numerics for the elliptic large-|x| asymptotics of Painlevé V transcendents.

pub mod curve_periods;
mod dop853;
pub mod dynamics;
pub mod error;
pub mod error_term;
pub mod identities;
pub mod leading_order;
pub mod primitives;
pub mod quadrature;
pub mod special_fn;
pub mod verify;

pub use curve_periods::{BoutrouxData, CurveBranch, Cycle, CyclePath, Periods};
pub use dynamics::PainleveParams;
pub use error::{PvError, Result};
pub use leading_order::{Frame, FrameParams, RayWindow, StripClass, StripSpec};
pub use primitives::PrimitiveKind;
pub use num_complex::Complex64;
pub use special_fn::{EllipticContext, ThetaContext};
