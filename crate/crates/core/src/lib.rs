//! Reduced geodesic motion on Kaluza-Klein monopole metrics.
//!
//! The four-metric `f(x) dx² + h(x) (dx⁴ + A)²` reduces, after fixing the
//! conserved vertical momentum `q`, to a charged particle on the curved
//! 3-manifold `g_ij = f δ_ij` in a monopole field and a scalar potential.
//! This crate evaluates those metrics ([`geometry`]), integrates the
//! reduced equations of motion ([`dynamics`], [`integrate`]), checks the
//! Killing-tensor and van Holten constraints that produce polynomial
//! constants of motion ([`killing`]), builds the angular-momentum and
//! Runge-Lenz type invariants in closed form ([`conserved`]), and drives
//! JSON-configured verification scenarios ([`scenario`]).
//!
//! The guide under `book/` walks through each piece; its Rust snippets are
//! compiled as doctests of this crate.

pub mod conserved;
pub mod dynamics;
pub mod error;
pub mod fd;
pub mod geometry;
pub mod integrate;
pub mod killing;
pub mod scenario;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

pub use conserved::{SphereSpec, TwoCenterSpec};
pub use dynamics::{EffectivePotential, PhaseState};
pub use error::{ConfigError, ConservedError, DomainError};
pub use geometry::{Center, ExternalPotential, MetricKind, MetricSpec, RadialRlParams};
pub use integrate::{IntegratorConfig, Trajectory};
pub use killing::{ConstraintResiduals, KillingCoefficients};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub struct Geometry;
    #[doc = include_str!("../../../book/src/dynamics.md")]
    pub struct Dynamics;
    #[doc = include_str!("../../../book/src/integration.md")]
    pub struct Integration;
    #[doc = include_str!("../../../book/src/killing.md")]
    pub struct Killing;
    #[doc = include_str!("../../../book/src/conserved.md")]
    pub struct Conserved;
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub struct Scenarios;
}
