//! Monte Carlo estimation of derivatives of diffusion semigroups and of
//! harmonic functions for (possibly hypoelliptic) Stratonovich SDEs, using
//! integration-by-parts weights instead of differentiating the payoff.

pub mod cli_io;
pub mod clock;
pub mod control;
pub mod dsl;
pub mod estimators;
pub mod flow;
pub mod linalg;
pub mod scalar;
pub mod sde;
pub mod zoo;

pub use dsl::{parse_field_expr, FieldExpr, HormanderReport, ModelSpec, SdeModel, VectorField};
pub use scalar::Real;

/// `f64` instantiations of the generic types.
pub type TimeGrid = sde::TimeGrid<f64>;
pub type BrownianPath = sde::BrownianPath<f64>;
pub type Domain = sde::Domain<f64>;
pub type StoppingRule = sde::StoppingRule<f64>;
pub type Trajectory = sde::Trajectory<f64>;
pub type FlowBundle = flow::FlowBundle<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type ClockSpec = clock::ClockSpec<f64>;
pub type ControlPath = control::ControlPath<f64>;
pub type BangBangConfig = control::BangBangConfig<f64>;
pub type BarrierConfig = control::BarrierConfig<f64>;
pub type RampProfile = control::RampProfile<f64>;
pub type StrategySpec = estimators::StrategySpec<f64>;
pub type PerturbSettings = estimators::PerturbSettings<f64>;
pub type Target = estimators::Target<f64>;
