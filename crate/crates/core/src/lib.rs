//! Discrete Lagrange-Poincaré systems: simulation, symmetry reduction,
//! reconstruction and structure diagnostics.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod catalog;
pub mod connection;
pub mod diagnostics;
pub mod dlps;
pub mod error;
pub mod example_se2;
pub mod lie;
pub mod reduction;
pub mod scalar;
pub mod smooth;

pub use error::{Error, Result};

pub type SmoothMap = smooth::SmoothMap<f64>;
pub type Pair = dlps::Pair<f64>;
pub type DiscretePath = dlps::DiscretePath<f64>;
pub type FiberBundleModel = dlps::FiberBundleModel<f64>;
pub type DlpsSystem = dlps::DlpsSystem<f64>;
pub type Trajectory = dlps::Trajectory<f64>;
pub type GroupElement = lie::GroupElement<f64>;
pub type ActionModel = lie::ActionModel<f64>;
pub type QuotientModel = connection::QuotientModel<f64>;
pub type DiscreteConnection = connection::DiscreteConnection<f64>;
pub type ReducedModel = reduction::ReducedModel<f64>;
pub type ReductionResult = reduction::ReductionResult<f64>;
pub type TwoBodyConfig = example_se2::TwoBodyConfig<f64>;
