//! Downlink simulator for a single massive-MIMO LEO satellite serving a
//! region of interest in the Ku band.
//!
//! The physics modules are generic over the scalar (`f32` or `f64`) through
//! [`num::Real`]; the experiment drivers in [`sim`] run in `f64`. The aliases
//! below name the common instantiations.

// `!(x > 0)` is the NaN-rejecting form used for every domain check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod antennas;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod error;
pub mod geo_orbit;
pub mod metrics;
pub mod num;
pub mod sim;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use sim::Scenario;

pub type EarthModel = geo_orbit::EarthModel<f64>;
pub type ConstellationGeometry = geo_orbit::ConstellationGeometry<f64>;
pub type SatelliteState = geo_orbit::SatelliteState<f64>;
pub type StereoFrame = geo_orbit::StereoFrame<f64>;
pub type RoiEllipse = geo_orbit::RoiEllipse<f64>;
pub type ArrayGeometry = antennas::ArrayGeometry<f64>;
pub type TerminalAntenna = antennas::TerminalAntenna<f64>;
pub type LinkBudget = channel::LinkBudget<f64>;
pub type RicianChannel = channel::RicianChannel<f64>;
pub type SubarrayCodebook = codebook::SubarrayCodebook<f64>;
pub type CellMap = codebook::CellMap<f64>;
pub type PointMetrics = metrics::PointMetrics<f64>;
pub type Vec3 = num::Vec3<f64>;

pub type EarthModelF32 = geo_orbit::EarthModel<f32>;
pub type SatelliteStateF32 = geo_orbit::SatelliteState<f32>;
pub type StereoFrameF32 = geo_orbit::StereoFrame<f32>;
pub type RoiEllipseF32 = geo_orbit::RoiEllipse<f32>;
pub type ArrayGeometryF32 = antennas::ArrayGeometry<f32>;
pub type LinkBudgetF32 = channel::LinkBudget<f32>;
pub type SubarrayCodebookF32 = codebook::SubarrayCodebook<f32>;
pub type Vec3F32 = num::Vec3<f32>;
