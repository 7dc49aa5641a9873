//! Reduced-order simulator for coronary angiography contrast injection.
//!
//! The crate couples a closed-loop lumped-parameter model of the left heart,
//! systemic Windkessel and coronary outlets to one-dimensional contrast
//! transport on a coronary tree, renders synthetic angiograms, extracts
//! contrast intensity profiles (CIPs) and calibrates the circuit against
//! hemodynamic and angiographic targets.

pub mod calibration;
pub mod error;
pub mod lpm;
pub mod pipeline;
pub mod presets;
pub mod render;
pub mod transport;
pub mod tree;
pub mod units;

pub use error::{Error, Result};
