//! Parameter sets and fixtures shipped with the crate.

use crate::lpm::{LpmParameterSet, ParameterFile};
use crate::tree::{FluidProperties, VesselTree};

pub const TREE_REFERENCE: &str = include_str!("../presets/tree_reference.toml");
pub const REST: &str = include_str!("../presets/rest.toml");
pub const HYPEREMIA: &str = include_str!("../presets/hyperemia.toml");
pub const HEALTHY_REST: &str = include_str!("../presets/healthy_rest.toml");
pub const STAGE1_REST: &str = include_str!("../presets/stage1_rest.toml");
pub const STAGE1_HYPEREMIA: &str = include_str!("../presets/stage1_hyperemia.toml");

fn build(text: &str) -> LpmParameterSet {
    let file = ParameterFile::parse(text).expect("shipped preset parses");
    LpmParameterSet::from_file(file, &VesselTree::reference(), &FluidProperties::default())
        .expect("shipped preset is valid")
}

/// Calibrated resting set on the reference tree.
pub fn rest_params() -> LpmParameterSet {
    build(REST)
}

/// Calibrated hyperemic set on the reference tree.
pub fn hyperemia_params() -> LpmParameterSet {
    build(HYPEREMIA)
}

/// Healthy resting baseline on the reference tree.
pub fn healthy_rest_params() -> LpmParameterSet {
    build(HEALTHY_REST)
}
