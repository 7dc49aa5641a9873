//! One-dimensional contrast transport on the coronary tree.

mod grid;
mod protocol;
mod solver;

pub use grid::{build_grid, build_grid_on, GridSegment, TransportGrid, DEFAULT_DIFFUSIVITY, DEFAULT_DX};
pub use protocol::{inlet_concentration, InjectionProtocol};
pub use solver::{
    advance, max_stable_dt, simulate_transport, BranchFlows, ConcentrationField, FlowMap,
    StepBalance, TransportDiagnostics, TransportOptions, TransportState, CFL_LIMIT,
};
