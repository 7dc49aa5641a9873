//! Closed-loop lumped-parameter hemodynamics.

mod elastance;
mod metrics;
mod params;
mod system;

pub use elastance::{elastance_at, ElastanceParams};
pub use metrics::{
    cfr, compute_metrics, diastolic_fraction, ventricular_volume_balance, HemodynamicMetrics,
};
pub use params::{
    AortaParams, CoronaryParams, HeartParams, LpmParameterSet, ParameterFile, TerminalLink,
    DEFAULT_V0,
};
pub use system::{
    auxiliary, coronary_derivatives, initial_state, simulate, state_dimension, system_rhs,
    windkessel_derivative, Auxiliary, HemoSeries, SimulationOptions, TerminalSeries, ValveState,
    IDX_P_WK, IDX_Q_AV, IDX_Q_MV, IDX_V_LV,
};
