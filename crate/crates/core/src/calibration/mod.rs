//! Two-stage calibration and the sensitivity studies built on it.

mod de;
mod pretune;
mod sensitivity;
mod stage1;
mod stage2;

pub use de::{differential_evolution, DEConfig, DEResult, GenerationStats};
pub use pretune::{flow_targets, pretune_coronary, scale_targets, PretuneConfig, PretuneResult};
pub use sensitivity::{
    sensitivity_individual, sensitivity_uniform, Family, SensitivityRow, COMPLIANCE_FACTORS,
    RESISTANCE_FACTORS, STUDY_CYCLES, UNIFORM_FACTORS,
};
pub use stage1::{
    apply_stage1, evaluate_stage1, loss_stage1, run_stage1, stage1_constraints_met, stage1_vector,
    Stage1Bounds, Stage1File, Stage1Options, Stage1Result, Stage1Targets, PENALTY_WEIGHT, STAGE1_NAMES,
};
pub use stage2::{
    default_levels, format_label, grid_argmin, grid_search, loss_stage2, perturb_resistances, GridResult,
    RunSummary, Stage2Config, Stage2Outcome,
};
