//! Synthetic angiograms, segmentation and contrast intensity profiles.

mod cip;
mod frame;
mod projection;

pub use cip::{
    cip_from_counts, cip_l2, compute_cip, extract_features, trapezoid, Cip, CipFeatures,
    HIGH_LEVEL, LOW_LEVEL,
};
pub use frame::{
    grayscale, read_pgm, threshold_count, threshold_mask, write_pgm, AngiogramFrame, Mask,
    Rasterizer, RenderConfig,
};
pub use projection::{project, project_cells, project_point, ProjectedSegment, ViewAngles};
