use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::TransportGrid;
use crate::tree::VesselTree;

/// C-arm orientation in degrees. RAO and CAU are positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAngles {
    pub rao_lao: f64,
    pub cra_cau: f64,
}

impl ViewAngles {
    pub const fn new(rao_lao: f64, cra_cau: f64) -> Self {
        Self { rao_lao, cra_cau }
    }

    /// RAO 21.9°, CAU 18.3°.
    pub const REST: Self = Self::new(21.9, 18.3);
    /// LAO 0.2°, CAU 35.2°.
    pub const HYPEREMIA: Self = Self::new(-0.2, 35.2);

    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| (-90.0..=90.0).contains(&a);
        if ok(self.rao_lao) && ok(self.cra_cau) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("view angles must lie in [-90, 90]: {self:?}")))
        }
    }
}

/// Orthographic projection of a patient-space point (x lateral,
/// y longitudinal, z depth) onto the detector plane, mm.
///
/// Rotates about the longitudinal axis by `rao_lao`, then about the
/// lateral axis by `cra_cau`, then drops depth.
pub fn project_point(p: [f64; 3], view: &ViewAngles) -> [f64; 2] {
    let (st, ct) = view.rao_lao.to_radians().sin_cos();
    let (sp, cp) = view.cra_cau.to_radians().sin_cos();
    let x1 = p[0] * ct + p[2] * st;
    let z1 = -p[0] * st + p[2] * ct;
    let y2 = p[1] * cp - z1 * sp;
    [x1, y2]
}

/// A segment after projection; radius is unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSegment {
    pub id: String,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub radius: f64,
}

impl ProjectedSegment {
    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }
}

pub fn project(tree: &VesselTree, view: &ViewAngles) -> Vec<ProjectedSegment> {
    tree.segments()
        .iter()
        .map(|s| ProjectedSegment {
            id: s.id.clone(),
            a: project_point(s.proximal_point, view),
            b: project_point(s.distal_point, view),
            radius: s.radius,
        })
        .collect()
}

/// Every transport cell as a projected capsule, in detector mm.
pub fn project_cells(grid: &TransportGrid, view: &ViewAngles) -> Vec<ProjectedSegment> {
    let mut out = Vec::with_capacity(grid.n_cells());
    for s in &grid.segments {
        for j in 0..s.n_cells {
            let (p, q) = s.cell_endpoints(j);
            out.push(ProjectedSegment {
                id: s.id.clone(),
                a: project_point(p, view),
                b: project_point(q, view),
                radius: s.radius,
            });
        }
    }
    out
}
