use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tree::{Side, VesselTree};

/// One vessel segment split into uniform cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSegment {
    pub id: String,
    /// Index into the source tree.
    pub tree_index: usize,
    pub first_cell: usize,
    pub n_cells: usize,
    pub dx: f64,
    pub area: f64,
    pub radius: f64,
    pub proximal_point: [f64; 3],
    pub distal_point: [f64; 3],
    /// Parent segment in this grid.
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// True when the segment ends in a coronary outlet.
    pub terminal: bool,
    /// Ids of the outlets fed through this segment, including its own.
    pub downstream_outlets: Vec<String>,
}

impl GridSegment {
    pub fn cells(&self) -> std::ops::Range<usize> {
        self.first_cell..self.first_cell + self.n_cells
    }

    pub fn last_cell(&self) -> usize {
        self.first_cell + self.n_cells - 1
    }

    pub fn cell_volume(&self) -> f64 {
        self.area * self.dx
    }

    /// End points of local cell `j` in patient coordinates, mm.
    pub fn cell_endpoints(&self, j: usize) -> ([f64; 3], [f64; 3]) {
        let lerp = |s: f64| {
            let mut p = [0.0; 3];
            for (k, v) in p.iter_mut().enumerate() {
                *v = self.proximal_point[k] + s * (self.distal_point[k] - self.proximal_point[k]);
            }
            p
        };
        let n = self.n_cells as f64;
        (lerp(j as f64 / n), lerp((j + 1) as f64 / n))
    }
}

/// Finite-volume grid over one side of the tree. The first segment holds
/// the inlet cell at the ostium.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportGrid {
    pub segments: Vec<GridSegment>,
    /// Owning segment of each cell.
    pub cell_segment: Vec<usize>,
    /// Molecular diffusivity, mm²/s.
    pub diffusivity: f64,
    pub side: Side,
}

impl TransportGrid {
    pub fn n_cells(&self) -> usize {
        self.cell_segment.len()
    }

    pub fn cell_volume(&self, cell: usize) -> f64 {
        self.segments[self.cell_segment[cell]].cell_volume()
    }

    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    /// Contrast mass held in `c`.
    pub fn total_mass(&self, c: &[f64]) -> f64 {
        self.segments
            .iter()
            .map(|s| s.cell_volume() * c[s.cells()].iter().sum::<f64>())
            .sum()
    }

    pub fn with_diffusivity(mut self, d: f64) -> Self {
        self.diffusivity = d;
        self
    }
}

pub const DEFAULT_DX: f64 = 0.5;
pub const DEFAULT_DIFFUSIVITY: f64 = 0.00203;

/// Grid over the left coronary tree.
pub fn build_grid(tree: &VesselTree, dx: f64) -> Result<TransportGrid> {
    build_grid_on(tree, Side::Left, dx)
}

pub fn build_grid_on(tree: &VesselTree, side: Side, dx: f64) -> Result<TransportGrid> {
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::InvalidInput(format!("dx must be positive, got {dx}")));
    }
    let root = tree
        .ostium(side)
        .ok_or_else(|| Error::InvalidInput(format!("tree has no {side:?} ostium")))?;
    let members = tree.subtree(root);
    let mut local = vec![usize::MAX; tree.len()];
    for (k, &i) in members.iter().enumerate() {
        local[i] = k;
    }

    let mut segments = Vec::with_capacity(members.len());
    let mut cell_segment = Vec::new();
    for (k, &i) in members.iter().enumerate() {
        let s = &tree.segments()[i];
        if dx > s.length * (1.0 + 1e-12) {
            return Err(Error::InvalidSegment {
                segment: s.id.clone(),
                reason: format!("dx {dx} mm exceeds segment length {} mm", s.length),
            });
        }
        let n_cells = ((s.length / dx) - 1e-9).ceil().max(1.0) as usize;
        let downstream_outlets = tree
            .subtree(i)
            .into_iter()
            .filter(|&j| tree.segments()[j].terminal)
            .map(|j| tree.segments()[j].id.clone())
            .collect();
        segments.push(GridSegment {
            id: s.id.clone(),
            tree_index: i,
            first_cell: cell_segment.len(),
            n_cells,
            dx: s.length / n_cells as f64,
            area: PI * s.radius * s.radius,
            radius: s.radius,
            proximal_point: s.proximal_point,
            distal_point: s.distal_point,
            parent: tree.parent(i).map(|p| local[p]),
            children: tree.children(i).iter().map(|&c| local[c]).collect(),
            terminal: s.terminal,
            downstream_outlets,
        });
        cell_segment.extend(std::iter::repeat_n(k, n_cells));
    }
    Ok(TransportGrid {
        segments,
        cell_segment,
        diffusivity: DEFAULT_DIFFUSIVITY,
        side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_left_grid() {
        let tree = VesselTree::reference();
        let g = build_grid(&tree, 0.5).unwrap();
        let ids: Vec<&str> = g.segments.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids[0], "LM");
        assert_eq!(g.segments.len(), 5);
        let lad = &g.segments[g.segment_index("LAD").unwrap()];
        assert_eq!(lad.n_cells, 200);
        assert!((lad.area - PI * 1.7 * 1.7).abs() < 1e-12);
        assert_eq!(g.n_cells(), 20 + 200 + 160 + 120 + 120);
        let lcx = g.segment_index("LCx").unwrap();
        assert_eq!(g.segments[lcx].downstream_outlets.len(), 3);
        assert_eq!(g.segments[0].downstream_outlets.len(), 4);
        for (k, s) in g.segments.iter().enumerate() {
            for &c in &s.children {
                assert_eq!(g.segments[c].parent, Some(k));
            }
            assert!(s.cells().all(|c| g.cell_segment[c] == k));
        }
    }

    #[test]
    fn dx_equal_to_length_gives_one_cell() {
        let tree = VesselTree::reference();
        let g = build_grid(&tree, 10.0).unwrap();
        assert_eq!(g.segments[0].n_cells, 1);
        assert!(build_grid(&tree, 10.5).is_err());
        assert!(build_grid(&tree, 0.0).is_err());
    }

    #[test]
    fn right_side_grid() {
        let tree = VesselTree::reference();
        let g = build_grid_on(&tree, Side::Right, 1.0).unwrap();
        assert_eq!(g.segments.len(), 2);
        assert_eq!(g.segments[0].downstream_outlets, vec!["RCA", "AM"]);
    }
}
