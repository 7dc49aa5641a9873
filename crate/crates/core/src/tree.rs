//! Coronary branch network: geometry, topology, Poiseuille resistances and
//! Murray's-law flow targets.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One straight vessel segment. Dimensions in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSegment {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(rename = "radius_mm")]
    pub radius: f64,
    #[serde(rename = "length_mm")]
    pub length: f64,
    #[serde(rename = "proximal_xyz_mm")]
    pub proximal_point: [f64; 3],
    #[serde(rename = "distal_xyz_mm")]
    pub distal_point: [f64; 3],
    pub terminal: bool,
    pub side: Side,
}

/// Blood properties. Viscosity in Pa·s, density in kg/m³, diffusivity of
/// the contrast agent in mm²/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidProperties {
    pub viscosity: f64,
    pub density: f64,
    pub diffusivity: f64,
}

impl Default for FluidProperties {
    fn default() -> Self {
        Self {
            viscosity: 0.004,
            density: 1060.0,
            diffusivity: 0.00203,
        }
    }
}

impl FluidProperties {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.viscosity) && ok(self.density) && ok(self.diffusivity) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "fluid properties must be strictly positive: {self:?}"
            )))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    segment: Vec<BranchSegment>,
}

/// Validated branch network. Segments are stored in topological order
/// (every parent precedes its children).
#[derive(Debug, Clone, PartialEq)]
pub struct VesselTree {
    segments: Vec<BranchSegment>,
    children: Vec<Vec<usize>>,
    parent_index: Vec<Option<usize>>,
    ostium_left: Option<usize>,
    ostium_right: Option<usize>,
}

const REFERENCE_TREE: &str = include_str!("../presets/tree_reference.toml");

impl VesselTree {
    /// Reference left+right geometry shipped with the crate.
    pub fn reference() -> Self {
        load_tree(REFERENCE_TREE).expect("shipped reference tree is valid")
    }

    pub fn from_segments(segments: Vec<BranchSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("tree has no segments".into()));
        }
        let mut by_id: HashMap<&str, usize> = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            if by_id.insert(s.id.as_str(), i).is_some() {
                return Err(invalid(&s.id, "duplicate id"));
            }
            if !(s.radius.is_finite() && s.radius > 0.0) {
                return Err(invalid(&s.id, format!("radius must be > 0, got {}", s.radius)));
            }
            if !(s.length.is_finite() && s.length > 0.0) {
                return Err(invalid(&s.id, format!("length must be > 0, got {}", s.length)));
            }
            if s.proximal_point.iter().chain(&s.distal_point).any(|v| !v.is_finite()) {
                return Err(invalid(&s.id, "non-finite coordinates"));
            }
        }
        for s in &segments {
            if let Some(p) = &s.parent {
                let pi = *by_id
                    .get(p.as_str())
                    .ok_or_else(|| invalid(&s.id, format!("parent `{p}` does not exist")))?;
                if segments[pi].side != s.side {
                    return Err(invalid(&s.id, format!("side differs from parent `{p}`")));
                }
            }
        }

        // Kahn-style ordering; anything left over sits on a cycle.
        let mut order = Vec::with_capacity(segments.len());
        let mut placed: HashSet<usize> = HashSet::new();
        let mut frontier: Vec<usize> = (0..segments.len())
            .filter(|&i| segments[i].parent.is_none())
            .collect();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                order.push(i);
                placed.insert(i);
            }
            for (j, s) in segments.iter().enumerate() {
                if placed.contains(&j) || next.contains(&j) {
                    continue;
                }
                if let Some(p) = &s.parent {
                    if frontier.contains(&by_id[p.as_str()]) {
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        if order.len() != segments.len() {
            let bad = (0..segments.len()).find(|i| !placed.contains(i)).unwrap();
            return Err(invalid(&segments[bad].id, "parent chain forms a cycle"));
        }

        let segments: Vec<BranchSegment> = order.iter().map(|&i| segments[i].clone()).collect();
        let index: HashMap<&str, usize> = segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let parent_index: Vec<Option<usize>> = segments
            .iter()
            .map(|s| s.parent.as_ref().map(|p| index[p.as_str()]))
            .collect();
        let mut children = vec![Vec::new(); segments.len()];
        for (i, p) in parent_index.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }

        let mut ostium_left = None;
        let mut ostium_right = None;
        for (i, s) in segments.iter().enumerate() {
            if s.parent.is_some() {
                continue;
            }
            let slot = match s.side {
                Side::Left => &mut ostium_left,
                Side::Right => &mut ostium_right,
            };
            if slot.is_some() {
                return Err(invalid(&s.id, format!("second root on the {:?} side", s.side)));
            }
            *slot = Some(i);
        }
        for (i, s) in segments.iter().enumerate() {
            if children[i].is_empty() && !s.terminal {
                return Err(invalid(&s.id, "leaf segment must be terminal"));
            }
        }

        Ok(Self {
            segments,
            children,
            parent_index,
            ostium_left,
            ostium_right,
        })
    }

    pub fn segments(&self) -> &[BranchSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&BranchSegment> {
        self.index_of(id).map(|i| &self.segments[i])
    }

    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index]
    }

    pub fn parent(&self, index: usize) -> Option<usize> {
        self.parent_index[index]
    }

    pub fn ostium_left(&self) -> Option<&BranchSegment> {
        self.ostium_left.map(|i| &self.segments[i])
    }

    pub fn ostium_right(&self) -> Option<&BranchSegment> {
        self.ostium_right.map(|i| &self.segments[i])
    }

    pub fn ostium(&self, side: Side) -> Option<usize> {
        match side {
            Side::Left => self.ostium_left,
            Side::Right => self.ostium_right,
        }
    }

    /// Indices of terminal segments in tree order.
    pub fn terminal_indices(&self) -> Vec<usize> {
        (0..self.segments.len())
            .filter(|&i| self.segments[i].terminal)
            .collect()
    }

    pub fn terminals(&self) -> Vec<&BranchSegment> {
        self.segments.iter().filter(|s| s.terminal).collect()
    }

    pub fn terminals_on(&self, side: Side) -> Vec<&BranchSegment> {
        self.segments
            .iter()
            .filter(|s| s.terminal && s.side == side)
            .collect()
    }

    /// Segment indices from the root down to `index` inclusive.
    pub fn path_from_root(&self, index: usize) -> Vec<usize> {
        let mut path = vec![index];
        let mut cur = index;
        while let Some(p) = self.parent_index[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Indices of every segment in the subtree rooted at `index`.
    pub fn subtree(&self, index: usize) -> Vec<usize> {
        let mut out = vec![index];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.children[out[i]]);
            i += 1;
        }
        out
    }

    /// Series resistance of the vessels from the ostium to the outlet of
    /// `terminal`, used as the resistor surrogate of the 3D domain.
    pub fn path_resistance(&self, terminal: usize, fluid: &FluidProperties) -> Result<f64> {
        self.path_from_root(terminal)
            .into_iter()
            .map(|i| poiseuille_resistance(&self.segments[i], fluid))
            .sum()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&TreeFile {
            segment: self.segments.clone(),
        })
        .expect("tree serializes")
    }
}

fn invalid(segment: &str, reason: impl Into<String>) -> Error {
    Error::InvalidSegment {
        segment: segment.to_string(),
        reason: reason.into(),
    }
}

/// Parse and validate a tree file (`[[segment]]` tables).
pub fn load_tree(config_text: &str) -> Result<VesselTree> {
    let file: TreeFile = toml::from_str(config_text).map_err(|e| Error::Parse(e.to_string()))?;
    VesselTree::from_segments(file.segment)
}

/// Poiseuille resistance 8μL/(πr⁴) in Pa·s/mm³ (μ in Pa·s, L and r in mm).
pub fn poiseuille_resistance(segment: &BranchSegment, fluid: &FluidProperties) -> Result<f64> {
    if !(segment.radius > 0.0 && segment.length > 0.0) {
        return Err(invalid(&segment.id, "radius and length must be positive"));
    }
    Ok(8.0 * fluid.viscosity * segment.length / (PI * segment.radius.powi(4)))
}

/// Split `total_flow` across terminals in proportion to r³. The last entry
/// takes the remainder so the split sums to `total_flow` exactly.
pub fn murray_targets(terminals: &[&BranchSegment], total_flow: f64) -> Result<Vec<(String, f64)>> {
    if terminals.is_empty() {
        return Err(Error::InvalidInput("murray_targets needs at least one terminal".into()));
    }
    if !(total_flow >= 0.0 && total_flow.is_finite()) {
        return Err(Error::InvalidInput(format!("total flow must be >= 0, got {total_flow}")));
    }
    let cubes: Vec<f64> = terminals.iter().map(|s| s.radius.powi(3)).collect();
    let sum: f64 = cubes.iter().sum();
    let mut out = Vec::with_capacity(terminals.len());
    let mut assigned = 0.0;
    for (k, s) in terminals.iter().enumerate() {
        let q = if k + 1 == terminals.len() {
            total_flow - assigned
        } else {
            total_flow * cubes[k] / sum
        };
        assigned += q;
        out.push((s.id.clone(), q));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(id: &str, parent: Option<&str>, radius: f64, length: f64, terminal: bool) -> BranchSegment {
        BranchSegment {
            id: id.into(),
            name: id.into(),
            parent: parent.map(Into::into),
            radius,
            length,
            proximal_point: [0.0; 3],
            distal_point: [length, 0.0, 0.0],
            terminal,
            side: Side::Left,
        }
    }

    #[test]
    fn reference_tree_has_expected_terminals() {
        let tree = VesselTree::reference();
        assert_eq!(tree.len(), 7);
        let mut names: Vec<&str> = tree.terminals().iter().map(|s| s.name.as_str()).collect();
        names.sort();
        assert_eq!(names, ["AM", "LAD", "LCx", "OM1", "OM2", "RCA"]);
        assert_eq!(tree.ostium_left().unwrap().id, "LM");
        assert_eq!(tree.ostium_right().unwrap().id, "RCA");
        for (i, _) in tree.segments().iter().enumerate() {
            if let Some(p) = tree.parent(i) {
                assert!(p < i, "parents precede children");
            }
        }
    }

    #[test]
    fn reference_coordinates_match_lengths() {
        for s in VesselTree::reference().segments() {
            let d: f64 = (0..3)
                .map(|k| (s.distal_point[k] - s.proximal_point[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((d - s.length).abs() < 1e-9, "{}: {d} vs {}", s.id, s.length);
        }
    }

    #[test]
    fn single_segment_tree() {
        let text = r#"
[[segment]]
id = "LM"
name = "LM"
radius_mm = 2.0
length_mm = 10.0
proximal_xyz_mm = [0.0, 0.0, 0.0]
distal_xyz_mm = [10.0, 0.0, 0.0]
terminal = true
side = "left"
"#;
        let tree = load_tree(text).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.terminals().len(), 1);
        assert!(tree.ostium_right().is_none());
    }

    #[test]
    fn zero_radius_is_rejected() {
        let text = VesselTree::reference()
            .to_toml_string()
            .replacen("radius_mm = 1.7", "radius_mm = 0.0", 1);
        match load_tree(&text) {
            Err(Error::InvalidSegment { segment, .. }) => assert_eq!(segment, "LAD"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let dup = vec![seg("A", None, 1.0, 1.0, true), seg("A", None, 1.0, 1.0, true)];
        assert!(VesselTree::from_segments(dup).is_err());
        let orphan = vec![seg("A", None, 1.0, 1.0, false), seg("B", Some("X"), 1.0, 1.0, true)];
        assert!(matches!(
            VesselTree::from_segments(orphan),
            Err(Error::InvalidSegment { segment, .. }) if segment == "B"
        ));
        let cycle = vec![
            seg("R", None, 1.0, 1.0, true),
            seg("A", Some("B"), 1.0, 1.0, true),
            seg("B", Some("A"), 1.0, 1.0, true),
        ];
        assert!(VesselTree::from_segments(cycle).is_err());
        let two_roots = vec![seg("A", None, 1.0, 1.0, true), seg("B", None, 1.0, 1.0, true)];
        assert!(VesselTree::from_segments(two_roots).is_err());
        let neg_len = vec![seg("A", None, 1.0, -1.0, true)];
        assert!(VesselTree::from_segments(neg_len).is_err());
    }

    #[test]
    fn children_listed_before_parent_are_reordered() {
        let segs = vec![
            seg("C", Some("B"), 1.0, 1.0, true),
            seg("B", Some("A"), 1.0, 1.0, false),
            seg("A", None, 1.0, 1.0, false),
        ];
        let tree = VesselTree::from_segments(segs).unwrap();
        let ids: Vec<&str> = tree.segments().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["A", "B", "C"]);
    }

    #[test]
    fn parse_error_reports_line() {
        let err = load_tree("[[segment]]\nid = \"A\"\nradius_mm = = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn poiseuille_reference_value() {
        let s = seg("X", None, 1.0, 100.0, true);
        let r = poiseuille_resistance(&s, &FluidProperties::default()).unwrap();
        assert!((r - 8.0 * 0.004 * 100.0 / PI).abs() < 1e-12);
        assert!((r - 1.019).abs() < 1e-3);
        let wide = seg("X", None, 2.0, 100.0, true);
        let r2 = poiseuille_resistance(&wide, &FluidProperties::default()).unwrap();
        assert!((r / r2 - 16.0).abs() < 1e-12);
        let mut flat = s.clone();
        flat.length = 0.0;
        assert!(poiseuille_resistance(&flat, &FluidProperties::default()).is_err());
    }

    #[test]
    fn murray_examples() {
        let a = seg("a", None, 2.0, 1.0, true);
        let b = seg("b", None, 1.0, 1.0, true);
        let q = murray_targets(&[&a, &b], 9.0).unwrap();
        assert!((q[0].1 - 8.0).abs() < 1e-12 && (q[1].1 - 1.0).abs() < 1e-12);

        let tree = VesselTree::reference();
        let left: Vec<&BranchSegment> = ["LAD", "OM1", "OM2", "LCx"]
            .iter()
            .map(|id| tree.get(id).unwrap())
            .collect();
        let q = murray_targets(&left, 2417.0).unwrap();
        let expect = [947.2, 423.6, 256.6, 789.7];
        for ((_, got), want) in q.iter().zip(expect) {
            assert!((got - want).abs() < 0.05, "{got} vs {want}");
        }

        let q = murray_targets(&[&a], 5.5).unwrap();
        assert_eq!(q[0].1, 5.5);
        assert!(murray_targets(&[], 1.0).is_err());
    }

    #[test]
    fn path_resistance_sums_ancestors() {
        let tree = VesselTree::reference();
        let fluid = FluidProperties::default();
        let lad = tree.index_of("LAD").unwrap();
        let expected = poiseuille_resistance(tree.get("LM").unwrap(), &fluid).unwrap()
            + poiseuille_resistance(tree.get("LAD").unwrap(), &fluid).unwrap();
        assert!((tree.path_resistance(lad, &fluid).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn serialization_round_trips() {
        let tree = VesselTree::reference();
        assert_eq!(load_tree(&tree.to_toml_string()).unwrap(), tree);
    }

    proptest! {
        #[test]
        fn murray_sums_and_orders(radii in prop::collection::vec(0.1f64..5.0, 1..8), total in 0.0f64..1e5) {
            let segs: Vec<BranchSegment> = radii
                .iter()
                .enumerate()
                .map(|(i, &r)| seg(&i.to_string(), None, r, 1.0, true))
                .collect();
            let refs: Vec<&BranchSegment> = segs.iter().collect();
            let q = murray_targets(&refs, total).unwrap();
            let sum: f64 = q.iter().map(|(_, v)| v).sum();
            prop_assert!((sum - total).abs() <= 1e-9 * total.max(1.0));
            if total > 0.0 {
                for i in 0..radii.len() {
                    for j in 0..radii.len() {
                        if radii[i] < radii[j] * (1.0 - 1e-9) {
                            prop_assert!(q[i].1 < q[j].1);
                        }
                    }
                }
            }
        }

        #[test]
        fn poiseuille_monotone_and_linear(r in 0.1f64..5.0, dr in 0.01f64..2.0, l in 0.1f64..200.0, k in 0.1f64..10.0) {
            let fluid = FluidProperties::default();
            let a = poiseuille_resistance(&seg("a", None, r, l, true), &fluid).unwrap();
            let b = poiseuille_resistance(&seg("b", None, r + dr, l, true), &fluid).unwrap();
            let c = poiseuille_resistance(&seg("c", None, r, l * k, true), &fluid).unwrap();
            prop_assert!(b < a);
            prop_assert!((c - k * a).abs() <= 1e-12 * c.abs());
        }
    }
}
