//! Circuit parameters for the heart, the aortic Windkessel and the coronary
//! outlets. Internal units: Pa, mm³, s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::elastance::ElastanceParams;
use crate::error::{Error, Result};
use crate::tree::{poiseuille_resistance, FluidProperties, Side, VesselTree};

/// Default unstressed ventricular volume, mm³.
pub const DEFAULT_V0: f64 = 0.0;

fn default_v0() -> f64 {
    DEFAULT_V0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeartParams {
    pub elastance: ElastanceParams,
    #[serde(rename = "R_MV")]
    pub r_mv: f64,
    #[serde(rename = "R_AV")]
    pub r_av: f64,
    #[serde(rename = "L_MV")]
    pub l_mv: f64,
    #[serde(rename = "L_AV")]
    pub l_av: f64,
    #[serde(rename = "P_LA")]
    pub p_la: f64,
    #[serde(rename = "V_0", default = "default_v0")]
    pub v0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AortaParams {
    #[serde(rename = "C_s")]
    pub c_s: f64,
    #[serde(rename = "R_sp")]
    pub r_sp: f64,
    #[serde(rename = "R_sd")]
    pub r_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoronaryParams {
    #[serde(rename = "R_a")]
    pub r_a: f64,
    #[serde(rename = "R_ap")]
    pub r_ap: f64,
    #[serde(rename = "R_ad")]
    pub r_ad: f64,
    #[serde(rename = "C_a")]
    pub c_a: f64,
    #[serde(rename = "C_im")]
    pub c_im: f64,
    pub alpha: f64,
}

impl CoronaryParams {
    pub fn total_resistance(&self) -> f64 {
        self.r_a + self.r_ap + self.r_ad
    }

    pub fn total_compliance(&self) -> f64 {
        self.c_a + self.c_im
    }

    /// Multiply all three resistances by `factor`, keeping their ratios.
    pub fn scale_resistances(&self, factor: f64) -> Self {
        Self {
            r_a: self.r_a * factor,
            r_ap: self.r_ap * factor,
            r_ad: self.r_ad * factor,
            ..*self
        }
    }

    fn validate(&self, id: &str) -> Result<()> {
        let pos = [self.r_a, self.r_ap, self.r_ad, self.c_a, self.c_im];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "coronary `{id}`: resistances and compliances must be positive"
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "coronary `{id}`: alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

impl HeartParams {
    pub fn validate(&self) -> Result<()> {
        self.elastance.validate()?;
        positive("R_MV", self.r_mv)?;
        positive("R_AV", self.r_av)?;
        positive("L_MV", self.l_mv)?;
        positive("L_AV", self.l_av)?;
        positive("P_LA", self.p_la)?;
        if !(self.v0.is_finite() && self.v0 >= 0.0) {
            return Err(Error::InvalidInput(format!("V_0 must be >= 0, got {}", self.v0)));
        }
        Ok(())
    }
}

impl AortaParams {
    pub fn validate(&self) -> Result<()> {
        positive("C_s", self.c_s)?;
        positive("R_sp", self.r_sp)?;
        positive("R_sd", self.r_sd)
    }
}

/// On-disk parameter file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterFile {
    pub heart: HeartParams,
    pub aorta: AortaParams,
    pub coronary: BTreeMap<String, CoronaryParams>,
}

impl ParameterFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("parameter file serializes")
    }
}

/// A coronary outlet together with the vessel path feeding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalLink {
    pub id: String,
    pub side: Side,
    pub path: Vec<String>,
}

/// Complete circuit description for one physiological state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpmParameterSet {
    pub heart: HeartParams,
    pub aorta: AortaParams,
    pub coronary: BTreeMap<String, CoronaryParams>,
    /// Poiseuille resistance of each tree segment, Pa·s/mm³.
    pub tree_resistances: BTreeMap<String, f64>,
    /// Outlets in tree order.
    pub terminals: Vec<TerminalLink>,
}

impl LpmParameterSet {
    pub fn new(
        heart: HeartParams,
        aorta: AortaParams,
        coronary: BTreeMap<String, CoronaryParams>,
        tree: &VesselTree,
        fluid: &FluidProperties,
    ) -> Result<Self> {
        fluid.validate()?;
        let mut tree_resistances = BTreeMap::new();
        for s in tree.segments() {
            tree_resistances.insert(s.id.clone(), poiseuille_resistance(s, fluid)?);
        }
        let terminals = tree
            .terminal_indices()
            .into_iter()
            .map(|i| TerminalLink {
                id: tree.segments()[i].id.clone(),
                side: tree.segments()[i].side,
                path: tree
                    .path_from_root(i)
                    .into_iter()
                    .map(|k| tree.segments()[k].id.clone())
                    .collect(),
            })
            .collect();
        let set = Self {
            heart,
            aorta,
            coronary,
            tree_resistances,
            terminals,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn from_file(file: ParameterFile, tree: &VesselTree, fluid: &FluidProperties) -> Result<Self> {
        Self::new(file.heart, file.aorta, file.coronary, tree, fluid)
    }

    pub fn to_file(&self) -> ParameterFile {
        ParameterFile {
            heart: self.heart,
            aorta: self.aorta,
            coronary: self.coronary.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.heart.validate()?;
        self.aorta.validate()?;
        let mut expected: Vec<&str> = self.terminals.iter().map(|t| t.id.as_str()).collect();
        expected.sort_unstable();
        let got: Vec<&str> = self.coronary.keys().map(String::as_str).collect();
        if expected != got {
            return Err(Error::InvalidInput(format!(
                "coronary parameters {got:?} do not match tree terminals {expected:?}"
            )));
        }
        for (id, c) in &self.coronary {
            c.validate(id)?;
        }
        Ok(())
    }

    /// Series resistance of the vessel path upstream of outlet `k`.
    pub fn path_resistance(&self, k: usize) -> f64 {
        self.terminals[k]
            .path
            .iter()
            .map(|id| self.tree_resistances[id])
            .sum()
    }

    pub fn coronary_for(&self, k: usize) -> &CoronaryParams {
        &self.coronary[&self.terminals[k].id]
    }

    pub fn period(&self) -> f64 {
        self.heart.elastance.period
    }

    /// Apply `f` to every outlet's coronary parameters.
    pub fn map_coronary(&self, f: impl Fn(&CoronaryParams) -> CoronaryParams) -> Self {
        let mut out = self.clone();
        for c in out.coronary.values_mut() {
            *c = f(c);
        }
        out
    }

    pub fn terminal_index(&self, id: &str) -> Option<usize> {
        self.terminals.iter().position(|t| t.id == id)
    }
}
