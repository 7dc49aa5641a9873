use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lpm::{CoronaryParams, HemodynamicMetrics, LpmParameterSet};
use crate::pipeline::Pipeline;
use crate::render::{Cip, CipFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "R_a")]
    Ra,
    #[serde(rename = "R_ap")]
    Rap,
    #[serde(rename = "R_ad")]
    Rad,
    #[serde(rename = "C_a")]
    Ca,
    #[serde(rename = "C_im")]
    Cim,
    /// All three resistances together.
    #[serde(rename = "R_all")]
    AllResistances,
}

impl Family {
    pub const INDIVIDUAL: [Family; 5] = [Family::Ra, Family::Rap, Family::Rad, Family::Ca, Family::Cim];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ra => "R_a",
            Family::Rap => "R_ap",
            Family::Rad => "R_ad",
            Family::Ca => "C_a",
            Family::Cim => "C_im",
            Family::AllResistances => "R_all",
        }
    }

    pub fn is_resistance(self) -> bool {
        !matches!(self, Family::Ca | Family::Cim)
    }

    pub fn apply(self, c: &CoronaryParams, factor: f64) -> CoronaryParams {
        let mut o = *c;
        match self {
            Family::Ra => o.r_a *= factor,
            Family::Rap => o.r_ap *= factor,
            Family::Rad => o.r_ad *= factor,
            Family::Ca => o.c_a *= factor,
            Family::Cim => o.c_im *= factor,
            Family::AllResistances => o = c.scale_resistances(factor),
        }
        o
    }
}

pub const RESISTANCE_FACTORS: [f64; 5] = [1.0, 3.0, 5.0, 7.0, 9.0];
pub const COMPLIANCE_FACTORS: [f64; 5] = [1.0, 1.0 / 3.0, 1.0 / 5.0, 1.0 / 7.0, 1.0 / 9.0];
pub const UNIFORM_FACTORS: [f64; 3] = [1.0, 2.0, 3.0];
/// Record length for the studies; ninefold distal resistance needs about
/// this long to wash out.
pub const STUDY_CYCLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub family: Family,
    pub factor: f64,
    pub metrics: HemodynamicMetrics,
    pub cip: Cip,
    pub features: Option<CipFeatures>,
    /// AUC relative to the unperturbed run.
    pub auc_ratio: Option<f64>,
}

fn run_one(pipe: &Pipeline, base: &LpmParameterSet, family: Family, factor: f64) -> Result<(HemodynamicMetrics, Cip, Option<CipFeatures>)> {
    let p = base.map_coronary(|c| family.apply(c, factor));
    let r = pipe.run(&p, false)?;
    Ok((r.metrics, r.cip, r.features))
}

fn assemble(
    cases: Vec<(Family, f64)>,
    results: Vec<Result<(HemodynamicMetrics, Cip, Option<CipFeatures>)>>,
) -> Result<Vec<SensitivityRow>> {
    let mut rows = Vec::with_capacity(cases.len());
    for ((family, factor), r) in cases.into_iter().zip(results) {
        let (metrics, cip, features) = r?;
        rows.push(SensitivityRow {
            family,
            factor,
            metrics,
            cip,
            features,
            auc_ratio: None,
        });
    }
    let base_auc = rows
        .iter()
        .find(|r| r.factor == 1.0)
        .and_then(|r| r.features.map(|f| f.auc));
    for r in &mut rows {
        r.auc_ratio = match (base_auc, r.features) {
            (Some(b), Some(f)) if b > 0.0 => Some(f.auc / b),
            _ => None,
        };
    }
    Ok(rows)
}

/// One family at a time scaled on every outlet, the others left at 1×.
/// The 1× run is shared and repeated in each family's rows.
pub fn sensitivity_individual(
    baseline: &LpmParameterSet,
    pipe: &Pipeline,
    resistance_factors: &[f64],
    compliance_factors: &[f64],
) -> Result<Vec<SensitivityRow>> {
    let base = run_one(pipe, baseline, Family::Ra, 1.0)?;
    let mut cases = Vec::new();
    for fam in Family::INDIVIDUAL {
        let factors = if fam.is_resistance() {
            resistance_factors
        } else {
            compliance_factors
        };
        for &f in factors {
            cases.push((fam, f));
        }
    }
    let results: Vec<_> = cases
        .par_iter()
        .map(|&(fam, f)| {
            if f == 1.0 {
                Ok(base.clone())
            } else {
                run_one(pipe, baseline, fam, f)
            }
        })
        .collect();
    assemble(cases, results)
}

/// All resistances of every outlet scaled together.
pub fn sensitivity_uniform(baseline: &LpmParameterSet, pipe: &Pipeline, factors: &[f64]) -> Result<Vec<SensitivityRow>> {
    let cases: Vec<(Family, f64)> = factors.iter().map(|&f| (Family::AllResistances, f)).collect();
    let results: Vec<_> = cases
        .par_iter()
        .map(|&(fam, f)| run_one(pipe, baseline, fam, f))
        .collect();
    assemble(cases, results)
}
