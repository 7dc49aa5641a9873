use serde::{Deserialize, Serialize};

use super::de::{differential_evolution, DEConfig, DEResult};
use crate::error::{Error, Result};
use crate::lpm::{compute_metrics, simulate, HemodynamicMetrics, LpmParameterSet, SimulationOptions};

/// Hemodynamic targets in clinical units (L/min, mmHg, ml).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Targets {
    #[serde(rename = "Q_mean_hat")]
    pub q_mean: f64,
    #[serde(rename = "Q_max_hat")]
    pub q_max: f64,
    #[serde(rename = "P_sys_hat")]
    pub p_sys: f64,
    #[serde(rename = "P_dia_hat")]
    pub p_dia: f64,
    #[serde(rename = "EDV_LB")]
    pub edv_lb: f64,
    #[serde(rename = "EDV_UB")]
    pub edv_ub: f64,
}

impl Stage1Targets {
    pub fn validate(&self) -> Result<()> {
        let all = [self.q_mean, self.q_max, self.p_sys, self.p_dia, self.edv_lb, self.edv_ub];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.edv_lb >= self.edv_ub {
            return Err(Error::InvalidInput(format!(
                "stage-1 targets must be positive with EDV_LB < EDV_UB: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Design-variable box, internal units (mm³/Pa, Pa·s/mm³, Pa/mm³, s, Pa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Bounds {
    #[serde(rename = "C_s")]
    pub c_s: [f64; 2],
    #[serde(rename = "R_sp")]
    pub r_sp: [f64; 2],
    #[serde(rename = "R_sd")]
    pub r_sd: [f64; 2],
    #[serde(rename = "E_max")]
    pub e_max: [f64; 2],
    #[serde(rename = "E_min")]
    pub e_min: [f64; 2],
    pub t_max: [f64; 2],
    #[serde(rename = "P_LA")]
    pub p_la: [f64; 2],
}

pub const STAGE1_NAMES: [&str; 7] = ["C_s", "R_sp", "R_sd", "E_max", "E_min", "t_max", "P_LA"];

/// Smallest positive systemic compliance allowed when shifting bounds.
const MIN_COMPLIANCE: f64 = 0.1;

impl Stage1Bounds {
    pub fn as_pairs(&self) -> Vec<(f64, f64)> {
        [self.c_s, self.r_sp, self.r_sd, self.e_max, self.e_min, self.t_max, self.p_la]
            .iter()
            .map(|b| (b[0], b[1]))
            .collect()
    }

    /// Hyperemic box around a resting optimum: compliance shifted down,
    /// resistances reduced, contractility, timing and filling pressure
    /// raised, minimum elastance held fixed.
    pub fn hyperemia_from_rest(rest: &LpmParameterSet) -> Self {
        let a = &rest.aorta;
        let e = &rest.heart.elastance;
        let c_lo = (a.c_s - 15.0).max(MIN_COMPLIANCE);
        let c_hi = (a.c_s - 2.0).max(c_lo);
        Self {
            c_s: [c_lo, c_hi],
            r_sp: [0.3 * a.r_sp, 0.9 * a.r_sp],
            r_sd: [0.3 * a.r_sd, 0.9 * a.r_sd],
            e_max: [1.2 * e.e_max, 0.533_f64.max(1.2 * e.e_max)],
            e_min: [e.e_min, e.e_min],
            t_max: [0.95 * e.t_max, 1.05 * e.t_max],
            p_la: [1.02 * rest.heart.p_la, 1.08 * rest.heart.p_la],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in STAGE1_NAMES.iter().zip(self.as_pairs()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > 0.0) {
                return Err(Error::InvalidInput(format!("bad bounds for {name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// On-disk stage-1 problem. Bounds may be omitted when they are derived
/// from another optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1File {
    pub targets: Stage1Targets,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Stage1Bounds>,
}

impl Stage1File {
    pub fn parse(text: &str) -> Result<Self> {
        let f: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        f.targets.validate()?;
        if let Some(b) = &f.bounds {
            b.validate()?;
        }
        Ok(f)
    }
}

/// Vector in [`STAGE1_NAMES`] order.
pub fn stage1_vector(p: &LpmParameterSet) -> Vec<f64> {
    let e = &p.heart.elastance;
    vec![p.aorta.c_s, p.aorta.r_sp, p.aorta.r_sd, e.e_max, e.e_min, e.t_max, p.heart.p_la]
}

/// Copy of `base` with the seven heart/aorta design variables replaced.
/// The relaxation interval `t_r − t_max` is preserved.
pub fn apply_stage1(base: &LpmParameterSet, x: &[f64]) -> LpmParameterSet {
    let mut p = base.clone();
    let relax = base.heart.elastance.t_r - base.heart.elastance.t_max;
    p.aorta.c_s = x[0];
    p.aorta.r_sp = x[1];
    p.aorta.r_sd = x[2];
    p.heart.elastance.e_max = x[3];
    p.heart.elastance.e_min = x[4];
    p.heart.elastance.t_max = x[5];
    p.heart.elastance.t_r = x[5] + relax;
    p.heart.p_la = x[6];
    p
}

/// Added to every constraint violation so that touching a bound counts as
/// infeasible.
const BOUNDARY_VIOLATION: f64 = 1e-9;
pub const PENALTY_WEIGHT: f64 = 10.0;

fn outside(v: f64, lo: f64, hi: f64, scale: f64) -> f64 {
    if v <= lo {
        (lo - v) / scale + BOUNDARY_VIOLATION
    } else if v >= hi {
        (v - hi) / scale + BOUNDARY_VIOLATION
    } else {
        0.0
    }
}

/// Sum of the four relative target errors plus weighted penalties for an
/// end-diastolic volume outside `(EDV_LB, EDV_UB)` and a notch pressure
/// outside `(P_sys − 0.5·P_pulse, P_sys − 0.2·P_pulse)`.
pub fn loss_stage1(m: &HemodynamicMetrics, t: &Stage1Targets) -> f64 {
    let Some(p_dn) = m.p_dn else {
        return f64::INFINITY;
    };
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    let fit = rel(m.q_mean, t.q_mean) + rel(m.q_max, t.q_max) + rel(m.p_sys, t.p_sys) + rel(m.p_dia, t.p_dia);
    let edv = if m.edv <= t.edv_lb {
        outside(m.edv, t.edv_lb, t.edv_ub, t.edv_lb)
    } else {
        outside(m.edv, t.edv_lb, t.edv_ub, t.edv_ub)
    };
    let pulse = m.p_pulse.max(f64::MIN_POSITIVE);
    let dn = outside(p_dn, m.p_sys - 0.5 * m.p_pulse, m.p_sys - 0.2 * m.p_pulse, pulse);
    let l = fit + PENALTY_WEIGHT * (edv + dn);
    if l.is_finite() {
        l
    } else {
        f64::INFINITY
    }
}

/// True when both constraints hold strictly.
pub fn stage1_constraints_met(m: &HemodynamicMetrics, t: &Stage1Targets) -> bool {
    match m.p_dn {
        Some(p) => {
            m.edv > t.edv_lb
                && m.edv < t.edv_ub
                && p > m.p_sys - 0.5 * m.p_pulse
                && p < m.p_sys - 0.2 * m.p_pulse
        }
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Options {
    /// Integration used inside the optimiser.
    pub search: SimulationOptions,
    /// Integration used to re-evaluate the optimum.
    pub verify: SimulationOptions,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Self {
            search: SimulationOptions {
                dt: 1e-3,
                n_cycles: 6,
                periodicity_tol: 1e-2,
            },
            verify: SimulationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Result {
    pub params: LpmParameterSet,
    pub x: Vec<f64>,
    /// Loss of the optimum under the search integration.
    pub search_loss: f64,
    /// Loss of the optimum under the verification integration.
    pub verified_loss: f64,
    pub metrics: HemodynamicMetrics,
    pub constraints_met: bool,
    pub de: DEResult,
}

/// Loss of `params` against `targets`; failed simulations score infinity.
pub fn evaluate_stage1(params: &LpmParameterSet, targets: &Stage1Targets, sim: &SimulationOptions) -> f64 {
    match simulate(params, sim).and_then(|s| compute_metrics(&s, true)) {
        Ok(m) => loss_stage1(&m, targets),
        Err(_) => f64::INFINITY,
    }
}

/// Calibrate heart and aorta of `base` against `targets` within `bounds`.
pub fn run_stage1(
    base: &LpmParameterSet,
    targets: &Stage1Targets,
    bounds: &Stage1Bounds,
    de: &DEConfig,
    opts: &Stage1Options,
) -> Result<Stage1Result> {
    targets.validate()?;
    bounds.validate()?;
    let result = differential_evolution(
        |x| evaluate_stage1(&apply_stage1(base, x), targets, &opts.search),
        &bounds.as_pairs(),
        de,
    )?;
    let params = apply_stage1(base, &result.best);
    params.validate()?;
    let series = simulate(&params, &opts.verify)?;
    let metrics = compute_metrics(&series, true)?;
    Ok(Stage1Result {
        verified_loss: loss_stage1(&metrics, targets),
        constraints_met: stage1_constraints_met(&metrics, targets),
        search_loss: result.best_loss,
        x: result.best.clone(),
        params,
        metrics,
        de: result,
    })
}
