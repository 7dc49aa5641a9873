use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpm::{compute_metrics, diastolic_fraction, simulate, HemoSeries, LpmParameterSet, SimulationOptions};
use crate::tree::{murray_targets, Side, VesselTree};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretuneConfig {
    /// Total coronary flow as a fraction of resting cardiac output.
    pub coronary_fraction: f64,
    /// Share of the coronary flow taken by the left tree.
    pub left_share: f64,
    /// Relative flow tolerance per outlet.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fixed R_a : R_ap : R_ad split of each outlet's total resistance.
    pub split: [f64; 3],
    /// Minimum diastolic share of outlet volume, left and right tree.
    pub dominance_left: f64,
    pub dominance_right: f64,
    /// Floor for C_a when halving it to strengthen diastolic dominance, mm³/Pa.
    pub c_a_floor: f64,
    pub max_halvings: usize,
    pub simulation: SimulationOptions,
}

impl Default for PretuneConfig {
    fn default() -> Self {
        Self {
            coronary_fraction: 0.04,
            left_share: 0.6,
            tolerance: 0.02,
            max_iterations: 30,
            split: [0.245, 0.073, 0.682],
            dominance_left: 0.6,
            dominance_right: 0.5,
            c_a_floor: 1e-3,
            max_halvings: 5,
            simulation: SimulationOptions::default(),
        }
    }
}

/// Per-outlet mean-flow targets in mm³/s: `coronary_fraction` of
/// `cardiac_output` split between sides by `left_share`, then within each
/// side by Murray's law.
pub fn flow_targets(tree: &VesselTree, cardiac_output: f64, cfg: &PretuneConfig) -> Result<BTreeMap<String, f64>> {
    if !(cardiac_output > 0.0) || !(0.0..=1.0).contains(&cfg.left_share) {
        return Err(Error::InvalidInput("cardiac output and left share must be positive".into()));
    }
    let total = cfg.coronary_fraction * cardiac_output;
    let mut out = BTreeMap::new();
    for (side, share) in [(Side::Left, cfg.left_share), (Side::Right, 1.0 - cfg.left_share)] {
        let terms = tree.terminals_on(side);
        if terms.is_empty() {
            continue;
        }
        for (id, q) in murray_targets(&terms, total * share)? {
            out.insert(id, q);
        }
    }
    Ok(out)
}

/// Hyperemic targets: resting targets scaled by the expected flow reserve.
pub fn scale_targets(targets: &BTreeMap<String, f64>, factor: f64) -> BTreeMap<String, f64> {
    targets.iter().map(|(k, v)| (k.clone(), v * factor)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretuneResult {
    pub params: LpmParameterSet,
    /// Simulations used by the flow loop.
    pub iterations: usize,
    pub max_error: f64,
    /// Mean outlet flows, L/min.
    pub flows: BTreeMap<String, f64>,
    /// Diastolic share of each outlet's volume over the last cycle.
    pub diastolic_fraction: BTreeMap<String, f64>,
    pub dominance_met: bool,
    pub halvings: usize,
}

fn outlet_means(series: &HemoSeries) -> Result<Vec<f64>> {
    let m = compute_metrics(series, true)?;
    Ok(series
        .terminals
        .iter()
        .map(|t| units::lmin_to_mm3s(m.terminal_flows[&t.id]))
        .collect())
}

fn apply_split(p: &LpmParameterSet, totals: &[f64], split: [f64; 3]) -> LpmParameterSet {
    let sum: f64 = split.iter().sum();
    let mut out = p.clone();
    for (k, t) in p.terminals.iter().enumerate() {
        let c = out.coronary.get_mut(&t.id).expect("validated set");
        c.r_a = totals[k] * split[0] / sum;
        c.r_ap = totals[k] * split[1] / sum;
        c.r_ad = totals[k] * split[2] / sum;
    }
    out
}

/// Drive outlet mean flows to `targets` (mm³/s) with multiplicative
/// updates of each outlet's total resistance, then check diastolic
/// dominance, halving `C_a` on failing sides when needed.
///
/// Failing dominance after all halvings is reported, not an error; failing
/// to meet the flow tolerance is.
pub fn pretune_coronary(
    params: &LpmParameterSet,
    targets: &BTreeMap<String, f64>,
    cfg: &PretuneConfig,
) -> Result<PretuneResult> {
    let goal: Vec<f64> = params
        .terminals
        .iter()
        .map(|t| {
            targets
                .get(&t.id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no flow target for outlet `{}`", t.id)))
        })
        .collect::<Result<_>>()?;
    if let Some(bad) = goal.iter().position(|q| !(q.is_finite() && *q > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "flow target for `{}` must be positive",
            params.terminals[bad].id
        )));
    }

    let mut totals: Vec<f64> = (0..params.terminals.len())
        .map(|k| params.coronary_for(k).total_resistance())
        .collect();
    let mut current = apply_split(params, &totals, cfg.split);
    let mut iterations = 0;
    let mut halvings = 0;

    loop {
        // Flow loop.
        let (series, max_error) = loop {
            let series = simulate(&current, &cfg.simulation)?;
            iterations += 1;
            let q = outlet_means(&series)?;
            let errors: Vec<f64> = q.iter().zip(&goal).map(|(s, g)| (s - g).abs() / g).collect();
            let max_error = errors.iter().copied().fold(0.0, f64::max);
            if max_error < cfg.tolerance {
                break (series, max_error);
            }
            if iterations >= cfg.max_iterations {
                return Err(Error::PretuneNotConverged {
                    iterations,
                    max_error,
                    last: Box::new(current),
                });
            }
            for k in 0..totals.len() {
                if q[k] > 0.0 {
                    totals[k] *= q[k] / goal[k];
                } else {
                    totals[k] *= 0.5;
                }
            }
            current = apply_split(&current, &totals, cfg.split);
        };

        let t_r = current.heart.elastance.t_r;
        let mut fractions = BTreeMap::new();
        let mut failing = Vec::new();
        for (k, t) in current.terminals.iter().enumerate() {
            let f = diastolic_fraction(&series, k, t_r)?;
            let need = match t.side {
                Side::Left => cfg.dominance_left,
                Side::Right => cfg.dominance_right,
            };
            if f < need {
                failing.push(t.id.clone());
            }
            fractions.insert(t.id.clone(), f);
        }
        let can_halve = failing
            .iter()
            .any(|id| current.coronary[id].c_a > cfg.c_a_floor);
        if failing.is_empty() || halvings >= cfg.max_halvings || !can_halve {
            let m = compute_metrics(&series, true)?;
            return Ok(PretuneResult {
                flows: m.terminal_flows,
                dominance_met: failing.is_empty(),
                diastolic_fraction: fractions,
                params: current,
                iterations,
                max_error,
                halvings,
            });
        }
        halvings += 1;
        for id in &failing {
            let c = current.coronary.get_mut(id).expect("known outlet");
            c.c_a = (0.5 * c.c_a).max(cfg.c_a_floor);
        }
    }
}
