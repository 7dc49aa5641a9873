use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpm::{HemodynamicMetrics, LpmParameterSet};
use crate::pipeline::Pipeline;
use crate::render::{cip_l2, Cip, CipFeatures};

/// `‖CIP_rest − ĈIP_rest‖ + ‖CIP_hyper − ĈIP_hyper‖ + |CFR − ĈFR|/ĈFR`,
/// with each norm the root-mean-square difference on the clinical grid.
pub fn loss_stage2(
    cip_rest: &Cip,
    cip_hyper: &Cip,
    clinical_rest: &Cip,
    clinical_hyper: &Cip,
    cfr: f64,
    cfr_hat: f64,
) -> Result<f64> {
    if !(cfr_hat > 0.0) {
        return Err(Error::InvalidInput("CFR target must be positive".into()));
    }
    Ok(cip_l2(cip_rest, clinical_rest)? + cip_l2(cip_hyper, clinical_hyper)? + (cfr - cfr_hat).abs() / cfr_hat)
}

pub fn default_levels() -> Vec<f64> {
    vec![-0.09, -0.06, -0.03, 0.0, 0.03, 0.06, 0.09]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    /// Relative resistance perturbations applied to every outlet.
    pub levels: Vec<f64>,
    #[serde(rename = "CFR_hat")]
    pub cfr_hat: f64,
    /// Outlet whose mean flow defines CFR.
    pub cfr_outlet: String,
    /// When set, clinical CIPs are shifted so the first sample at this
    /// fraction of their maximum sits at time zero.
    pub clinical_onset_fraction: Option<f64>,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            cfr_hat: 2.2,
            cfr_outlet: "LAD".into(),
            clinical_onset_fraction: None,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.levels)?;
        if !(self.cfr_hat > 0.0 && self.cfr_hat.is_finite()) {
            return Err(Error::InvalidInput("CFR_hat must be positive".into()));
        }
        Ok(())
    }
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    let has_zero = levels.contains(&0.0);
    let symmetric = levels
        .iter()
        .all(|l| levels.iter().any(|m| (m + l).abs() < 1e-12));
    if levels.is_empty() || !has_zero || !symmetric || levels.iter().any(|l| !(*l > -1.0)) {
        return Err(Error::InvalidInput(format!(
            "levels must be symmetric, include 0 and exceed -100%: {levels:?}"
        )));
    }
    Ok(())
}

fn pct(d: f64) -> String {
    let p = (d * 100.0).round() as i64;
    match p {
        0 => "0%".to_string(),
        p if p > 0 => format!("+{p}%"),
        p => format!("-{}%", -p),
    }
}

/// Label such as `+6%R & -3%H`.
pub fn format_label(delta_rest: f64, delta_hyper: f64) -> String {
    format!("{}R & {}H", pct(delta_rest), pct(delta_hyper))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub levels: Vec<f64>,
    /// `losses[i][j]` for rest level `i` and hyperemia level `j`.
    pub losses: Vec<Vec<f64>>,
    pub best: (usize, usize),
    pub best_loss: f64,
    pub label: String,
}

/// Exhaustive minimum over `levels × levels`. Ties go to the smallest
/// `|δr| + |δh|`, then to row-major order. Non-finite losses count as
/// infinite.
pub fn grid_argmin<F>(levels: &[f64], loss: F) -> Result<GridResult>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if levels.is_empty() {
        return Err(Error::InvalidInput("no grid levels".into()));
    }
    let n = levels.len();
    let flat: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let l = loss(k / n, k % n);
            if l.is_finite() {
                l
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut best = 0;
    for k in 1..n * n {
        let key = |k: usize| levels[k / n].abs() + levels[k % n].abs();
        if flat[k] < flat[best] || (flat[k] == flat[best] && key(k) < key(best)) {
            best = k;
        }
    }
    let (i, j) = (best / n, best % n);
    Ok(GridResult {
        levels: levels.to_vec(),
        losses: flat.chunks(n).map(<[f64]>::to_vec).collect(),
        best: (i, j),
        best_loss: flat[best],
        label: format_label(levels[i], levels[j]),
    })
}

/// Multiply every outlet's three resistances by `1 + delta`; compliances
/// stay fixed.
pub fn perturb_resistances(p: &LpmParameterSet, delta: f64) -> LpmParameterSet {
    p.map_coronary(|c| c.scale_resistances(1.0 + delta))
}

/// What the grid keeps from each pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cip: Cip,
    pub features: Option<CipFeatures>,
    pub metrics: HemodynamicMetrics,
}

fn summarize(pipe: &Pipeline, p: &LpmParameterSet) -> Option<RunSummary> {
    let run = pipe.run(p, false).ok()?;
    Some(RunSummary {
        cip: run.cip,
        features: run.features,
        metrics: run.metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Outcome {
    pub grid: GridResult,
    pub rest: LpmParameterSet,
    pub hyper: LpmParameterSet,
    pub cfr: f64,
    pub rest_run: RunSummary,
    pub hyper_run: RunSummary,
}

/// Seven-by-seven search over uniform resistance scalings of the pre-tuned
/// rest and hyperemic sets against clinical CIPs and the CFR target.
///
/// Each level is simulated once per state; the grid combines them.
/// A failed run makes its row or column infinite.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    rest: &LpmParameterSet,
    hyper: &LpmParameterSet,
    clinical_rest: &Cip,
    clinical_hyper: &Cip,
    cfg: &Stage2Config,
    rest_pipe: &Pipeline,
    hyper_pipe: &Pipeline,
) -> Result<Stage2Outcome> {
    cfg.validate()?;
    let (clinical_rest, clinical_hyper) = match cfg.clinical_onset_fraction {
        Some(f) => (clinical_rest.aligned_at_onset(f), clinical_hyper.aligned_at_onset(f)),
        None => (clinical_rest.clone(), clinical_hyper.clone()),
    };
    let rest_runs: Vec<Option<RunSummary>> = cfg
        .levels
        .par_iter()
        .map(|&d| summarize(rest_pipe, &perturb_resistances(rest, d)))
        .collect();
    let hyper_runs: Vec<Option<RunSummary>> = cfg
        .levels
        .par_iter()
        .map(|&d| summarize(hyper_pipe, &perturb_resistances(hyper, d)))
        .collect();
    let outlet_flow = |r: &RunSummary| r.metrics.terminal_flows.get(&cfg.cfr_outlet).copied();
    let cfr = |i: usize, j: usize| -> Option<f64> {
        let qr = outlet_flow(rest_runs[i].as_ref()?)?;
        let qh = outlet_flow(hyper_runs[j].as_ref()?)?;
        (qr > 0.0).then(|| qh / qr)
    };
    let grid = grid_argmin(&cfg.levels, |i, j| {
        let (Some(r), Some(h), Some(c)) = (&rest_runs[i], &hyper_runs[j], cfr(i, j)) else {
            return f64::INFINITY;
        };
        loss_stage2(&r.cip, &h.cip, &clinical_rest, &clinical_hyper, c, cfg.cfr_hat).unwrap_or(f64::INFINITY)
    })?;
    if !grid.best_loss.is_finite() {
        return Err(Error::InvalidInput("every grid cell failed".into()));
    }
    let (i, j) = grid.best;
    Ok(Stage2Outcome {
        rest: perturb_resistances(rest, cfg.levels[i]),
        hyper: perturb_resistances(hyper, cfg.levels[j]),
        cfr: cfr(i, j).unwrap_or(f64::NAN),
        rest_run: rest_runs[i].clone().expect("finite cell"),
        hyper_run: hyper_runs[j].clone().expect("finite cell"),
        grid,
    })
}
