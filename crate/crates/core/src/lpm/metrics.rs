use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::system::HemoSeries;
use crate::error::{Error, Result};
use crate::tree::Side;
use crate::units;

/// Summary indices in clinical units: flows L/min, pressures mmHg,
/// volumes ml.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemodynamicMetrics {
    pub q_mean: f64,
    pub q_max: f64,
    pub p_sys: f64,
    pub p_dia: f64,
    /// Aortic pressure at aortic valve closure; absent when the valve never
    /// closes inside the window.
    pub p_dn: Option<f64>,
    pub p_pulse: f64,
    pub edv: f64,
    pub esv: f64,
    pub sv: f64,
    pub ef: f64,
    pub terminal_flows: BTreeMap<String, f64>,
    pub q_left: f64,
    pub q_right: f64,
}

impl HemodynamicMetrics {
    /// Derived volumes and pulse pressure from the primary extrema.
    pub fn from_extrema(
        q_mean: f64,
        q_max: f64,
        p_sys: f64,
        p_dia: f64,
        p_dn: Option<f64>,
        edv: f64,
        esv: f64,
    ) -> Self {
        let sv = edv - esv;
        Self {
            q_mean,
            q_max,
            p_sys,
            p_dia,
            p_dn,
            p_pulse: p_sys - p_dia,
            edv,
            esv,
            sv,
            ef: if edv > 0.0 { sv / edv } else { 0.0 },
            terminal_flows: BTreeMap::new(),
            q_left: 0.0,
            q_right: 0.0,
        }
    }
}

fn window(series: &HemoSeries, last_cycle_only: bool) -> Result<(usize, usize)> {
    let n = series.len();
    if series.steps_per_cycle == 0 || n < series.steps_per_cycle + 1 {
        return Err(Error::InvalidInput(
            "series must contain at least one complete cycle".into(),
        ));
    }
    let end = n - 1;
    let start = if last_cycle_only {
        end - series.steps_per_cycle
    } else {
        end - ((end / series.steps_per_cycle) * series.steps_per_cycle)
    };
    Ok((start, end))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Extract summary indices from whole cycles of `series`.
///
/// Means use the half-open window `[start, end)` so that each sample of a
/// periodic cycle counts once; extrema use the closed window.
pub fn compute_metrics(series: &HemoSeries, last_cycle_only: bool) -> Result<HemodynamicMetrics> {
    let (start, end) = window(series, last_cycle_only)?;
    let open = start..end;
    let closed = start..end + 1;

    let p_dn = (start + 1..=end)
        .find(|&i| series.q_av[i - 1] > 0.0 && series.q_av[i] == 0.0)
        .map(|i| units::pa_to_mmhg(series.p_ao[i]));

    let mut m = HemodynamicMetrics::from_extrema(
        units::mm3s_to_lmin(mean(&series.q_av[open.clone()])),
        units::mm3s_to_lmin(max(&series.q_av[closed.clone()])),
        units::pa_to_mmhg(max(&series.p_ao[closed.clone()])),
        units::pa_to_mmhg(min(&series.p_ao[closed.clone()])),
        p_dn,
        units::mm3_to_ml(max(&series.v_lv[closed.clone()])),
        units::mm3_to_ml(min(&series.v_lv[closed])),
    );
    for t in &series.terminals {
        let q = units::mm3s_to_lmin(mean(&t.q_cor[open.clone()]));
        m.terminal_flows.insert(t.id.clone(), q);
        match t.side {
            Side::Left => m.q_left += q,
            Side::Right => m.q_right += q,
        }
    }
    Ok(m)
}

/// Ratio of hyperemic to resting mean flow through `terminal`.
pub fn cfr(rest: &HemodynamicMetrics, hyper: &HemodynamicMetrics, terminal: &str) -> Option<f64> {
    let r = rest.terminal_flows.get(terminal)?;
    let h = hyper.terminal_flows.get(terminal)?;
    (*r > 0.0).then(|| h / r)
}

/// Fraction of the last cycle's flow volume through outlet `terminal`
/// delivered in diastole, i.e. cycle time in `(t_r, T]`.
pub fn diastolic_fraction(series: &HemoSeries, terminal: usize, t_r: f64) -> Result<f64> {
    let (start, end) = window(series, true)?;
    let q = &series.terminals[terminal].q_cor;
    let t0 = series.time[start];
    let mut total = 0.0;
    let mut diastolic = 0.0;
    for i in start..end {
        let v = q[i] * series.dt;
        total += v;
        if series.time[i] - t0 > t_r {
            diastolic += v;
        }
    }
    if total <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "outlet {} has no net forward flow",
            series.terminals[terminal].id
        )));
    }
    Ok(diastolic / total)
}

/// Relative difference between forward volumes through the mitral and
/// aortic valves over the last cycle.
pub fn ventricular_volume_balance(series: &HemoSeries) -> Result<f64> {
    let (start, end) = window(series, true)?;
    let inflow: f64 = series.q_mv[start..end].iter().sum();
    let outflow: f64 = series.q_av[start..end].iter().sum();
    Ok((inflow - outflow).abs() / outflow.max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpm::system::TerminalSeries;

    fn synthetic(period: f64, dt: f64, cycles: usize) -> HemoSeries {
        let steps = (period / dt).round() as usize;
        let n = steps * cycles + 1;
        let time: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let p_ao: Vec<f64> = time
            .iter()
            .map(|t| units::mmhg_to_pa(100.0 + 20.0 * (2.0 * std::f64::consts::PI * t).sin()))
            .collect();
        let q_av: Vec<f64> = time
            .iter()
            .map(|t| {
                let tc = t.rem_euclid(period);
                if tc < 0.3 {
                    1000.0 * (std::f64::consts::PI * tc / 0.3).sin().max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        HemoSeries {
            v_lv: time.iter().map(|t| 100_000.0 + 50_000.0 * (t * 6.0).cos()).collect(),
            p_lv: vec![0.0; n],
            q_mv: vec![0.0; n],
            p_wk: vec![0.0; n],
            terminals: vec![TerminalSeries {
                id: "LAD".into(),
                side: Side::Left,
                q_cor: vec![450.0; n],
                p1: vec![0.0; n],
                p2: vec![0.0; n],
            }],
            time,
            p_ao,
            q_av,
            period,
            dt,
            steps_per_cycle: steps,
            periodicity_change: 0.0,
            periodic: true,
        }
    }

    #[test]
    fn sine_pressure_extrema() {
        let s = synthetic(1.0, 1e-3, 2);
        let m = compute_metrics(&s, true).unwrap();
        assert!((m.p_sys - 120.0).abs() < 1e-6);
        assert!((m.p_dia - 80.0).abs() < 1e-6);
        assert!((m.p_pulse - 40.0).abs() < 1e-6);
        assert!(m.p_dn.is_some());
        assert!((m.terminal_flows["LAD"] - units::mm3s_to_lmin(450.0)).abs() < 1e-12);
    }

    #[test]
    fn stroke_volume_arithmetic() {
        let m = HemodynamicMetrics::from_extrema(4.9, 28.0, 130.0, 80.0, None, 160.517, 78.147);
        assert!((m.sv - 82.370).abs() < 1e-9);
        assert!((m.ef - 0.51315).abs() < 5e-6);
    }

    #[test]
    fn cfr_from_rounded_table_flows() {
        let mut r = HemodynamicMetrics::from_extrema(0.0, 0.0, 0.0, 0.0, None, 0.0, 0.0);
        let mut h = r.clone();
        r.terminal_flows.insert("LAD".into(), 0.027);
        h.terminal_flows.insert("LAD".into(), 0.059);
        assert!((cfr(&r, &h, "LAD").unwrap() - 2.185).abs() < 1e-3);
        assert!(cfr(&r, &h, "OM1").is_none());
    }

    #[test]
    fn closed_valve_has_no_dicrotic_notch() {
        let mut s = synthetic(1.0, 1e-3, 2);
        s.q_av.iter_mut().for_each(|q| *q = 0.0);
        assert!(compute_metrics(&s, true).unwrap().p_dn.is_none());
    }

    #[test]
    fn too_short_series() {
        let mut s = synthetic(1.0, 1e-3, 1);
        s.time.truncate(10);
        assert!(compute_metrics(&s, true).is_err());
    }
}
