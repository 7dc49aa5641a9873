//! Closed-loop 0D circuit: elastance ventricle with diode valves, three
//! element Windkessel and coronary outlets with intramyocardial coupling.
//!
//! State layout: `[V_LV, Q_AV, Q_MV, P_wk, P1_0, P2_0, P1_1, P2_1, ...]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::elastance::elastance_at;
use super::params::{CoronaryParams, LpmParameterSet};
use crate::error::{Error, Result};
use crate::tree::Side;
use crate::units;

pub const IDX_V_LV: usize = 0;
pub const IDX_Q_AV: usize = 1;
pub const IDX_Q_MV: usize = 2;
pub const IDX_P_WK: usize = 3;
const N_FIXED: usize = 4;

pub fn state_dimension(n_terminals: usize) -> usize {
    N_FIXED + 2 * n_terminals
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ValveState {
    pub aortic_open: bool,
    pub mitral_open: bool,
}

/// Algebraic quantities that accompany a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Auxiliary {
    pub p_lv: f64,
    pub p_ao: f64,
    pub q_sys: f64,
    pub q_cor: Vec<f64>,
}

/// Flow into a coronary outlet and the rates of its two capacitor nodes.
///
/// `r_upstream` is the vessel resistance between the aortic root and the
/// outlet; `dp_im` is the rate of change of intramyocardial pressure.
pub fn coronary_derivatives(
    c: &CoronaryParams,
    r_upstream: f64,
    p_ao: f64,
    p1: f64,
    p2: f64,
    dp_im: f64,
) -> (f64, f64, f64) {
    let q_in = (p_ao - p1) / (r_upstream + c.r_a);
    let q_mid = (p1 - p2) / c.r_ap;
    let q_out = p2 / c.r_ad;
    let dp1 = (q_in - q_mid) / c.c_a;
    let dp2 = (q_mid - q_out) / c.c_im + dp_im;
    (q_in, dp1, dp2)
}

/// Windkessel pressure rate and aortic pressure for a given systemic inflow.
pub fn windkessel_derivative(c_s: f64, r_sp: f64, r_sd: f64, q_sys: f64, p_wk: f64) -> (f64, f64) {
    let p_ao = p_wk + q_sys * r_sp;
    ((q_sys - p_wk / r_sd) / c_s, p_ao)
}

/// Precomputed per-outlet constants so the right-hand side stays allocation
/// free apart from the output buffers.
struct Circuit<'a> {
    params: &'a LpmParameterSet,
    coronary: Vec<CoronaryParams>,
    upstream: Vec<f64>,
    /// 1/(R_3D + R_a) per outlet.
    conductance: Vec<f64>,
    node_conductance: f64,
}

impl<'a> Circuit<'a> {
    fn new(params: &'a LpmParameterSet) -> Self {
        let n = params.terminals.len();
        let coronary: Vec<CoronaryParams> = (0..n).map(|k| *params.coronary_for(k)).collect();
        let upstream: Vec<f64> = (0..n).map(|k| params.path_resistance(k)).collect();
        let conductance: Vec<f64> = coronary
            .iter()
            .zip(&upstream)
            .map(|(c, r)| 1.0 / (r + c.r_a))
            .collect();
        let node_conductance = 1.0 / params.aorta.r_sp + conductance.iter().sum::<f64>();
        Self {
            params,
            coronary,
            upstream,
            conductance,
            node_conductance,
        }
    }

    fn aux(&self, t: f64, y: &[f64], valves: ValveState, aux: &mut Auxiliary) {
        let h = &self.params.heart;
        let a = &self.params.aorta;
        let (e, _) = elastance_at(t, &h.elastance);
        aux.p_lv = e * (y[IDX_V_LV] - h.v0);
        let q_av = if valves.aortic_open { y[IDX_Q_AV] } else { 0.0 };
        // Flux balance at the aortic root: Q_AV = Q_sys + Σ Q_cor.
        let mut rhs = q_av + y[IDX_P_WK] / a.r_sp;
        for (k, g) in self.conductance.iter().enumerate() {
            rhs += y[N_FIXED + 2 * k] * g;
        }
        aux.p_ao = rhs / self.node_conductance;
        aux.q_sys = (aux.p_ao - y[IDX_P_WK]) / a.r_sp;
        aux.q_cor.clear();
        for (k, g) in self.conductance.iter().enumerate() {
            aux.q_cor.push((aux.p_ao - y[N_FIXED + 2 * k]) * g);
        }
    }

    fn rhs(&self, t: f64, y: &[f64], valves: ValveState, aux: &mut Auxiliary, dy: &mut [f64]) {
        let h = &self.params.heart;
        let a = &self.params.aorta;
        self.aux(t, y, valves, aux);
        let (e, de) = elastance_at(t, &h.elastance);
        let q_av = if valves.aortic_open { y[IDX_Q_AV] } else { 0.0 };
        let q_mv = if valves.mitral_open { y[IDX_Q_MV] } else { 0.0 };
        let dv = q_mv - q_av;
        dy[IDX_V_LV] = dv;
        dy[IDX_Q_AV] = if valves.aortic_open {
            (aux.p_lv - aux.p_ao - h.r_av * q_av) / h.l_av
        } else {
            0.0
        };
        dy[IDX_Q_MV] = if valves.mitral_open {
            (h.p_la - aux.p_lv - h.r_mv * q_mv) / h.l_mv
        } else {
            0.0
        };
        dy[IDX_P_WK] = (aux.q_sys - y[IDX_P_WK] / a.r_sd) / a.c_s;
        let dp_lv = de * (y[IDX_V_LV] - h.v0) + e * dv;
        for (k, c) in self.coronary.iter().enumerate() {
            let i1 = N_FIXED + 2 * k;
            let (_, dp1, dp2) =
                coronary_derivatives(c, self.upstream[k], aux.p_ao, y[i1], y[i1 + 1], c.alpha * dp_lv);
            dy[i1] = dp1;
            dy[i1 + 1] = dp2;
        }
    }
}

/// Time derivative of the full state with the valve configuration held fixed.
pub fn system_rhs(t: f64, state: &[f64], valves: ValveState, params: &LpmParameterSet) -> Result<Vec<f64>> {
    let dim = state_dimension(params.terminals.len());
    if state.len() != dim {
        return Err(Error::InvalidInput(format!(
            "state has {} entries, expected {dim}",
            state.len()
        )));
    }
    let circuit = Circuit::new(params);
    let mut aux = Auxiliary {
        p_lv: 0.0,
        p_ao: 0.0,
        q_sys: 0.0,
        q_cor: Vec::new(),
    };
    let mut dy = vec![0.0; dim];
    circuit.rhs(t, state, valves, &mut aux, &mut dy);
    Ok(dy)
}

/// Pressures and flows implied by a state.
pub fn auxiliary(t: f64, state: &[f64], valves: ValveState, params: &LpmParameterSet) -> Auxiliary {
    let circuit = Circuit::new(params);
    let mut aux = Auxiliary {
        p_lv: 0.0,
        p_ao: 0.0,
        q_sys: 0.0,
        q_cor: Vec::new(),
    };
    circuit.aux(t, state, valves, &mut aux);
    aux
}

/// Initial state: relaxed ventricle filled to atrial pressure, valves closed.
pub fn initial_state(params: &LpmParameterSet) -> Vec<f64> {
    let h = &params.heart;
    let mut y = vec![0.0; state_dimension(params.terminals.len())];
    y[IDX_V_LV] = h.v0 + h.p_la / h.elastance.e_min;
    y[IDX_P_WK] = 10_000.0;
    for k in 0..params.terminals.len() {
        y[N_FIXED + 2 * k] = 9_000.0;
        y[N_FIXED + 2 * k + 1] = 9_000.0;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Requested step, s. Adjusted down so a cycle holds an integer number of steps.
    pub dt: f64,
    pub n_cycles: usize,
    /// Allowed relative change of cycle-mean aortic pressure between the
    /// last two cycles.
    pub periodicity_tol: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            dt: 1.0e-4,
            n_cycles: 8,
            periodicity_tol: 1.0e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSeries {
    pub id: String,
    pub side: Side,
    pub q_cor: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

/// Sampled waveforms of one run, internal units (Pa, mm³, mm³/s, s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemoSeries {
    pub time: Vec<f64>,
    pub p_lv: Vec<f64>,
    pub p_ao: Vec<f64>,
    pub v_lv: Vec<f64>,
    pub q_av: Vec<f64>,
    pub q_mv: Vec<f64>,
    pub p_wk: Vec<f64>,
    pub terminals: Vec<TerminalSeries>,
    pub period: f64,
    pub dt: f64,
    pub steps_per_cycle: usize,
    /// Relative change of cycle-mean P_ao between the last two cycles.
    pub periodicity_change: f64,
    pub periodic: bool,
}

impl HemoSeries {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn duration(&self) -> f64 {
        *self.time.last().unwrap_or(&0.0)
    }

    pub fn terminal(&self, id: &str) -> Option<&TerminalSeries> {
        self.terminals.iter().find(|t| t.id == id)
    }

    /// Linear interpolation of outlet flows at time `t` (clamped to the
    /// recorded range), written into `out` in terminal order.
    pub fn coronary_flows_at(&self, t: f64, out: &mut Vec<f64>) {
        let (i, w) = self.locate(t);
        out.clear();
        for ts in &self.terminals {
            let a = ts.q_cor[i];
            let b = ts.q_cor[(i + 1).min(self.len() - 1)];
            out.push(a + w * (b - a));
        }
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.len();
        let x = ((t - self.time[0]) / self.dt).clamp(0.0, (n - 1) as f64);
        let i = (x.floor() as usize).min(n - 1);
        (i, x - i as f64)
    }

    /// Write the series as CSV in clinical units, one row every `stride` samples.
    pub fn write_csv<W: Write>(&self, writer: W, stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "time_s".to_string(),
            "P_LV_mmHg".into(),
            "P_ao_mmHg".into(),
            "V_LV_ml".into(),
            "Q_AV_Lmin".into(),
            "Q_MV_Lmin".into(),
            "P_wk_mmHg".into(),
        ];
        for t in &self.terminals {
            header.push(format!("Q_{}_Lmin", t.id));
            header.push(format!("P1_{}_mmHg", t.id));
            header.push(format!("P2_{}_mmHg", t.id));
        }
        w.write_record(&header)?;
        for i in (0..self.len()).step_by(stride.max(1)) {
            let mut row = vec![
                format!("{:.6}", self.time[i]),
                format!("{:.6}", units::pa_to_mmhg(self.p_lv[i])),
                format!("{:.6}", units::pa_to_mmhg(self.p_ao[i])),
                format!("{:.6}", units::mm3_to_ml(self.v_lv[i])),
                format!("{:.6}", units::mm3s_to_lmin(self.q_av[i])),
                format!("{:.6}", units::mm3s_to_lmin(self.q_mv[i])),
                format!("{:.6}", units::pa_to_mmhg(self.p_wk[i])),
            ];
            for t in &self.terminals {
                row.push(format!("{:.6}", units::mm3s_to_lmin(t.q_cor[i])));
                row.push(format!("{:.6}", units::pa_to_mmhg(t.p1[i])));
                row.push(format!("{:.6}", units::pa_to_mmhg(t.p2[i])));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrate the closed loop with fixed-step RK4 and ideal-diode valves.
pub fn simulate(params: &LpmParameterSet, opts: &SimulationOptions) -> Result<HemoSeries> {
    params.validate()?;
    if !(opts.dt > 0.0 && opts.dt <= 1.0e-3 + 1e-15) {
        return Err(Error::InvalidInput(format!(
            "time step must satisfy 0 < dt <= 1e-3 s, got {}",
            opts.dt
        )));
    }
    if opts.n_cycles < 2 {
        return Err(Error::InvalidInput("need at least two cycles".into()));
    }
    let period = params.period();
    let steps_per_cycle = (period / opts.dt).ceil() as usize;
    let dt = period / steps_per_cycle as f64;
    let n_steps = steps_per_cycle * opts.n_cycles;
    let n_term = params.terminals.len();
    let dim = state_dimension(n_term);
    let circuit = Circuit::new(params);

    let mut series = HemoSeries {
        time: Vec::with_capacity(n_steps + 1),
        p_lv: Vec::with_capacity(n_steps + 1),
        p_ao: Vec::with_capacity(n_steps + 1),
        v_lv: Vec::with_capacity(n_steps + 1),
        q_av: Vec::with_capacity(n_steps + 1),
        q_mv: Vec::with_capacity(n_steps + 1),
        p_wk: Vec::with_capacity(n_steps + 1),
        terminals: params
            .terminals
            .iter()
            .map(|t| TerminalSeries {
                id: t.id.clone(),
                side: t.side,
                q_cor: Vec::with_capacity(n_steps + 1),
                p1: Vec::with_capacity(n_steps + 1),
                p2: Vec::with_capacity(n_steps + 1),
            })
            .collect(),
        period,
        dt,
        steps_per_cycle,
        periodicity_change: f64::NAN,
        periodic: false,
    };

    let mut y = initial_state(params);
    let mut valves = ValveState::default();
    let mut aux = Auxiliary {
        p_lv: 0.0,
        p_ao: 0.0,
        q_sys: 0.0,
        q_cor: Vec::with_capacity(n_term),
    };
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let record = |series: &mut HemoSeries, t: f64, y: &[f64], aux: &Auxiliary, valves: ValveState| {
        series.time.push(t);
        series.p_lv.push(aux.p_lv);
        series.p_ao.push(aux.p_ao);
        series.v_lv.push(y[IDX_V_LV]);
        series.q_av.push(if valves.aortic_open { y[IDX_Q_AV] } else { 0.0 });
        series.q_mv.push(if valves.mitral_open { y[IDX_Q_MV] } else { 0.0 });
        series.p_wk.push(y[IDX_P_WK]);
        for (k, ts) in series.terminals.iter_mut().enumerate() {
            ts.q_cor.push(aux.q_cor[k]);
            ts.p1.push(y[N_FIXED + 2 * k]);
            ts.p2.push(y[N_FIXED + 2 * k + 1]);
        }
    };

    circuit.aux(0.0, &y, valves, &mut aux);
    record(&mut series, 0.0, &y, &aux, valves);

    for step in 0..n_steps {
        let t = step as f64 * dt;

        // Open a closed valve once its pressure gradient turns positive.
        circuit.aux(t, &y, valves, &mut aux);
        if !valves.aortic_open && aux.p_lv > aux.p_ao {
            valves.aortic_open = true;
            y[IDX_Q_AV] = 0.0;
        }
        if !valves.mitral_open && params.heart.p_la > aux.p_lv {
            valves.mitral_open = true;
            y[IDX_Q_MV] = 0.0;
        }

        circuit.rhs(t, &y, valves, &mut aux, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        circuit.rhs(t + 0.5 * dt, &tmp, valves, &mut aux, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        circuit.rhs(t + 0.5 * dt, &tmp, valves, &mut aux, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + dt * k3[i];
        }
        circuit.rhs(t + dt, &tmp, valves, &mut aux, &mut k4);
        for i in 0..dim {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        // Close a valve when its flow crosses zero from above.
        if valves.aortic_open && y[IDX_Q_AV] < 0.0 {
            valves.aortic_open = false;
            y[IDX_Q_AV] = 0.0;
        }
        if valves.mitral_open && y[IDX_Q_MV] < 0.0 {
            valves.mitral_open = false;
            y[IDX_Q_MV] = 0.0;
        }

        let t_next = (step + 1) as f64 * dt;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowUp {
                step: step + 1,
                time: t_next,
                detail: format!("state component {i} is {}", y[i]),
            });
        }
        if y[IDX_V_LV] <= 0.0 {
            return Err(Error::NumericalBlowUp {
                step: step + 1,
                time: t_next,
                detail: format!("ventricular volume {} mm³ is not positive", y[IDX_V_LV]),
            });
        }
        circuit.aux(t_next, &y, valves, &mut aux);
        record(&mut series, t_next, &y, &aux, valves);
    }

    let cycle_mean = |c: usize| -> f64 {
        let s = c * steps_per_cycle;
        series.p_ao[s..s + steps_per_cycle].iter().sum::<f64>() / steps_per_cycle as f64
    };
    let last = cycle_mean(opts.n_cycles - 1);
    let prev = cycle_mean(opts.n_cycles - 2);
    series.periodicity_change = ((last - prev) / prev).abs();
    series.periodic = series.periodicity_change < opts.periodicity_tol;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn windkessel_discharge_when_isolated() {
        let p = presets::rest_params();
        let mut y = initial_state(&p);
        let p0 = 12_000.0;
        y[IDX_P_WK] = p0;
        for k in 0..p.terminals.len() {
            y[N_FIXED + 2 * k] = p0;
        }
        let dy = system_rhs(0.8, &y, ValveState::default(), &p).unwrap();
        let expect = -p0 / (p.aorta.r_sd * p.aorta.c_s);
        assert!((dy[IDX_P_WK] - expect).abs() < 1e-9 * expect.abs());
        let aux = auxiliary(0.8, &y, ValveState::default(), &p);
        assert!(aux.q_cor.iter().all(|q| q.abs() < 1e-9));
    }

    #[test]
    fn coronary_steady_state_matches_ohmic_solve() {
        let c = presets::rest_params().coronary["LAD"];
        let p_ao = 13_332.0;
        let (mut p1, mut p2) = (0.0, 0.0);
        let dt = 1e-4;
        let mut q = 0.0;
        for _ in 0..200_000 {
            let (qi, d1, d2) = coronary_derivatives(&c, 0.0, p_ao, p1, p2, 0.0);
            q = qi;
            p1 += dt * d1;
            p2 += dt * d2;
        }
        let expect = p_ao / (7.130 + 2.139 + 19.923);
        assert!((expect - 456.7).abs() < 0.05);
        assert!((q - expect).abs() < 1e-3 * expect, "{q} vs {expect}");
    }

    #[test]
    fn windkessel_steady_pressure() {
        let (c_s, r_sp, r_sd) = (18.381, 0.009, 0.158);
        let q = 81_667.0;
        let mut p_wk = 0.0;
        let dt = 1e-3;
        for _ in 0..100_000 {
            let (d, _) = windkessel_derivative(c_s, r_sp, r_sd, q, p_wk);
            p_wk += dt * d;
        }
        let (_, p_ao) = windkessel_derivative(c_s, r_sp, r_sd, q, p_wk);
        assert!((p_ao - 13_638.4).abs() < 1.0, "{p_ao}");
        assert!((units::pa_to_mmhg(p_ao) - 102.3).abs() < 0.05);
    }

    #[test]
    fn rejects_coarse_step_and_short_runs() {
        let p = presets::rest_params();
        let coarse = SimulationOptions {
            dt: 0.01,
            ..Default::default()
        };
        assert!(matches!(simulate(&p, &coarse), Err(Error::InvalidInput(_))));
        let short = SimulationOptions {
            n_cycles: 1,
            ..Default::default()
        };
        assert!(simulate(&p, &short).is_err());
    }

    #[test]
    fn wrong_state_dimension() {
        let p = presets::rest_params();
        assert!(system_rhs(0.0, &[0.0; 3], ValveState::default(), &p).is_err());
    }

    #[test]
    fn no_contraction_means_no_ejection_against_raised_afterload() {
        let mut p = presets::rest_params();
        p.heart.elastance.e_max = p.heart.elastance.e_min;
        let s = simulate(
            &p,
            &SimulationOptions {
                dt: 1e-4,
                n_cycles: 3,
                periodicity_tol: 1e-3,
            },
        )
        .unwrap();
        // The Windkessel starts well above atrial pressure and only drains
        // slowly, so the passive ventricle never opens the aortic valve.
        assert!(s.p_ao.iter().all(|&p_ao| p_ao > p.heart.p_la));
        assert!(s.q_av.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn valves_are_ideal_diodes_and_node_balances() {
        let p = presets::rest_params();
        let s = simulate(&p, &SimulationOptions::default()).unwrap();
        assert!(s.q_av.iter().all(|&q| q >= 0.0));
        assert!(s.q_mv.iter().all(|&q| q >= 0.0));
        assert!(s.v_lv.iter().all(|&v| v > 0.0));
        for i in 0..s.len() {
            let q_sys = (s.p_ao[i] - s.p_wk[i]) / p.aorta.r_sp;
            let q_cor: f64 = s.terminals.iter().map(|t| t.q_cor[i]).sum();
            let scale = s.q_av[i].abs().max(q_sys.abs()).max(1.0);
            assert!((s.q_av[i] - q_sys - q_cor).abs() <= 1e-9 * scale);
        }
    }
}
