use std::io::Write;

use serde::{Deserialize, Serialize};

use super::grid::TransportGrid;
use super::protocol::{inlet_concentration, InjectionProtocol};
use crate::error::{Error, Result};
use crate::lpm::HemoSeries;

/// Stability safety factor on the explicit update.
pub const CFL_LIMIT: f64 = 0.9;

/// Flows driving one transport step, mm³/s, indexed by grid segment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BranchFlows {
    /// Axial flow through each segment, positive downstream.
    pub segment: Vec<f64>,
    /// Flow leaving through the segment's own outlet; zero for
    /// non-terminal segments.
    pub outlet: Vec<f64>,
    /// Concentration entering the ostium when the root flow is forward.
    pub inlet_concentration: f64,
}

impl BranchFlows {
    /// The same forward flow through every segment of a single-path grid.
    pub fn uniform(grid: &TransportGrid, q: f64, inlet_concentration: f64) -> Self {
        let n = grid.segments.len();
        let mut outlet = vec![0.0; n];
        for (k, s) in grid.segments.iter().enumerate() {
            if s.children.is_empty() {
                outlet[k] = q;
            }
        }
        Self {
            segment: vec![q; n],
            outlet,
            inlet_concentration,
        }
    }
}

/// Maps coronary outlet flows onto grid segments.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    downstream: Vec<Vec<usize>>,
    own: Vec<Option<usize>>,
}

impl FlowMap {
    /// `outlet_ids` lists outlets in the order flows will be supplied.
    pub fn new(grid: &TransportGrid, outlet_ids: &[&str]) -> Result<Self> {
        let find = |id: &str| {
            outlet_ids.iter().position(|o| *o == id).ok_or_else(|| {
                Error::InvalidInput(format!("no flow supplied for outlet `{id}`"))
            })
        };
        let mut downstream = Vec::with_capacity(grid.segments.len());
        let mut own = Vec::with_capacity(grid.segments.len());
        for s in &grid.segments {
            downstream.push(
                s.downstream_outlets
                    .iter()
                    .map(|id| find(id))
                    .collect::<Result<Vec<_>>>()?,
            );
            own.push(if s.terminal { Some(find(&s.id)?) } else { None });
        }
        Ok(Self { downstream, own })
    }

    pub fn fill(&self, outlet_flows: &[f64], c_in: f64, out: &mut BranchFlows) {
        out.segment.clear();
        out.outlet.clear();
        for (ds, own) in self.downstream.iter().zip(&self.own) {
            out.segment.push(ds.iter().map(|&i| outlet_flows[i]).sum());
            out.outlet.push(own.map_or(0.0, |i| outlet_flows[i]));
        }
        out.inlet_concentration = c_in;
    }

    /// Flow through the ostium segment.
    pub fn root_flow(flows: &BranchFlows) -> f64 {
        flows.segment[0]
    }
}

/// Concentration per cell plus cumulative boundary fluxes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub c: Vec<f64>,
    pub mass_in: f64,
    pub mass_out: f64,
}

impl TransportState {
    pub fn zeros(grid: &TransportGrid) -> Self {
        Self {
            c: vec![0.0; grid.n_cells()],
            mass_in: 0.0,
            mass_out: 0.0,
        }
    }
}

/// Mass crossing the domain boundary during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBalance {
    pub mass_in: f64,
    pub mass_out: f64,
}

fn junction_conductance(grid: &TransportGrid, parent: usize, child: usize) -> f64 {
    let p = &grid.segments[parent];
    let c = &grid.segments[child];
    grid.diffusivity * p.area.min(c.area) / (0.5 * (p.dx + c.dx))
}

/// Largest step keeping every cell update a convex combination, scaled by
/// [`CFL_LIMIT`]. Infinite when nothing moves.
pub fn max_stable_dt(grid: &TransportGrid, flows: &BranchFlows) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, s) in grid.segments.iter().enumerate() {
        let q = flows.segment[k].abs();
        let g = grid.diffusivity * s.area / s.dx;
        let upstream = s.parent.map_or(0.0, |p| junction_conductance(grid, p, k));
        let downstream: f64 = s.children.iter().map(|&c| junction_conductance(grid, k, c)).sum();
        let rate = match s.n_cells {
            1 => q + upstream + downstream,
            2 => q + g + upstream.max(downstream),
            _ => q + (2.0 * g).max(g + upstream).max(g + downstream),
        };
        worst = worst.max(rate / s.cell_volume());
    }
    if worst > 0.0 {
        CFL_LIMIT / worst
    } else {
        f64::INFINITY
    }
}

/// One explicit step: first-order upwind advection, central diffusion.
///
/// Junction nodes mix every inflow (forward parent flow, backflow out of
/// children, backflow through the outlet carrying clean blood) and pass the
/// mixture to every outflow. Terminal faces carry no diffusive flux.
pub fn advance(
    state: &mut TransportState,
    grid: &TransportGrid,
    flows: &BranchFlows,
    dt: f64,
) -> Result<StepBalance> {
    let required = max_stable_dt(grid, flows);
    if !(dt > 0.0) || dt > required * (1.0 + 1e-9) {
        return Err(Error::Cfl { dt, required });
    }
    let c = &state.c;
    let segs = &grid.segments;

    let mut node = vec![0.0; segs.len()];
    for (k, s) in segs.iter().enumerate() {
        let mut m = 0.0;
        let mut q = 0.0;
        let qs = flows.segment[k];
        if qs > 0.0 {
            m += qs * c[s.last_cell()];
            q += qs;
        }
        if flows.outlet[k] < 0.0 {
            q -= flows.outlet[k];
        }
        for &ch in &s.children {
            let qc = flows.segment[ch];
            if qc < 0.0 {
                m -= qc * c[segs[ch].first_cell];
                q -= qc;
            }
        }
        node[k] = if q > 0.0 { m / q } else { c[s.last_cell()] };
    }

    let d = grid.diffusivity;
    let mut rate = vec![0.0; c.len()];
    let mut in_rate = 0.0;
    let mut out_rate = 0.0;
    for (k, s) in segs.iter().enumerate() {
        let q = flows.segment[k];
        let first = s.first_cell;
        let last = s.last_cell();

        let upstream = s.parent.map_or(flows.inlet_concentration, |p| node[p]);
        let f0 = if q >= 0.0 { q * upstream } else { q * c[first] };
        rate[first] += f0;
        if s.parent.is_none() {
            if f0 >= 0.0 {
                in_rate += f0;
            } else {
                out_rate -= f0;
            }
        }

        let g = d * s.area / s.dx;
        for j in first + 1..=last {
            let adv = if q >= 0.0 { q * c[j - 1] } else { q * c[j] };
            let f = adv - g * (c[j] - c[j - 1]);
            rate[j - 1] -= f;
            rate[j] += f;
        }

        rate[last] -= if q >= 0.0 { q * c[last] } else { q * node[k] };
        if flows.outlet[k] > 0.0 {
            out_rate += flows.outlet[k] * node[k];
        }

        for &ch in &s.children {
            let f = -junction_conductance(grid, k, ch) * (c[segs[ch].first_cell] - c[last]);
            rate[last] -= f;
            rate[segs[ch].first_cell] += f;
        }
    }

    for s in segs {
        let v = s.cell_volume();
        for j in s.cells() {
            state.c[j] = (state.c[j] + dt * rate[j] / v).max(0.0);
        }
    }
    let bal = StepBalance {
        mass_in: in_rate * dt,
        mass_out: out_rate * dt,
    };
    state.mass_in += bal.mass_in;
    state.mass_out += bal.mass_out;
    Ok(bal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportOptions {
    /// Upper bound on the transport step, s; sub-stepped further when the
    /// stability bound requires it.
    pub dt: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self { dt: 5.0e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransportDiagnostics {
    pub steps: usize,
    pub smallest_step: f64,
    /// Worst per-step mismatch between storage change and boundary fluxes,
    /// relative to the mass involved.
    pub max_balance_error: f64,
    pub mass_in: f64,
    pub mass_out: f64,
}

/// Concentration snapshots at requested frame times, mg/ml per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationField {
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
    pub c0: f64,
    pub diagnostics: TransportDiagnostics,
}

impl ConcentrationField {
    pub fn total_mass(&self, grid: &TransportGrid) -> Vec<f64> {
        self.frames.iter().map(|f| grid.total_mass(f)).collect()
    }

    pub fn cell_series(&self, cell: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f[cell]).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| f.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Long-format CSV: frame, time, segment, cell, concentration.
    pub fn write_csv<W: Write>(&self, grid: &TransportGrid, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["frame", "time_s", "segment", "cell", "c_mg_per_ml"])?;
        for (f, (t, c)) in self.times.iter().zip(&self.frames).enumerate() {
            for s in &grid.segments {
                for (j, cell) in s.cells().enumerate() {
                    w.write_record([
                        f.to_string(),
                        format!("{t:.6}"),
                        s.id.clone(),
                        j.to_string(),
                        format!("{:.6e}", c[cell]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct Driver<'a> {
    hemo: &'a HemoSeries,
    protocol: &'a InjectionProtocol,
    map: FlowMap,
    outlet_buf: Vec<f64>,
    flows: BranchFlows,
}

impl Driver<'_> {
    fn load(&mut self, t: f64) {
        self.hemo.coronary_flows_at(t, &mut self.outlet_buf);
        self.map.fill(&self.outlet_buf, 0.0, &mut self.flows);
        let q_root = FlowMap::root_flow(&self.flows);
        self.flows.inlet_concentration =
            inlet_concentration(self.protocol.catheter_flow(t), q_root, self.protocol.c0);
    }
}

/// Advance contrast through the tree using flows interpolated from `hemo`,
/// storing the field at each of `frame_times` (strictly increasing).
///
/// Integration starts at injection start; frames before it are empty.
pub fn simulate_transport(
    hemo: &HemoSeries,
    grid: &TransportGrid,
    protocol: &InjectionProtocol,
    frame_times: &[f64],
    opts: &TransportOptions,
) -> Result<ConcentrationField> {
    protocol.validate()?;
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(Error::InvalidInput(format!("transport dt must be positive, got {}", opts.dt)));
    }
    if frame_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("frame times must be strictly increasing".into()));
    }
    if let Some(&last) = frame_times.last() {
        if hemo.is_empty() || last > hemo.duration() + 1e-9 || frame_times[0] < hemo.time[0] - 1e-9 {
            return Err(Error::InvalidInput(format!(
                "frame times up to {last} s exceed the hemodynamic record ({} s)",
                hemo.duration()
            )));
        }
    }
    let ids: Vec<&str> = hemo.terminals.iter().map(|t| t.id.as_str()).collect();
    let mut drv = Driver {
        hemo,
        protocol,
        map: FlowMap::new(grid, &ids)?,
        outlet_buf: Vec::with_capacity(ids.len()),
        flows: BranchFlows::default(),
    };

    let mut state = TransportState::zeros(grid);
    let mut diag = TransportDiagnostics {
        smallest_step: f64::INFINITY,
        ..Default::default()
    };
    let mut frames = Vec::with_capacity(frame_times.len());
    let mut t = protocol.start;
    let skip = protocol.is_empty();

    for &tf in frame_times {
        if !skip && tf > t {
            let mut stops = vec![tf];
            if protocol.end() > t && protocol.end() < tf {
                stops.insert(0, protocol.end());
            }
            for stop in stops {
                while stop - t > 1e-12 {
                    let mut h = opts.dt.min(stop - t);
                    for _ in 0..8 {
                        drv.load(t + 0.5 * h);
                        let limit = max_stable_dt(grid, &drv.flows);
                        if h <= limit {
                            break;
                        }
                        h = limit;
                    }
                    let before = grid.total_mass(&state.c);
                    let bal = advance(&mut state, grid, &drv.flows, h)?;
                    let after = grid.total_mass(&state.c);
                    let scale = before.max(after).max(bal.mass_in).max(bal.mass_out);
                    if scale > 0.0 {
                        let err = (after - before - bal.mass_in + bal.mass_out).abs() / scale;
                        diag.max_balance_error = diag.max_balance_error.max(err);
                    }
                    if state.c.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NumericalBlowUp {
                            step: diag.steps,
                            time: t,
                            detail: "non-finite concentration".into(),
                        });
                    }
                    diag.steps += 1;
                    diag.smallest_step = diag.smallest_step.min(h);
                    t = if stop - t - h <= 1e-12 { stop } else { t + h };
                }
            }
        }
        frames.push(state.c.clone());
    }
    diag.mass_in = state.mass_in;
    diag.mass_out = state.mass_out;
    if diag.steps == 0 {
        diag.smallest_step = 0.0;
    }
    Ok(ConcentrationField {
        times: frame_times.to_vec(),
        frames,
        c0: protocol.c0,
        diagnostics: diag,
    })
}
