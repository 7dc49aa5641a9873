//! End-to-end run for one physiological state: hemodynamics, contrast
//! transport, synthetic angiograms and the resulting CIP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpm::{compute_metrics, simulate, HemoSeries, HemodynamicMetrics, LpmParameterSet, SimulationOptions};
use crate::render::{
    cip_from_counts, extract_features, threshold_count, AngiogramFrame, Cip, CipFeatures, Rasterizer,
    RenderConfig, ViewAngles,
};
use crate::transport::{
    build_grid, simulate_transport, ConcentrationField, InjectionProtocol, TransportDiagnostics,
    TransportGrid, TransportOptions, DEFAULT_DX,
};
use crate::tree::{FluidProperties, VesselTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub simulation: SimulationOptions,
    /// Cycle (1-based) at whose start the injection begins.
    pub injection_cycle: usize,
    /// mm³/s
    pub injection_rate: f64,
    /// s
    pub injection_duration: f64,
    /// mg/ml
    pub c0: f64,
    /// mm
    pub dx: f64,
    pub transport: TransportOptions,
    pub view: ViewAngles,
    pub render: RenderConfig,
}

impl PipelineConfig {
    pub fn rest() -> Self {
        let p = InjectionProtocol::rest(0.0);
        Self {
            simulation: SimulationOptions {
                n_cycles: 8,
                ..Default::default()
            },
            injection_cycle: 3,
            injection_rate: p.rate,
            injection_duration: p.duration,
            c0: p.c0,
            dx: DEFAULT_DX,
            transport: TransportOptions::default(),
            view: ViewAngles::REST,
            render: RenderConfig::rest(),
        }
    }

    pub fn hyperemia() -> Self {
        let p = InjectionProtocol::hyperemia(0.0);
        Self {
            simulation: SimulationOptions {
                n_cycles: 9,
                ..Default::default()
            },
            injection_cycle: 5,
            injection_rate: p.rate,
            injection_duration: p.duration,
            view: ViewAngles::HYPEREMIA,
            render: RenderConfig::hyperemia(),
            ..Self::rest()
        }
    }

    /// Same setup over `n_cycles` cardiac cycles.
    pub fn with_cycles(mut self, n_cycles: usize) -> Self {
        self.simulation.n_cycles = n_cycles;
        self
    }

    pub fn protocol(&self, period: f64) -> InjectionProtocol {
        InjectionProtocol {
            c0: self.c0,
            start: (self.injection_cycle.max(1) - 1) as f64 * period,
            duration: self.injection_duration,
            rate: self.injection_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.injection_cycle == 0 || self.injection_cycle > self.simulation.n_cycles {
            return Err(Error::InvalidInput(format!(
                "injection cycle {} outside 1..={}",
                self.injection_cycle, self.simulation.n_cycles
            )));
        }
        self.view.validate()?;
        self.render.validate()
    }
}

/// Everything a single state run produces. Frames are kept only on request.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub hemo: HemoSeries,
    pub metrics: HemodynamicMetrics,
    pub protocol: InjectionProtocol,
    pub field: ConcentrationField,
    pub frames: Option<Vec<AngiogramFrame>>,
    pub counts: Vec<usize>,
    /// Times relative to injection start.
    pub cip: Cip,
    pub features: Option<CipFeatures>,
    pub transport: TransportDiagnostics,
}

/// Geometry-dependent pieces reused across runs with the same tree.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub grid: TransportGrid,
    pub rasterizer: Rasterizer,
}

impl Pipeline {
    pub fn new(tree: &VesselTree, fluid: &FluidProperties, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        fluid.validate()?;
        let grid = build_grid(tree, config.dx)?.with_diffusivity(fluid.diffusivity);
        let rasterizer = Rasterizer::new(&grid, config.view, config.render)?;
        Ok(Self {
            config,
            grid,
            rasterizer,
        })
    }

    pub fn run(&self, params: &LpmParameterSet, keep_frames: bool) -> Result<PipelineRun> {
        let hemo = simulate(params, &self.config.simulation)?;
        let metrics = compute_metrics(&hemo, true)?;
        self.run_with(hemo, metrics, keep_frames)
    }

    /// Transport and imaging on an existing hemodynamic record.
    pub fn run_with(&self, hemo: HemoSeries, metrics: HemodynamicMetrics, keep_frames: bool) -> Result<PipelineRun> {
        let protocol = self.config.protocol(hemo.period);
        let times = self.config.render.frame_times(hemo.duration() + 1e-9);
        let field = simulate_transport(&hemo, &self.grid, &protocol, &times, &self.config.transport)?;
        let frames = self.rasterizer.render_field(&field, protocol.start);
        let counts: Vec<usize> = frames
            .iter()
            .map(|f| threshold_count(f, self.config.render.i_thr))
            .collect();
        let cip = cip_from_counts(frames.iter().map(|f| f.time).collect(), &counts)?;
        let features = extract_features(&cip);
        Ok(PipelineRun {
            metrics,
            protocol,
            transport: field.diagnostics,
            frames: keep_frames.then_some(frames),
            field,
            counts,
            cip,
            features,
            hemo,
        })
    }
}
