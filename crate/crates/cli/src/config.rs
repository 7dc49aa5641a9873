use std::fs;
use std::path::{Path, PathBuf};

use angiosim::calibration::{DEConfig, Stage1File, Stage2Config};
use angiosim::lpm::{LpmParameterSet, ParameterFile};
use angiosim::pipeline::PipelineConfig;
use angiosim::presets;
use angiosim::render::ViewAngles;
use angiosim::tree::{load_tree, FluidProperties, VesselTree};
use angiosim::units;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    #[default]
    Rest,
    Hyperemia,
}

impl State {
    pub fn pipeline(self) -> PipelineConfig {
        match self {
            State::Rest => PipelineConfig::rest(),
            State::Hyperemia => PipelineConfig::hyperemia(),
        }
    }

    fn preset(self) -> &'static str {
        match self {
            State::Rest => presets::REST,
            State::Hyperemia => presets::HYPEREMIA,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: Option<f64>,
    pub n_cycles: Option<usize>,
    pub periodicity_tol: Option<f64>,
}

/// Injection in user units: ml/s, s, mg/ml.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSection {
    pub cycle: Option<usize>,
    pub rate_ml_s: Option<f64>,
    pub duration: Option<f64>,
    pub c0: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSection {
    pub dx: Option<f64>,
    pub dt: Option<f64>,
    pub diffusivity: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSection {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub pixel_size: Option<f64>,
    #[serde(rename = "I_thr")]
    pub i_thr: Option<u8>,
    pub fps: Option<f64>,
    pub rao_lao: Option<f64>,
    pub cra_cau: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DESection {
    pub population: Option<usize>,
    pub max_generations: Option<usize>,
    #[serde(rename = "F")]
    pub f: Option<f64>,
    #[serde(rename = "CR")]
    pub cr: Option<f64>,
    pub std_tol_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Section {
    /// Targets and bounds for the state in `params`.
    pub problem: Option<PathBuf>,
    /// Optional follow-up hyperemic problem; its bounds come from the
    /// resting optimum when omitted.
    pub hyperemia_problem: Option<PathBuf>,
    pub hyperemia_params: Option<PathBuf>,
    #[serde(default)]
    pub de: DESection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Section {
    pub hyperemia_params: Option<PathBuf>,
    pub clinical_rest: Option<PathBuf>,
    pub clinical_hyper: Option<PathBuf>,
    #[serde(rename = "CFR_hat")]
    pub cfr_hat: Option<f64>,
    pub levels: Option<Vec<f64>>,
    pub cfr_outlet: Option<String>,
    pub clinical_onset_fraction: Option<f64>,
    /// Run flow pre-tuning before the grid.
    #[serde(default)]
    pub pretune: bool,
    /// Resting cardiac output for pre-tuning targets, L/min; simulated when omitted.
    pub cardiac_output: Option<f64>,
    pub coronary_fraction: Option<f64>,
    pub left_share: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    pub resistance_factors: Option<Vec<f64>>,
    pub compliance_factors: Option<Vec<f64>>,
    pub uniform_factors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub cip: Option<PathBuf>,
}

/// On-disk run description. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub state: Option<State>,
    pub tree: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub injection: InjectionSection,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default)]
    pub render: RenderSection,
    #[serde(default)]
    pub stage1: Stage1Section,
    #[serde(default)]
    pub stage2: Stage2Section,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::usage(format!("file not found: {}", path.display()))
        } else {
            CliError::usage(format!("cannot read {}: {e}", path.display()))
        }
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in cfg.referenced_files() {
            if !p.exists() {
                return Err(CliError::usage(format!("file not found: {}", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        let s1 = &self.stage1;
        let s2 = &self.stage2;
        [
            &self.tree,
            &self.params,
            &s1.problem,
            &s1.hyperemia_problem,
            &s1.hyperemia_params,
            &s2.hyperemia_params,
            &s2.clinical_rest,
            &s2.clinical_hyper,
            &self.features.cip,
        ]
        .into_iter()
        .flatten()
        .map(|p| self.resolve(p))
        .collect()
    }

    pub fn tree(&self) -> Result<VesselTree, CliError> {
        match &self.tree {
            Some(p) => Ok(load_tree(&read_text(&self.resolve(p))?)?),
            None => Ok(VesselTree::reference()),
        }
    }

    /// Parameter set at `path`, or the shipped preset for `state`.
    pub fn param_set(&self, path: Option<&PathBuf>, state: State, tree: &VesselTree) -> Result<LpmParameterSet, CliError> {
        let text = match path {
            Some(p) => read_text(&self.resolve(p))?,
            None => state.preset().to_string(),
        };
        let file = ParameterFile::parse(&text)?;
        Ok(LpmParameterSet::from_file(file, tree, &self.fluid())?)
    }

    pub fn fluid(&self) -> FluidProperties {
        let base = FluidProperties::default();
        FluidProperties {
            diffusivity: self.transport.diffusivity.unwrap_or(base.diffusivity),
            ..base
        }
    }

    pub fn params(&self, tree: &VesselTree) -> Result<LpmParameterSet, CliError> {
        self.param_set(self.params.as_ref(), self.state.unwrap_or_default(), tree)
    }

    /// Pipeline for `state` with this file's overrides applied.
    pub fn pipeline(&self, state: State, dt: Option<f64>) -> Result<PipelineConfig, CliError> {
        let mut p = state.pipeline();
        let s = &self.simulation;
        if let Some(v) = dt.or(s.dt) {
            p.simulation.dt = v;
        }
        if let Some(v) = s.n_cycles {
            p.simulation.n_cycles = v;
        }
        if let Some(v) = s.periodicity_tol {
            p.simulation.periodicity_tol = v;
        }
        let i = &self.injection;
        if let Some(v) = i.cycle {
            p.injection_cycle = v;
        }
        if let Some(v) = i.rate_ml_s {
            p.injection_rate = units::ml_to_mm3(v);
        }
        if let Some(v) = i.duration {
            p.injection_duration = v;
        }
        if let Some(v) = i.c0 {
            p.c0 = v;
        }
        let t = &self.transport;
        if let Some(v) = t.dx {
            p.dx = v;
        }
        if let Some(v) = t.dt {
            p.transport.dt = v;
        }
        let r = &self.render;
        if let Some(v) = r.width {
            p.render.width = v;
        }
        if let Some(v) = r.height {
            p.render.height = v;
        }
        if let Some(v) = r.pixel_size {
            p.render.pixel_size = v;
        }
        if let Some(v) = r.i_thr {
            p.render.i_thr = v;
        }
        if let Some(v) = r.fps {
            p.render.fps = v;
        }
        p.view = ViewAngles {
            rao_lao: r.rao_lao.unwrap_or(p.view.rao_lao),
            cra_cau: r.cra_cau.unwrap_or(p.view.cra_cau),
        };
        check_dt(p.simulation.dt)?;
        p.validate()?;
        Ok(p)
    }

    pub fn de(&self, seed: Option<u64>) -> DEConfig {
        let d = &self.stage1.de;
        let base = DEConfig::default();
        DEConfig {
            population: d.population.unwrap_or(base.population),
            max_generations: d.max_generations.unwrap_or(base.max_generations),
            f: d.f.unwrap_or(base.f),
            cr: d.cr.unwrap_or(base.cr),
            std_tol_fraction: d.std_tol_fraction.unwrap_or(base.std_tol_fraction),
            seed: seed.or(self.seed).unwrap_or(base.seed),
        }
    }

    pub fn stage1_problem(&self, path: Option<&PathBuf>, fallback: &str) -> Result<Stage1File, CliError> {
        let text = match path {
            Some(p) => read_text(&self.resolve(p))?,
            None => fallback.to_string(),
        };
        Ok(Stage1File::parse(&text)?)
    }

    pub fn stage2(&self) -> Stage2Config {
        let s = &self.stage2;
        let base = Stage2Config::default();
        Stage2Config {
            levels: s.levels.clone().unwrap_or(base.levels),
            cfr_hat: s.cfr_hat.unwrap_or(base.cfr_hat),
            cfr_outlet: s.cfr_outlet.clone().unwrap_or(base.cfr_outlet),
            clinical_onset_fraction: s.clinical_onset_fraction,
        }
    }
}

pub fn check_dt(dt: f64) -> Result<(), CliError> {
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(CliError::usage(format!("--dt must satisfy 0 < dt <= 1e-3 s, got {dt}")));
    }
    Ok(())
}
