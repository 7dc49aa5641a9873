use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use angiosim::calibration::{
    flow_targets, grid_search, pretune_coronary, run_stage1, scale_targets, sensitivity_individual,
    sensitivity_uniform, PretuneConfig, PretuneResult, SensitivityRow, Stage1Bounds, Stage1Options,
    Stage1Result, COMPLIANCE_FACTORS, RESISTANCE_FACTORS, STAGE1_NAMES, STUDY_CYCLES, UNIFORM_FACTORS,
};
use angiosim::lpm::{compute_metrics, simulate, HemodynamicMetrics, LpmParameterSet};
use angiosim::pipeline::{Pipeline, PipelineRun};
use angiosim::presets;
use angiosim::render::{extract_features, threshold_mask, Cip, CipFeatures};
use angiosim::units;
use serde::Serialize;

use crate::config::{check_dt, read_text, RunConfig, State};
use crate::output::{create, num, RunDir};
use crate::{Cli, CliError, Command, Study};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(dt) = cli.dt {
        check_dt(dt)?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(cfg.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(|p| cfg.resolve(p)))
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set `out` in the config"))?;
    pool.install(|| match &cli.command {
        Command::Simulate => cmd_simulate(cli, &cfg, out),
        Command::Angiogram => cmd_angiogram(cli, &cfg, out),
        Command::Calibrate { stage: 1 } => cmd_stage1(cli, &cfg, out),
        Command::Calibrate { .. } => cmd_stage2(cli, &cfg, out),
        Command::Sensitivity { study } => cmd_sensitivity(cli, &cfg, *study, out),
        Command::Features { cip } => cmd_features(&cfg, cip.clone(), out),
    })
}

fn write_metrics_csv(dir: &RunDir, name: &str, m: &HemodynamicMetrics) -> Result<(), CliError> {
    let mut w = dir.create(name)?;
    writeln!(w, "metric,value")?;
    let rows = [
        ("Q_mean_Lmin", Some(m.q_mean)),
        ("Q_max_Lmin", Some(m.q_max)),
        ("P_sys_mmHg", Some(m.p_sys)),
        ("P_dia_mmHg", Some(m.p_dia)),
        ("P_DN_mmHg", m.p_dn),
        ("P_pulse_mmHg", Some(m.p_pulse)),
        ("EDV_ml", Some(m.edv)),
        ("ESV_ml", Some(m.esv)),
        ("SV_ml", Some(m.sv)),
        ("EF", Some(m.ef)),
        ("Q_left_Lmin", Some(m.q_left)),
        ("Q_right_Lmin", Some(m.q_right)),
    ];
    for (k, v) in rows {
        writeln!(w, "{k},{}", num(v))?;
    }
    for (id, q) in &m.terminal_flows {
        writeln!(w, "Q_{id}_Lmin,{q}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_cip(dir: &RunDir, name: &str, cip: &Cip) -> Result<(), CliError> {
    cip.write_csv(dir.create(name)?)?;
    Ok(())
}

/// Header-only file when the profile has no features.
fn write_features(dir: &RunDir, name: &str, f: Option<&CipFeatures>) -> Result<(), CliError> {
    let mut w = dir.create(name)?;
    match f {
        Some(f) => f.write_csv(w)?,
        None => {
            writeln!(w, "feature,value")?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, cfg: &RunConfig, out: PathBuf) -> Result<(), CliError> {
    let tree = cfg.tree()?;
    let params = cfg.params(&tree)?;
    let pipe = cfg.pipeline(cfg.state.unwrap_or_default(), cli.dt)?;
    let dir = RunDir::claim(&out)?;
    let series = simulate(&params, &pipe.simulation)?;
    let metrics = compute_metrics(&series, true)?;
    // Millisecond sampling keeps the waveform file a manageable size.
    let stride = (1e-3 / series.dt).round().max(1.0) as usize;
    series.write_csv(dir.create("hemodynamics.csv")?, stride)?;
    dir.json("metrics.json", &metrics)?;
    write_metrics_csv(&dir, "metrics.csv", &metrics)?;
    Ok(())
}

#[derive(Serialize)]
struct AngiogramSummary<'a> {
    state: &'static str,
    frames: usize,
    injection_start_s: f64,
    injected_ml: f64,
    metrics: &'a HemodynamicMetrics,
    features: Option<CipFeatures>,
    transport_steps: usize,
    transport_max_balance_error: f64,
}

fn state_name(s: State) -> &'static str {
    match s {
        State::Rest => "rest",
        State::Hyperemia => "hyperemia",
    }
}

fn cmd_angiogram(cli: &Cli, cfg: &RunConfig, out: PathBuf) -> Result<(), CliError> {
    let state = cfg.state.unwrap_or_default();
    let tree = cfg.tree()?;
    let params = cfg.params(&tree)?;
    let pc = cfg.pipeline(state, cli.dt)?;
    let pipe = Pipeline::new(&tree, &cfg.fluid(), pc)?;
    let dir = RunDir::claim(&out)?;
    let run: PipelineRun = pipe.run(&params, true)?;
    let frames = run.frames.as_deref().unwrap_or_default();
    let fdir = dir.subdir("frames")?;
    let mdir = dir.subdir("masks")?;
    for (k, f) in frames.iter().enumerate() {
        f.write_pgm(create(&fdir.join(format!("frame_{k:04}.pgm")))?)?;
        threshold_mask(f, pc.render.i_thr).write_pgm(create(&mdir.join(format!("mask_{k:04}.pgm")))?)?;
    }
    write_cip(&dir, "cip.csv", &run.cip)?;
    write_features(&dir, "features.csv", run.features.as_ref())?;
    write_metrics_csv(&dir, "metrics.csv", &run.metrics)?;
    dir.json(
        "summary.json",
        &AngiogramSummary {
            state: state_name(state),
            frames: frames.len(),
            injection_start_s: run.protocol.start,
            injected_ml: run.protocol.total_volume(),
            metrics: &run.metrics,
            features: run.features,
            transport_steps: run.transport.steps,
            transport_max_balance_error: run.transport.max_balance_error,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct Stage1Summary<'a> {
    seed: u64,
    generations: usize,
    evaluations: usize,
    converged: bool,
    search_loss: f64,
    verified_loss: f64,
    constraints_met: bool,
    parameters: BTreeMap<&'static str, f64>,
    metrics: &'a HemodynamicMetrics,
}

fn write_stage1(dir: &RunDir, prefix: &str, r: &Stage1Result, seed: u64) -> Result<(), CliError> {
    let mut w = dir.create(&format!("{prefix}de_history.csv"))?;
    writeln!(w, "generation,best_loss,mean_loss,std_loss")?;
    for g in &r.de.history {
        writeln!(w, "{},{},{},{}", g.generation, g.best_loss, g.mean_loss, g.std_loss)?;
    }
    w.flush()?;
    dir.text(&format!("{prefix}params.toml"), &r.params.to_file().to_toml_string())?;
    write_metrics_csv(dir, &format!("{prefix}metrics.csv"), &r.metrics)?;
    dir.json(
        &format!("{prefix}summary.json"),
        &Stage1Summary {
            seed,
            generations: r.de.history.len(),
            evaluations: r.de.evaluations,
            converged: r.de.converged,
            search_loss: r.search_loss,
            verified_loss: r.verified_loss,
            constraints_met: r.constraints_met,
            parameters: STAGE1_NAMES.iter().copied().zip(r.x.iter().copied()).collect(),
            metrics: &r.metrics,
        },
    )
}

fn cmd_stage1(cli: &Cli, cfg: &RunConfig, out: PathBuf) -> Result<(), CliError> {
    let tree = cfg.tree()?;
    let state = cfg.state.unwrap_or_default();
    let base = cfg.params(&tree)?;
    let fallback = match state {
        State::Rest => presets::STAGE1_REST,
        State::Hyperemia => presets::STAGE1_HYPEREMIA,
    };
    let problem = cfg.stage1_problem(cfg.stage1.problem.as_ref(), fallback)?;
    let bounds = problem
        .bounds
        .ok_or_else(|| CliError::usage("stage-1 problem has no [bounds] section"))?;
    let de = cfg.de(cli.seed);
    let mut opts = Stage1Options::default();
    if let Some(dt) = cli.dt.or(cfg.simulation.dt) {
        opts.verify.dt = dt;
    }
    let follow_up = match (&cfg.stage1.hyperemia_problem, state) {
        (Some(p), State::Rest) => Some(cfg.stage1_problem(Some(p), presets::STAGE1_HYPEREMIA)?),
        (Some(_), State::Hyperemia) => {
            return Err(CliError::usage("a hyperemic follow-up needs a resting primary problem"));
        }
        (None, _) => None,
    };
    let dir = RunDir::claim(&out)?;
    let r = run_stage1(&base, &problem.targets, &bounds, &de, &opts)?;
    write_stage1(&dir, "", &r, de.seed)?;
    if let Some(hp) = follow_up {
        let hbase = cfg.param_set(cfg.stage1.hyperemia_params.as_ref(), State::Hyperemia, &tree)?;
        let hbounds = match hp.bounds {
            Some(b) => b,
            None => Stage1Bounds::hyperemia_from_rest(&r.params),
        };
        let h = run_stage1(&hbase, &hp.targets, &hbounds, &de, &opts)?;
        write_stage1(&dir, "hyperemia_", &h, de.seed)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PretuneSummary {
    iterations: usize,
    max_error: f64,
    dominance_met: bool,
    halvings: usize,
    flows_lmin: BTreeMap<String, f64>,
    diastolic_fraction: BTreeMap<String, f64>,
}

impl From<&PretuneResult> for PretuneSummary {
    fn from(r: &PretuneResult) -> Self {
        Self {
            iterations: r.iterations,
            max_error: r.max_error,
            dominance_met: r.dominance_met,
            halvings: r.halvings,
            flows_lmin: r.flows.clone(),
            diastolic_fraction: r.diastolic_fraction.clone(),
        }
    }
}

#[derive(Serialize)]
struct Stage2Summary {
    label: String,
    delta_rest: f64,
    delta_hyper: f64,
    best_loss: f64,
    cfr: f64,
    cfr_hat: f64,
    pretune_rest: Option<PretuneSummary>,
    pretune_hyper: Option<PretuneSummary>,
    features_rest: Option<CipFeatures>,
    features_hyper: Option<CipFeatures>,
}

fn read_cip(cfg: &RunConfig, p: &Path) -> Result<Cip, CliError> {
    let text = read_text(&cfg.resolve(p))?;
    Cip::read_csv(text.as_bytes()).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
}

fn cmd_stage2(cli: &Cli, cfg: &RunConfig, out: PathBuf) -> Result<(), CliError> {
    let s2 = &cfg.stage2;
    let (Some(cr), Some(ch)) = (&s2.clinical_rest, &s2.clinical_hyper) else {
        return Err(CliError::usage(
            "stage 2 needs clinical CIPs: set stage2.clinical_rest and stage2.clinical_hyper",
        ));
    };
    let clinical_rest = read_cip(cfg, cr)?;
    let clinical_hyper = read_cip(cfg, ch)?;
    let tree = cfg.tree()?;
    let fluid = cfg.fluid();
    let mut rest = cfg.param_set(cfg.params.as_ref(), State::Rest, &tree)?;
    let mut hyper = cfg.param_set(s2.hyperemia_params.as_ref(), State::Hyperemia, &tree)?;
    let s2cfg = cfg.stage2();
    s2cfg.validate()?;
    let rest_pipe = Pipeline::new(&tree, &fluid, cfg.pipeline(State::Rest, cli.dt)?)?;
    let hyper_pipe = Pipeline::new(&tree, &fluid, cfg.pipeline(State::Hyperemia, cli.dt)?)?;
    let dir = RunDir::claim(&out)?;

    let (mut pre_rest, mut pre_hyper) = (None, None);
    if s2.pretune {
        let base = PretuneConfig::default();
        let pcfg = PretuneConfig {
            coronary_fraction: s2.coronary_fraction.unwrap_or(base.coronary_fraction),
            left_share: s2.left_share.unwrap_or(base.left_share),
            ..base
        };
        let co = match s2.cardiac_output {
            Some(q) => q,
            None => compute_metrics(&simulate(&rest, &pcfg.simulation)?, true)?.q_mean,
        };
        let targets = flow_targets(&tree, units::lmin_to_mm3s(co), &pcfg)?;
        let r = pretune_coronary(&rest, &targets, &pcfg)?;
        let h = pretune_coronary(&hyper, &scale_targets(&targets, s2cfg.cfr_hat), &pcfg)?;
        rest = r.params.clone();
        hyper = h.params.clone();
        pre_rest = Some(PretuneSummary::from(&r));
        pre_hyper = Some(PretuneSummary::from(&h));
    }

    let o = grid_search(&rest, &hyper, &clinical_rest, &clinical_hyper, &s2cfg, &rest_pipe, &hyper_pipe)?;
    let mut w = dir.create("grid.csv")?;
    writeln!(w, "delta_rest_pct,delta_hyper_pct,loss")?;
    for (i, row) in o.grid.losses.iter().enumerate() {
        for (j, l) in row.iter().enumerate() {
            let pct = |d: f64| (d * 100.0).round() as i64;
            writeln!(w, "{},{},{}", pct(o.grid.levels[i]), pct(o.grid.levels[j]), l)?;
        }
    }
    w.flush()?;
    dir.text("rest_params.toml", &o.rest.to_file().to_toml_string())?;
    dir.text("hyperemia_params.toml", &o.hyper.to_file().to_toml_string())?;
    write_cip(&dir, "cip_rest.csv", &o.rest_run.cip)?;
    write_cip(&dir, "cip_hyper.csv", &o.hyper_run.cip)?;
    let (i, j) = o.grid.best;
    dir.json(
        "summary.json",
        &Stage2Summary {
            label: o.grid.label.clone(),
            delta_rest: o.grid.levels[i],
            delta_hyper: o.grid.levels[j],
            best_loss: o.grid.best_loss,
            cfr: o.cfr,
            cfr_hat: s2cfg.cfr_hat,
            pretune_rest: pre_rest,
            pretune_hyper: pre_hyper,
            features_rest: o.rest_run.features,
            features_hyper: o.hyper_run.features,
        },
    )
}

fn factor_label(f: f64) -> String {
    if f >= 1.0 {
        format!("{}x", num(Some(f)))
    } else {
        format!("1/{}x", num(Some((1.0 / f).round())))
    }
}

fn write_sensitivity(dir: &RunDir, rows: &[SensitivityRow]) -> Result<(), CliError> {
    let mut w = dir.create("sensitivity.csv")?;
    writeln!(
        w,
        "family,factor,Q_mean_Lmin,Q_max_Lmin,P_sys_mmHg,P_dia_mmHg,EDV_ml,ESV_ml,SV_ml,EF,Q_left_Lmin,\
         rising_slope_per_s,falling_slope_per_s,plateau_duration_s,auc_s,auc_ratio"
    )?;
    for r in rows {
        let m = &r.metrics;
        let f = r.features;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.family.name(),
            factor_label(r.factor),
            m.q_mean,
            m.q_max,
            m.p_sys,
            m.p_dia,
            m.edv,
            m.esv,
            m.sv,
            m.ef,
            m.q_left,
            num(f.map(|f| f.rising_slope)),
            num(f.map(|f| f.falling_slope)),
            num(f.map(|f| f.plateau_duration)),
            num(f.map(|f| f.auc)),
            num(r.auc_ratio),
        )?;
    }
    w.flush()?;
    let mut w = dir.create("cips.csv")?;
    writeln!(w, "family,factor,time_s,value")?;
    for r in rows {
        let label = factor_label(r.factor);
        for (t, v) in r.cip.times.iter().zip(&r.cip.values) {
            writeln!(w, "{},{label},{t:.6},{v:.6}", r.family.name())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_sensitivity(cli: &Cli, cfg: &RunConfig, study: Study, out: PathBuf) -> Result<(), CliError> {
    let tree = cfg.tree()?;
    let default_state = match study {
        Study::Individual => State::Hyperemia,
        Study::Uniform => State::Rest,
    };
    let state = cfg.state.unwrap_or(default_state);
    let baseline: LpmParameterSet = match (&cfg.params, study) {
        (None, Study::Uniform) => presets::healthy_rest_params(),
        (p, _) => cfg.param_set(p.as_ref(), state, &tree)?,
    };
    let mut pc = cfg.pipeline(state, cli.dt)?;
    if cfg.simulation.n_cycles.is_none() {
        pc = pc.with_cycles(STUDY_CYCLES);
    }
    let pipe = Pipeline::new(&tree, &cfg.fluid(), pc)?;
    let s = &cfg.sensitivity;
    let dir = RunDir::claim(&out)?;
    let rows = match study {
        Study::Individual => sensitivity_individual(
            &baseline,
            &pipe,
            s.resistance_factors.as_deref().unwrap_or(&RESISTANCE_FACTORS),
            s.compliance_factors.as_deref().unwrap_or(&COMPLIANCE_FACTORS),
        )?,
        Study::Uniform => sensitivity_uniform(&baseline, &pipe, s.uniform_factors.as_deref().unwrap_or(&UNIFORM_FACTORS))?,
    };
    write_sensitivity(&dir, &rows)
}

fn cmd_features(cfg: &RunConfig, cip: Option<PathBuf>, out: PathBuf) -> Result<(), CliError> {
    let path = match cip {
        Some(p) => p,
        None => cfg
            .features
            .cip
            .as_ref()
            .map(|p| cfg.resolve(p))
            .ok_or_else(|| CliError::usage("no CIP given: pass --cip or set features.cip"))?,
    };
    let text = read_text(&path)?;
    let cip = Cip::read_csv(text.as_bytes()).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let dir = RunDir::claim(&out)?;
    write_features(&dir, "features.csv", extract_features(&cip).as_ref())
}
