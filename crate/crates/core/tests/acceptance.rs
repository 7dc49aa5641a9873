//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use angiosim::calibration::{
    differential_evolution, flow_targets, grid_search, perturb_resistances, pretune_coronary, run_stage1,
    scale_targets, sensitivity_individual, sensitivity_uniform, DEConfig, Family, PretuneConfig,
    SensitivityRow, Stage1Bounds, Stage1File, Stage1Options, Stage2Config, COMPLIANCE_FACTORS,
    RESISTANCE_FACTORS, STUDY_CYCLES, UNIFORM_FACTORS,
};
use angiosim::lpm::{compute_metrics, elastance_at, simulate, SimulationOptions};
use angiosim::pipeline::{Pipeline, PipelineConfig};
use angiosim::presets;
use angiosim::render::{cip_from_counts, threshold_count, AngiogramFrame};
use angiosim::transport::{build_grid, simulate_transport, TransportOptions};
use angiosim::tree::{FluidProperties, VesselTree};
use angiosim::units;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(name: &str, got: f64, want: f64, rel: f64) -> Result<(), String> {
    let err = (got - want).abs() / want.abs();
    ensure(err <= rel, format!("{name} = {got:.4}, reference {want}, off by {:.1}%", 100.0 * err))
}

fn budget(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t <= limit, format!("took {:.1} s, limit {:.0} s", t.as_secs_f64(), limit.as_secs_f64()))
}

fn rest_flow_replay() -> Outcome {
    let start = Instant::now();
    let s = simulate(&presets::rest_params(), &SimulationOptions::default()).map_err(|e| e.to_string())?;
    let m = compute_metrics(&s, true).map_err(|e| e.to_string())?;
    within("Q_mean", m.q_mean, 4.941, 0.10)?;
    within("Q_max", m.q_max, 30.822, 0.10)?;
    within("P_sys", m.p_sys, 130.249, 0.10)?;
    within("P_dia", m.p_dia, 82.013, 0.10)?;
    within("EDV", m.edv, 160.517, 0.10)?;
    within("ESV", m.esv, 78.147, 0.10)?;
    within("Q_LAD", m.terminal_flows["LAD"], 0.027, 0.25)?;
    budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "Q_mean {:.3} Q_max {:.3} P_sys {:.2} P_dia {:.2} EDV {:.2} ESV {:.2} Q_LAD {:.4} ({:.1} s)",
        m.q_mean,
        m.q_max,
        m.p_sys,
        m.p_dia,
        m.edv,
        m.esv,
        m.terminal_flows["LAD"],
        start.elapsed().as_secs_f64()
    ))
}

fn flow_reserve() -> Outcome {
    let start = Instant::now();
    let opts = SimulationOptions::default();
    let lad = |p| -> Result<f64, String> {
        let s = simulate(&p, &opts).map_err(|e| e.to_string())?;
        Ok(compute_metrics(&s, true).map_err(|e| e.to_string())?.terminal_flows["LAD"])
    };
    let rest = lad(presets::rest_params())?;
    let hyper = lad(presets::hyperemia_params())?;
    let cfr = hyper / rest;
    ensure((1.9..=2.5).contains(&cfr), format!("CFR {cfr:.3} outside [1.9, 2.5]"))?;
    within("hyperemic Q_LAD", hyper, 0.059, 0.25)?;
    budget(start, Duration::from_secs(60))?;
    Ok(format!("CFR {cfr:.3} (LAD {rest:.4} -> {hyper:.4} L/min, {:.1} s)", start.elapsed().as_secs_f64()))
}

fn stage1() -> Outcome {
    let start = Instant::now();
    let de = DEConfig::default();
    let opts = Stage1Options::default();
    let rest_file = Stage1File::parse(presets::STAGE1_REST).map_err(|e| e.to_string())?;
    let bounds = rest_file.bounds.ok_or("rest problem lacks bounds")?;
    let rest = run_stage1(&presets::rest_params(), &rest_file.targets, &bounds, &de, &opts).map_err(|e| e.to_string())?;
    let hyper_file = Stage1File::parse(presets::STAGE1_HYPEREMIA).map_err(|e| e.to_string())?;
    let hyper_bounds = Stage1Bounds::hyperemia_from_rest(&rest.params);
    let hyper = run_stage1(&presets::hyperemia_params(), &hyper_file.targets, &hyper_bounds, &de, &opts)
        .map_err(|e| e.to_string())?;
    for (name, r) in [("rest", &rest), ("hyperemia", &hyper)] {
        ensure(r.verified_loss <= 0.05, format!("{name}: L1 {:.4} > 0.05", r.verified_loss))?;
        ensure(r.constraints_met, format!("{name}: EDV or dicrotic-notch constraint violated"))?;
        ensure(r.de.history.len() <= 150, format!("{name}: {} generations", r.de.history.len()))?;
        ensure(
            r.de.history.windows(2).all(|w| w[1].best_loss <= w[0].best_loss),
            format!("{name}: best-loss history increases"),
        )?;
    }
    budget(start, Duration::from_secs(3600))?;
    Ok(format!(
        "L1 rest {:.4}, hyperemia {:.4}, constraints met ({:.1} s)",
        rest.verified_loss,
        hyper.verified_loss,
        start.elapsed().as_secs_f64()
    ))
}

fn grid_self_consistency() -> Outcome {
    let start = Instant::now();
    let tree = VesselTree::reference();
    let fluid = FluidProperties::default();
    let cfg = PretuneConfig::default();
    let e = |e: angiosim::Error| e.to_string();
    let rest = presets::rest_params();
    let co = compute_metrics(&simulate(&rest, &cfg.simulation).map_err(e)?, true).map_err(e)?.q_mean;
    let targets = flow_targets(&tree, units::lmin_to_mm3s(co), &cfg).map_err(e)?;
    let rest = pretune_coronary(&rest, &targets, &cfg).map_err(e)?.params;
    let hyper = pretune_coronary(&presets::hyperemia_params(), &scale_targets(&targets, 2.2), &cfg)
        .map_err(e)?
        .params;

    let mut rc = PipelineConfig::rest();
    rc.dx = 1.0;
    let mut hc = PipelineConfig::hyperemia();
    hc.dx = 1.0;
    let rest_pipe = Pipeline::new(&tree, &fluid, rc).map_err(e)?;
    let hyper_pipe = Pipeline::new(&tree, &fluid, hc).map_err(e)?;
    let truth_rest = rest_pipe.run(&perturb_resistances(&rest, 0.06), false).map_err(e)?;
    let truth_hyper = hyper_pipe.run(&perturb_resistances(&hyper, -0.03), false).map_err(e)?;
    let cfr = truth_hyper.metrics.terminal_flows["LAD"] / truth_rest.metrics.terminal_flows["LAD"];
    let s2 = Stage2Config {
        cfr_hat: cfr,
        ..Default::default()
    };
    let out = grid_search(&rest, &hyper, &truth_rest.cip, &truth_hyper.cip, &s2, &rest_pipe, &hyper_pipe)
        .map_err(e)?;
    ensure(out.grid.label == "+6%R & -3%H", format!("recovered {}", out.grid.label))?;
    ensure(out.grid.best_loss <= out.grid.losses[3][3], "best cell worse than the pretuned pair")?;
    budget(start, Duration::from_secs(45 * 60))?;
    Ok(format!(
        "recovered {} with loss {:.2e} ({:.1} s)",
        out.grid.label,
        out.grid.best_loss,
        start.elapsed().as_secs_f64()
    ))
}

fn family_rows(rows: &[SensitivityRow], f: Family) -> Vec<&SensitivityRow> {
    rows.iter().filter(|r| r.family == f).collect()
}

fn study_individual() -> Outcome {
    let start = Instant::now();
    let tree = VesselTree::reference();
    let pipe = Pipeline::new(
        &tree,
        &FluidProperties::default(),
        PipelineConfig::hyperemia().with_cycles(STUDY_CYCLES),
    )
    .map_err(|e| e.to_string())?;
    let rows = sensitivity_individual(&presets::hyperemia_params(), &pipe, &RESISTANCE_FACTORS, &COMPLIANCE_FACTORS)
        .map_err(|e| e.to_string())?;
    ensure(rows.len() == 25, format!("{} rows", rows.len()))?;
    let mut drops = Vec::new();
    for fam in [Family::Ra, Family::Rap, Family::Rad] {
        let r = family_rows(&rows, fam);
        let q: Vec<f64> = r.iter().map(|r| r.metrics.q_left).collect();
        ensure(q.windows(2).all(|w| w[1] < w[0]), format!("{}: Q_left not strictly decreasing {q:?}", fam.name()))?;
        let slopes = r
            .iter()
            .map(|r| r.features.map(|f| f.falling_slope.abs()))
            .collect::<Option<Vec<f64>>>()
            .ok_or(format!("{}: a profile never reached its plateau", fam.name()))?;
        ensure(
            slopes.windows(2).all(|w| w[1] <= w[0]),
            format!("{}: |falling slope| increases {slopes:?}", fam.name()),
        )?;
        drops.push((fam, q[0] - q[q.len() - 1]));
    }
    let largest = drops.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    ensure(largest == Family::Rad, format!("largest drop from {}", largest.name()))?;
    let base = rows[0].metrics.q_left;
    for fam in [Family::Ca, Family::Cim] {
        for r in family_rows(&rows, fam) {
            let d = (r.metrics.q_left - base).abs() / base;
            ensure(d < 0.02, format!("{} x{:.3}: Q_left moved {:.2}%", fam.name(), r.factor, 100.0 * d))?;
        }
    }
    let rad = family_rows(&rows, Family::Rad);
    Ok(format!(
        "R_ad Q_left {:.3} -> {:.3} L/min, compliance effect < 2% ({:.1} s)",
        rad[0].metrics.q_left,
        rad[4].metrics.q_left,
        start.elapsed().as_secs_f64()
    ))
}

fn study_uniform() -> Outcome {
    let start = Instant::now();
    let pipe = Pipeline::new(
        &VesselTree::reference(),
        &FluidProperties::default(),
        PipelineConfig::rest().with_cycles(STUDY_CYCLES),
    )
    .map_err(|e| e.to_string())?;
    let rows =
        sensitivity_uniform(&presets::healthy_rest_params(), &pipe, &UNIFORM_FACTORS).map_err(|e| e.to_string())?;
    let q: Vec<f64> = rows.iter().map(|r| r.metrics.q_left).collect();
    let (moderate, severe) = (q[1] / q[0], q[2] / q[0]);
    ensure((0.45..=0.60).contains(&moderate), format!("moderate/baseline {moderate:.3}"))?;
    ensure((0.28..=0.42).contains(&severe), format!("severe/baseline {severe:.3}"))?;
    let auc = rows
        .iter()
        .map(|r| r.features.map(|f| f.auc))
        .collect::<Option<Vec<f64>>>()
        .ok_or("a profile never reached its plateau")?;
    ensure(auc[0] < auc[1] && auc[1] < auc[2], format!("AUC not increasing {auc:?}"))?;
    Ok(format!(
        "Q_left ratios {moderate:.3} / {severe:.3}, AUC +{:.1}% / +{:.1}% ({:.1} s)",
        100.0 * (auc[1] / auc[0] - 1.0),
        100.0 * (auc[2] / auc[0] - 1.0),
        start.elapsed().as_secs_f64()
    ))
}

/// First time the series reaches `level`, linearly interpolated.
fn first_crossing(t: &[f64], v: &[f64], level: f64) -> Option<f64> {
    (1..v.len()).find(|&i| v[i] >= level).map(|i| {
        let f = (level - v[i - 1]) / (v[i] - v[i - 1]);
        t[i - 1] + f * (t[i] - t[i - 1])
    })
}

fn transport_convergence() -> Outcome {
    let start = Instant::now();
    let tree = VesselTree::reference();
    let cfg = PipelineConfig::rest();
    let e = |e: angiosim::Error| e.to_string();
    let hemo = simulate(&presets::rest_params(), &cfg.simulation).map_err(e)?;
    let protocol = cfg.protocol(hemo.period);
    let n = ((hemo.duration() - protocol.start) / 0.005).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| protocol.start + 0.005 * k as f64).collect();
    let mut arrivals = Vec::new();
    let mut worst = 0.0f64;
    for dx in [0.5, 0.25] {
        let grid = build_grid(&tree, dx).map_err(e)?.with_diffusivity(0.0);
        let field = simulate_transport(&hemo, &grid, &protocol, &times, &TransportOptions::default()).map_err(e)?;
        worst = worst.max(field.diagnostics.max_balance_error);
        let lad = &grid.segments[grid.segment_index("LAD").ok_or("no LAD")?];
        let c = field.cell_series(lad.last_cell());
        let peak = c.iter().copied().fold(0.0, f64::max);
        ensure(peak > 0.0, "contrast never reaches the LAD outlet")?;
        arrivals.push(first_crossing(&times, &c, 0.5 * peak).ok_or("no half-peak crossing")? - protocol.start);
    }
    ensure(worst <= 1e-8, format!("mass balance error {worst:.2e}"))?;
    let shift = (arrivals[1] - arrivals[0]).abs() / arrivals[0];
    ensure(shift < 0.05, format!("front shift {:.2}%", 100.0 * shift))?;
    Ok(format!(
        "balance error {worst:.1e}, LAD half-peak arrival {:.3} s vs {:.3} s ({:.2}% shift, {:.1} s)",
        arrivals[0],
        arrivals[1],
        100.0 * shift,
        start.elapsed().as_secs_f64()
    ))
}

fn prop(cases: u32, name: &str, test: impl Fn(&mut TestRunner) -> Result<(), String>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    test(&mut runner).map_err(|m| format!("{name}: {m}"))
}

fn invariants() -> Outcome {
    let start = Instant::now();
    let rest = presets::rest_params();

    prop(16, "valves and node balance", |r| {
        r.run(&(0.5f64..3.0, 0.85f64..1.15), |(rs, emax)| {
            let mut p = rest.map_coronary(|c| c.scale_resistances(rs));
            p.heart.elastance.e_max *= emax;
            let opts = SimulationOptions {
                dt: 5e-4,
                n_cycles: 3,
                periodicity_tol: 1.0,
            };
            let s = simulate(&p, &opts).unwrap();
            prop_assert!(s.q_av.iter().chain(&s.q_mv).all(|&q| q >= 0.0));
            for i in 0..s.len() {
                let q_sys = (s.p_ao[i] - s.p_wk[i]) / p.aorta.r_sp;
                let q_cor: f64 = s.terminals.iter().map(|t| t.q_cor[i]).sum();
                let scale = s.q_av[i].abs().max(q_sys.abs()).max(1.0);
                prop_assert!((s.q_av[i] - q_sys - q_cor).abs() <= 1e-9 * scale);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    let ep = rest.heart.elastance;
    prop(2000, "elastance", |r| {
        r.run(&(-3.0f64..3.0), |t| {
            let (e, de) = elastance_at(t, &ep);
            prop_assert!(e >= ep.e_min - 1e-15 && e <= ep.e_max + 1e-15);
            prop_assert!((elastance_at(t + ep.period, &ep).0 - e).abs() <= 1e-12);
            let h = 1e-6;
            let phase = t.rem_euclid(ep.period);
            let away = [0.0, ep.t_max, ep.t_r, ep.period].iter().all(|b| (phase - b).abs() > 10.0 * h);
            if away {
                let fd = (elastance_at(t + h, &ep).0 - elastance_at(t - h, &ep).0) / (2.0 * h);
                let scale = de.abs().max(ep.e_max - ep.e_min);
                prop_assert!((fd - de).abs() <= 1e-6 * scale, "fd {} analytic {}", fd, de);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    prop(256, "CIP normalisation", |r| {
        r.run(&prop::collection::vec(0usize..100_000, 2..60), |counts| {
            let times: Vec<f64> = (0..counts.len()).map(|k| k as f64 * 0.1).collect();
            let cip = cip_from_counts(times, &counts).unwrap();
            prop_assert!(cip.values.iter().all(|v| (0.0..=1.0).contains(v)));
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    prop(256, "threshold monotonicity", |r| {
        r.run(&(prop::collection::vec(any::<u8>(), 64), any::<u8>(), any::<u8>()), |(px, a, b)| {
            let f = AngiogramFrame {
                width: 8,
                height: 8,
                pixels: px,
                time: 0.0,
            };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(threshold_count(&f, lo) <= threshold_count(&f, hi));
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    prop(32, "DE bounds", |r| {
        r.run(&(prop::collection::vec((-10.0f64..0.0, 0.0f64..5.0), 1..5), 0u64..1000), |(b, seed)| {
            let bounds: Vec<(f64, f64)> = b.iter().map(|(l, s)| (*l, l + s)).collect();
            let cfg = DEConfig {
                population: 8,
                max_generations: 10,
                seed,
                ..Default::default()
            };
            let res = differential_evolution(
                |x| {
                    assert!(x.iter().zip(&bounds).all(|(v, (l, h))| v >= l && v <= h));
                    x.iter().map(|v| (v - 20.0).powi(2)).sum()
                },
                &bounds,
                &cfg,
            )
            .unwrap();
            prop_assert!(res.best.iter().zip(&bounds).all(|(v, (l, h))| v >= l && v <= h));
            prop_assert!(res.history.windows(2).all(|w| w[1].best_loss <= w[0].best_loss));
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    // Fixed seed, different worker counts.
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let cfg = DEConfig {
        max_generations: 40,
        ..Default::default()
    };
    let bounds = vec![(-5.0, 5.0); 7];
    let a = pool(1).install(|| differential_evolution(sphere, &bounds, &cfg).unwrap());
    let b = pool(4).install(|| differential_evolution(sphere, &bounds, &cfg).unwrap());
    ensure(a == b, "DE trajectory depends on the worker count")?;
    let pipe = Pipeline::new(&VesselTree::reference(), &FluidProperties::default(), PipelineConfig::rest())
        .map_err(|e| e.to_string())?;
    let ra = pool(1).install(|| pipe.run(&rest, false)).map_err(|e| e.to_string())?;
    let rb = pool(4).install(|| pipe.run(&rest, false)).map_err(|e| e.to_string())?;
    ensure(ra.counts == rb.counts && ra.cip == rb.cip, "pipeline output depends on the worker count")?;

    budget(start, Duration::from_secs(300))?;
    Ok(format!("all properties hold ({:.1} s)", start.elapsed().as_secs_f64()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("parameter replay", rest_flow_replay),
        ("flow reserve", flow_reserve),
        ("stage-1 calibration", stage1),
        ("grid-search self-consistency", grid_self_consistency),
        ("sensitivity study 1", study_individual),
        ("sensitivity study 2", study_uniform),
        ("transport conservation and convergence", transport_convergence),
        ("invariant suite", invariants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = (k + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
