use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DEConfig {
    pub population: usize,
    pub max_generations: usize,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    pub seed: u64,
    /// Stop once the population loss std falls to this fraction of the mean.
    pub std_tol_fraction: f64,
}

impl Default for DEConfig {
    fn default() -> Self {
        Self {
            population: 49,
            max_generations: 150,
            f: 0.7,
            cr: 0.9,
            seed: 42,
            std_tol_fraction: 0.01,
        }
    }
}

impl DEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::InvalidInput("population must be at least 4".into()));
        }
        if !(self.f > 0.0 && self.f <= 2.0) {
            return Err(Error::InvalidInput(format!("F must lie in (0, 2], got {}", self.f)));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(Error::InvalidInput(format!("CR must lie in [0, 1], got {}", self.cr)));
        }
        if self.max_generations == 0 {
            return Err(Error::InvalidInput("max_generations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_loss: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DEResult {
    pub best: Vec<f64>,
    pub best_loss: f64,
    pub history: Vec<GenerationStats>,
    /// True when the spread criterion stopped the run.
    pub converged: bool,
    pub evaluations: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn stats(generation: usize, losses: &[f64]) -> GenerationStats {
    let n = losses.len() as f64;
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = losses.iter().sum::<f64>() / n;
    let std = if mean.is_finite() {
        (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt()
    } else {
        f64::INFINITY
    };
    GenerationStats {
        generation,
        best_loss: best,
        mean_loss: mean,
        std_loss: std,
    }
}

fn argmin(losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    best
}

/// Minimise `objective` over the box `bounds` with DE rand/1/bin.
///
/// Random draws happen on one thread in a fixed order; only the objective
/// calls run in parallel, so the trajectory depends on the seed alone.
/// Non-finite objective values count as infinite loss. The initial
/// population is generation 1.
pub fn differential_evolution<F>(objective: F, bounds: &[(f64, f64)], cfg: &DEConfig) -> Result<DEResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() {
        return Err(Error::InvalidInput("no design variables".into()));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::InvalidInput(format!("invalid bounds {bounds:?}")));
    }
    let dim = bounds.len();
    let np = cfg.population;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| lo + rng.gen::<f64>() * (hi - lo))
                .collect()
        })
        .collect();
    let eval = |xs: &[Vec<f64>]| -> Vec<f64> { xs.par_iter().map(|x| sanitize(objective(x))).collect() };
    let mut losses = eval(&pop);
    let mut evaluations = np;
    let mut history = vec![stats(1, &losses)];
    let done = |s: &GenerationStats| s.std_loss <= cfg.std_tol_fraction * s.mean_loss;
    let mut converged = done(&history[0]);

    let mut generation = 1;
    while !converged && generation < cfg.max_generations {
        generation += 1;
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = |exclude: &[usize]| loop {
                    let k = rng.gen_range(0..np);
                    if !exclude.contains(&k) {
                        break k;
                    }
                };
                let a = pick(&[i]);
                let b = pick(&[i, a]);
                let c = pick(&[i, a, b]);
                let j_rand = rng.gen_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let cross = rng.gen::<f64>() < cfg.cr || j == j_rand;
                        if cross {
                            let v = pop[a][j] + cfg.f * (pop[b][j] - pop[c][j]);
                            v.clamp(bounds[j].0, bounds[j].1)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_losses = eval(&trials);
        evaluations += np;
        for (i, (x, l)) in trials.into_iter().zip(trial_losses).enumerate() {
            if l <= losses[i] {
                pop[i] = x;
                losses[i] = l;
            }
        }
        let s = stats(generation, &losses);
        converged = done(&s);
        history.push(s);
    }

    let b = argmin(&losses);
    Ok(DEResult {
        best: pop[b].clone(),
        best_loss: losses[b],
        history,
        converged,
        evaluations,
    })
}
