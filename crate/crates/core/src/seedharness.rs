//! Seed optimization: train several seeds for a fraction of the budget, keep
//! training only the one that looks best on dev.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evalmetrics::spearman;

/// A model that can be trained one step at a time from a seed.
pub trait Trainable: Sync {
    type State: Send;

    fn init(&self, seed: u64) -> Self::State;
    fn step(&self, state: Self::State) -> Self::State;
    /// Development score; higher is better.
    fn eval_dev(&self, state: &Self::State) -> f64;
    fn total_steps(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeedError {
    #[error("early-stop fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("need at least one seed")]
    NoSeeds,
    #[error("training budget of {0} steps is below the minimum of 5")]
    TooFewSteps(usize),
    #[error("need at least 3 seeds for a rank correlation, got {0}")]
    TooFewSeeds(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Explicit(Vec<u64>),
    /// `base, base + 1, ...`
    Base(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRunConfig {
    pub num_seeds: usize,
    pub early_stop_fraction: f64,
    pub seeds: SeedSource,
}

impl Default for SeedRunConfig {
    fn default() -> Self {
        Self {
            num_seeds: 5,
            early_stop_fraction: 0.20,
            seeds: SeedSource::Base(0),
        }
    }
}

impl SeedRunConfig {
    pub fn resolve_seeds(&self) -> Result<Vec<u64>, SeedError> {
        if !(self.early_stop_fraction > 0.0 && self.early_stop_fraction <= 1.0) {
            return Err(SeedError::BadFraction(self.early_stop_fraction));
        }
        let seeds: Vec<u64> = match &self.seeds {
            SeedSource::Explicit(s) => s.iter().copied().take(self.num_seeds).collect(),
            SeedSource::Base(b) => (0..self.num_seeds as u64).map(|i| b + i).collect(),
        };
        if seeds.is_empty() {
            return Err(SeedError::NoSeeds);
        }
        Ok(seeds)
    }
}

/// `ceil(fraction * total)`, computed so exact products don't round up.
pub fn checkpoint_step(fraction: f64, total: usize) -> usize {
    let raw = fraction * total as f64;
    let nearest = raw.round();
    let steps = if (raw - nearest).abs() < 1e-9 {
        nearest
    } else {
        raw.ceil()
    };
    (steps as usize).clamp(1, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub partial_dev: f64,
    pub final_dev: Option<f64>,
    pub winner: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub best_seed: u64,
    pub final_dev: f64,
    pub partial_steps: usize,
    pub total_steps: usize,
    pub rows: Vec<SeedRow>,
}

fn train_to<T: Trainable>(model: &T, mut state: T::State, steps: usize) -> T::State {
    for _ in 0..steps {
        state = model.step(state);
    }
    state
}

/// Trains every seed to the checkpoint (in parallel), then finishes the one
/// with the best partial dev score; ties go to the smallest seed.
pub fn seed_optimize<T: Trainable>(
    model: &T,
    config: &SeedRunConfig,
) -> Result<SeedOutcome, SeedError> {
    let seeds = config.resolve_seeds()?;
    let total = model.total_steps();
    if total < 5 {
        return Err(SeedError::TooFewSteps(total));
    }
    let partial = checkpoint_step(config.early_stop_fraction, total);
    let mut runs: Vec<(u64, T::State, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let state = train_to(model, model.init(seed), partial);
            let dev = model.eval_dev(&state);
            (seed, state, dev)
        })
        .collect();

    let mut best = 0;
    for i in 1..runs.len() {
        let (seed, _, dev) = &runs[i];
        let (best_seed, _, best_dev) = &runs[best];
        if dev > best_dev || (dev == best_dev && seed < best_seed) {
            best = i;
        }
    }
    let mut rows: Vec<SeedRow> = runs
        .iter()
        .map(|(seed, _, dev)| SeedRow {
            seed: *seed,
            partial_dev: *dev,
            final_dev: None,
            winner: false,
        })
        .collect();
    let (best_seed, state, _) = runs.swap_remove(best);
    let state = train_to(model, state, total - partial);
    let final_dev = model.eval_dev(&state);
    rows[best].final_dev = Some(final_dev);
    rows[best].winner = true;
    Ok(SeedOutcome {
        best_seed,
        final_dev,
        partial_steps: partial,
        total_steps: total,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub fraction: f64,
    pub step: usize,
    /// `None` when dev scores are constant at this checkpoint.
    pub spearman: Option<f64>,
}

/// Trains every seed to completion and reports, per checkpoint fraction, the
/// rank correlation between dev scores at that checkpoint and at the end.
pub fn early_stop_correlation<T: Trainable>(
    model: &T,
    seeds: &[u64],
    fractions: &[f64],
) -> Result<Vec<CorrelationPoint>, SeedError> {
    if seeds.len() < 3 {
        return Err(SeedError::TooFewSeeds(seeds.len()));
    }
    if let Some(&bad) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(SeedError::BadFraction(bad));
    }
    let total = model.total_steps();
    let steps: Vec<usize> = fractions
        .iter()
        .map(|&f| checkpoint_step(f, total))
        .collect();
    let curves: Vec<(Vec<f64>, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut state = model.init(seed);
            let mut at = vec![0.0; steps.len()];
            for done in 1..=total {
                state = model.step(state);
                for (slot, &s) in at.iter_mut().zip(&steps) {
                    if s == done {
                        *slot = model.eval_dev(&state);
                    }
                }
            }
            (at, model.eval_dev(&state))
        })
        .collect();
    let finals: Vec<f64> = curves.iter().map(|c| c.1).collect();
    Ok(fractions
        .iter()
        .zip(&steps)
        .enumerate()
        .map(|(k, (&fraction, &step))| {
            let partial: Vec<f64> = curves.iter().map(|c| c.0[k]).collect();
            CorrelationPoint {
                fraction,
                step,
                spearman: spearman(&partial, &finals).ok(),
            }
        })
        .collect())
}
