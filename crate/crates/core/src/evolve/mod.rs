//! The evolutionary loop.
//!
//! Per generation: draw a batch from the fit partition (when batching is on),
//! build the error matrix of the population on it, select parents by
//! lexicase, breed one offspring per parent slot, fit and weight-tune the
//! offspring, then apply survival. The validation partition is only used for
//! logging and for picking the final individual.

mod nsga2;
mod variation;

pub use nsga2::{crowding_distance, dominates, non_dominated_fronts, nsga2_select, nsga2_survive, survival_objectives};
pub use variation::{
    crossover, crossover_with_kind, mutate, mutate_with_kind, CrossoverKind, MutationKind, VariationLimits,
    CROSSOVER_RETRIES,
};

use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;
use thiserror::Error;

use crate::data::{self, DataError, Dataset};
use crate::expr;
use crate::model::{self, Individual, ModelError, RidgeConfig, WeightTuning};
use crate::par::{self, Execution};
use crate::rng::{self, Rng};
use crate::selection::{self, ErrorMatrix, SelectionError, SelectionStrategy};

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid configuration: {field} {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SurvivalMode {
    /// Parents and offspring compete under NSGA-II.
    Nsga2,
    /// Offspring replace the population wholesale.
    OffspringReplacement,
}

impl std::str::FromStr for SurvivalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nsga2" => Ok(SurvivalMode::Nsga2),
            "offspring" | "offspring-replacement" => Ok(SurvivalMode::OffspringReplacement),
            other => Err(format!("unknown survival mode `{other}`")),
        }
    }
}

impl SurvivalMode {
    pub fn name(self) -> &'static str {
        match self {
            SurvivalMode::Nsga2 => "nsga2",
            SurvivalMode::OffspringReplacement => "offspring",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolutionConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub cross_rate: f64,
    pub max_depth: usize,
    pub max_dimensions: usize,
    pub backprop_iters: usize,
    pub learning_rate: f64,
    /// `None` evaluates on the whole fit partition every generation.
    pub batch_size: Option<usize>,
    pub survival_mode: SurvivalMode,
    pub strategy: SelectionStrategy,
    pub seed: u64,
    pub ridge: RidgeConfig,
    pub validation_fraction: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            pop_size: 100,
            generations: 100,
            cross_rate: 0.5,
            max_depth: 6,
            max_dimensions: 10,
            backprop_iters: 10,
            learning_rate: 0.1,
            batch_size: Some(200),
            survival_mode: SurvivalMode::Nsga2,
            strategy: SelectionStrategy::MadSemiDynamic,
            seed: 0,
            ridge: RidgeConfig::default(),
            validation_fraction: 0.25,
            execution: Execution::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |field, reason: &str| {
            Err(EvolveError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if self.pop_size < 2 {
            return bad("pop_size", "must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.cross_rate) {
            return bad("cross_rate", "must lie in [0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth", "must be at least 1");
        }
        if self.max_dimensions < 1 {
            return bad("max_dimensions", "must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size", "must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate", "must be positive");
        }
        if self.ridge.regularization_strength.is_nan() || self.ridge.regularization_strength < 0.0 {
            return bad("ridge_lambda", "must be non-negative");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction", "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One record per generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub min_validation_loss: f64,
    pub min_fit_loss: f64,
    pub median_cases_used: f64,
    pub mean_cases_used: f64,
    pub max_cases_used: usize,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Lowest validation MSE in the final population.
    pub best: Individual,
    pub best_validation_mse: f64,
    pub logs: Vec<GenerationLog>,
    pub population: Vec<Individual>,
    pub fit_samples: usize,
    pub validation_samples: usize,
}

fn fit(ind: &Individual, ds: &Dataset, cfg: &EvolutionConfig) -> Result<Individual, ModelError> {
    model::fit_individual_or_mean(ind, ds, &cfg.ridge)
}

fn validation_mse(ind: &Individual, val: &Dataset) -> f64 {
    model::predict(ind, val.features())
        .and_then(|p| model::mse(&p, val.targets().as_slice()))
        .ok()
        .filter(|v| !v.is_nan())
        .unwrap_or(f64::INFINITY)
}

fn initial_individual(rng: &mut Rng, cfg: &EvolutionConfig, n_features: usize) -> Individual {
    let depth = rng.random_range(1..=cfg.max_depth);
    let dims = rng.random_range(1..=cfg.max_dimensions.min(3));
    Individual::new((0..dims).map(|_| expr::random_tree(depth, n_features, rng)).collect())
}

fn collect<T, E>(items: Vec<Result<T, E>>) -> Result<Vec<T>, E> {
    items.into_iter().collect()
}

/// Runs the evolution on `train`.
pub fn run(config: &EvolutionConfig, train: &Dataset) -> Result<RunOutput, EvolveError> {
    run_with_observer(config, train, |_, _| {})
}

/// Like [`run`], calling `observe(generation, population)` after the initial
/// population is fitted (generation 0) and after every survival step.
pub fn run_with_observer<F>(config: &EvolutionConfig, train: &Dataset, mut observe: F) -> Result<RunOutput, EvolveError>
where
    F: FnMut(usize, &[Individual]),
{
    config.validate()?;
    let exec = config.execution;
    let split = data::validation_split(train, config.validation_fraction, config.seed)?;
    let (fit_data, val_data) = (split.first, split.second);
    let n = config.pop_size;
    let limits = VariationLimits {
        max_depth: config.max_depth,
        max_dimensions: config.max_dimensions,
        n_features: train.n_features(),
    };
    let tuning = WeightTuning {
        iters: config.backprop_iters,
        learning_rate: config.learning_rate,
        refit_head: true,
    };
    let mut rng = rng::slot_stream(config.seed, 1);

    let key = rng::stream_key(&mut rng);
    let mut population = collect(par::map_range(exec, n, |slot| {
        let mut r = rng::slot_stream(key, slot);
        let mut ind = fit(
            &initial_individual(&mut r, config, limits.n_features),
            &fit_data,
            config,
        )?;
        ind.id = slot as u64;
        Ok::<_, ModelError>(ind)
    }))?;
    let mut next_id = n as u64;
    observe(0, &population);

    let mut logs = Vec::with_capacity(config.generations);
    for generation in 1..=config.generations {
        let started = Instant::now();
        let batch = match config.batch_size {
            Some(size) => {
                let b = data::make_batch(&fit_data, size, &mut rng)?;
                population = collect(par::map_slice(exec, &population, |ind| fit(ind, &b, config)))?;
                Some(b)
            }
            None => None,
        };
        let eval = batch.as_ref().unwrap_or(&fit_data);

        let rows = collect(par::map_slice(exec, &population, |ind| {
            let mut ind = ind.clone();
            model::case_errors(&mut ind, eval).map(<[f64]>::to_vec)
        }))?;
        let errors = ErrorMatrix::from_rows(&rows)?;
        let (parents, stats) = selection::select_parents_with(&errors, n, config.strategy, &mut rng, exec);

        let key = rng::stream_key(&mut rng);
        let mut offspring = collect(par::map_range(exec, n, |slot| {
            let mut r = rng::slot_stream(key, slot);
            let p1 = &population[parents[slot]];
            let child = if r.random_bool(config.cross_rate) {
                let p2 = &population[parents[r.random_range(0..n)]];
                crossover(p1, p2, &limits, &mut r)
            } else {
                mutate(p1, &limits, &mut r)
            };
            let fitted = fit(&child, eval, config)?;
            Ok::<_, ModelError>(if tuning.iters > 0 {
                model::optimize_weights(&fitted, eval, &tuning, &config.ridge)
            } else {
                fitted
            })
        }))?;
        for child in &mut offspring {
            child.id = next_id;
            next_id += 1;
        }

        population = match config.survival_mode {
            SurvivalMode::Nsga2 => {
                let mut candidates = population;
                candidates.extend(offspring);
                nsga2_survive(candidates, n)
            }
            SurvivalMode::OffspringReplacement => offspring,
        };

        let val_losses = par::map_slice(exec, &population, |ind| validation_mse(ind, &val_data));
        let min_validation_loss = val_losses.iter().copied().fold(f64::INFINITY, f64::min);
        let min_fit_loss = population.iter().map(Individual::fitness).fold(f64::INFINITY, f64::min);
        logs.push(GenerationLog {
            generation,
            min_validation_loss,
            min_fit_loss,
            median_cases_used: stats.median_cases_used(),
            mean_cases_used: stats.mean_cases_used(),
            max_cases_used: stats.max_cases_used(),
            wall_time_ms: started.elapsed().as_millis() as u64,
        });
        observe(generation, &population);
    }

    let val_losses = par::map_slice(exec, &population, |ind| validation_mse(ind, &val_data));
    let (best_idx, best_validation_mse) = val_losses
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    Ok(RunOutput {
        best: population[best_idx].clone(),
        best_validation_mse,
        logs,
        population,
        fit_samples: fit_data.n_samples(),
        validation_samples: val_data.n_samples(),
    })
}
