//! Weight search maximizing the evaluation value, plus the single-prompt and
//! uniform-weight baselines.
//!
//! The GA follows the classic generational loop: tournament selection, blend
//! crossover on consecutive pairs, per-gene Gaussian mutation, then clipping
//! back into `[0, 1]`. The best individual ever evaluated is tracked outside
//! the population.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{evaluate_with_window, Evaluation, FitConfig};
use crate::model::{
    Dataset, DatasetRole, ModelError, NormalizationParams, PromptSet, SigmoidFit, SimilaritySeries, WeightVector,
};
use crate::signal::{self, SignalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    /// GA-optimized weights.
    Opt,
    /// Best single prompt.
    One,
    /// Uniform weights.
    All,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Opt => "OPT",
            Mode::One => "ONE",
            Mode::All => "ALL",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "opt" => Ok(Mode::Opt),
            "one" => Ok(Mode::One),
            "all" => Ok(Mode::All),
            other => Err(format!("unknown mode {other:?}, expected opt, one or all")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    /// Probability that an individual is mutated.
    pub mutation_prob: f64,
    pub mutation_mean: f64,
    /// Standard deviation of the Gaussian perturbation.
    pub mutation_sigma: f64,
    /// Per-gene perturbation probability inside a mutated individual.
    /// `None` means `1 / N`.
    pub mutation_gene_prob: Option<f64>,
    pub tournament_size: usize,
    pub blend_alpha: f64,
    pub rng_seed: u64,
    /// Evaluate fitness on the rayon pool.
    pub parallel: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 300,
            generations: 300,
            crossover_prob: 0.5,
            mutation_prob: 0.2,
            mutation_mean: 0.0,
            mutation_sigma: 0.1f64.sqrt(),
            mutation_gene_prob: None,
            tournament_size: 5,
            blend_alpha: 0.5,
            rng_seed: 0,
            parallel: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let mut problems = Vec::new();
        if self.population_size == 0 {
            problems.push("population_size must be >= 1");
        }
        if self.generations == 0 {
            problems.push("generations must be >= 1");
        }
        if self.tournament_size == 0 {
            problems.push("tournament_size must be >= 1");
        }
        if !prob(self.crossover_prob) || !prob(self.mutation_prob) || !self.mutation_gene_prob.is_none_or(prob) {
            problems.push("probabilities must lie in [0, 1]");
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) || !self.mutation_mean.is_finite() {
            problems.push("mutation distribution must be finite with sigma >= 0");
        }
        if !(self.blend_alpha >= 0.0 && self.blend_alpha.is_finite()) {
            problems.push("blend_alpha must be >= 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OptimizeError::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("no prompts to optimize")]
    NoPrompts,
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset role is {0:?}; optimization needs an optimization dataset")]
    WrongRole(DatasetRole),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Fit(#[from] crate::fit::FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    /// Best E seen so far, including earlier generations.
    pub best: f64,
    /// Mean E of the current population.
    pub mean: f64,
    /// Best E in the current population.
    pub generation_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub mode: Mode,
    pub best_weights: WeightVector,
    pub best_fit: SigmoidFit,
    /// Frozen normalization for inference. Absent when the best weights
    /// produced a flat or degenerate signal.
    pub normalization: Option<NormalizationParams>,
    pub history: Vec<GenerationStats>,
    /// Every candidate scored zero.
    pub no_signal: bool,
    pub window_seconds: f64,
    pub fit_config: FitConfig,
    pub ga_config: Option<GaConfig>,
    pub evaluations: usize,
}

impl OptimizationResult {
    pub fn e_value(&self) -> f64 {
        self.best_fit.e_value
    }
}

/// View of a population handed to observers after each evaluation round.
/// Generation 0 is the initial population.
pub struct GenerationSnapshot<'a> {
    pub generation: usize,
    pub population: &'a [Vec<f64>],
    pub fitness: &'a [f64],
    pub best_ever: f64,
}

struct Problem<'a> {
    series: &'a SimilaritySeries,
    prompts: &'a PromptSet,
    fit: &'a FitConfig,
    window: usize,
}

impl Problem<'_> {
    fn evaluate(&self, weights: &[f64]) -> Evaluation {
        evaluate_with_window(self.series, self.prompts, weights, self.window, self.fit)
    }

    fn fitness(&self, weights: &[f64]) -> f64 {
        let e = self.evaluate(weights).e_value();
        if e.is_finite() && e > 0.0 {
            e
        } else {
            0.0
        }
    }

    fn fitness_batch(&self, genes: &[&[f64]], parallel: bool) -> Vec<f64> {
        if parallel {
            genes.par_iter().map(|g| self.fitness(g)).collect()
        } else {
            genes.iter().map(|g| self.fitness(g)).collect()
        }
    }
}

fn prepare<'a>(
    series: &'a SimilaritySeries,
    prompts: &'a PromptSet,
    fit: &'a FitConfig,
    window_seconds: f64,
) -> Result<Problem<'a>, OptimizeError> {
    if prompts.is_empty() || series.n_prompts() == 0 {
        return Err(OptimizeError::NoPrompts);
    }
    series.check_prompts(prompts)?;
    fit.validate()?;
    let window = signal::window_samples(window_seconds, series.sample_rate_hz())?;
    Ok(Problem {
        series,
        prompts,
        fit,
        window,
    })
}

/// Packs the winning weights and their evaluation into a result.
fn finish(
    problem: &Problem<'_>,
    mode: Mode,
    weights: Vec<f64>,
    history: Vec<GenerationStats>,
    window_seconds: f64,
    ga_config: Option<GaConfig>,
    evaluations: usize,
) -> OptimizationResult {
    let n = problem.prompts.len();
    let best_weights = WeightVector::new(weights).unwrap_or_else(|_| WeightVector::uniform(n));
    let evaluation = problem.evaluate(best_weights.as_slice());
    let no_signal = !(evaluation.e_value() > 0.0);
    OptimizationResult {
        mode,
        best_weights,
        best_fit: evaluation.fit,
        normalization: evaluation.normalization,
        history,
        no_signal,
        window_seconds,
        fit_config: *problem.fit,
        ga_config,
        evaluations,
    }
}

/// Runs the GA. See [`optimize_observed`] for a version that reports every
/// population.
pub fn optimize(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    ga: &GaConfig,
    fit: &FitConfig,
    window_seconds: f64,
) -> Result<OptimizationResult, OptimizeError> {
    optimize_observed(series, prompts, ga, fit, window_seconds, |_| {})
}

/// Like [`optimize`], but rejects datasets not tagged for optimization.
pub fn optimize_dataset(
    dataset: &Dataset,
    prompts: &PromptSet,
    ga: &GaConfig,
    fit: &FitConfig,
    window_seconds: f64,
) -> Result<OptimizationResult, OptimizeError> {
    if dataset.role != DatasetRole::Optimization {
        return Err(OptimizeError::WrongRole(dataset.role));
    }
    optimize(&dataset.series, prompts, ga, fit, window_seconds)
}

pub fn optimize_observed(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    ga: &GaConfig,
    fit: &FitConfig,
    window_seconds: f64,
    mut observer: impl FnMut(&GenerationSnapshot<'_>),
) -> Result<OptimizationResult, OptimizeError> {
    ga.validate()?;
    let problem = prepare(series, prompts, fit, window_seconds)?;
    let n = prompts.len();
    let gene_prob = ga.mutation_gene_prob.unwrap_or(1.0 / n as f64);
    let mutation = Normal::new(ga.mutation_mean, ga.mutation_sigma)
        .map_err(|e| OptimizeError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ga.rng_seed);

    let mut population: Vec<Vec<f64>> = (0..ga.population_size)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut fitness = problem.fitness_batch(&population.iter().map(Vec::as_slice).collect::<Vec<_>>(), ga.parallel);
    let mut evaluations = population.len();

    let (mut best_e, mut best_genes) = (f64::NEG_INFINITY, Vec::new());
    track_best(&population, &fitness, &mut best_e, &mut best_genes);
    observer(&GenerationSnapshot {
        generation: 0,
        population: &population,
        fitness: &fitness,
        best_ever: best_e,
    });

    let mut history = Vec::with_capacity(ga.generations);
    for generation in 1..=ga.generations {
        // selection
        let mut offspring: Vec<Vec<f64>> = Vec::with_capacity(population.len());
        let mut offspring_fitness: Vec<f64> = Vec::with_capacity(population.len());
        for _ in 0..population.len() {
            let winner = tournament(&fitness, ga.tournament_size, &mut rng);
            offspring.push(population[winner].clone());
            offspring_fitness.push(fitness[winner]);
        }
        let mut dirty = vec![false; offspring.len()];

        // crossover on consecutive pairs
        for i in (1..offspring.len()).step_by(2) {
            if rng.random::<f64>() < ga.crossover_prob {
                let (left, right) = offspring.split_at_mut(i);
                blend(&mut left[i - 1], &mut right[0], ga.blend_alpha, &mut rng);
                dirty[i - 1] = true;
                dirty[i] = true;
            }
        }
        // mutation
        for (genes, flag) in offspring.iter_mut().zip(dirty.iter_mut()) {
            if rng.random::<f64>() < ga.mutation_prob {
                for g in genes.iter_mut() {
                    if rng.random::<f64>() < gene_prob {
                        *g = (*g + mutation.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                }
                *flag = true;
            }
        }

        let changed: Vec<usize> = (0..offspring.len()).filter(|&i| dirty[i]).collect();
        let genes: Vec<&[f64]> = changed.iter().map(|&i| offspring[i].as_slice()).collect();
        let scores = problem.fitness_batch(&genes, ga.parallel);
        evaluations += scores.len();
        for (&i, s) in changed.iter().zip(scores) {
            offspring_fitness[i] = s;
        }

        population = offspring;
        fitness = offspring_fitness;
        track_best(&population, &fitness, &mut best_e, &mut best_genes);
        observer(&GenerationSnapshot {
            generation,
            population: &population,
            fitness: &fitness,
            best_ever: best_e,
        });
        history.push(GenerationStats {
            best: best_e,
            mean: fitness.iter().sum::<f64>() / fitness.len() as f64,
            generation_best: fitness.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        });
    }

    Ok(finish(&problem, Mode::Opt, best_genes, history, window_seconds, Some(*ga), evaluations))
}

fn track_best(population: &[Vec<f64>], fitness: &[f64], best_e: &mut f64, best_genes: &mut Vec<f64>) {
    for (genes, &f) in population.iter().zip(fitness) {
        if f > *best_e {
            *best_e = f;
            *best_genes = genes.clone();
        }
    }
}

/// Index of the fittest of `size` individuals drawn with replacement.
/// Ties go to the first drawn.
fn tournament(fitness: &[f64], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size {
        let challenger = rng.random_range(0..fitness.len());
        if fitness[challenger] > fitness[best] {
            best = challenger;
        }
    }
    best
}

/// Blend crossover: each gene pair is mixed with a factor drawn from
/// `[-alpha, 1 + alpha]`, then clipped into `[0, 1]`.
fn blend(a: &mut [f64], b: &mut [f64], alpha: f64, rng: &mut ChaCha8Rng) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let gamma = (1.0 + 2.0 * alpha) * rng.random::<f64>() - alpha;
        let (x0, y0) = (*x, *y);
        *x = ((1.0 - gamma) * x0 + gamma * y0).clamp(0.0, 1.0);
        *y = (gamma * x0 + (1.0 - gamma) * y0).clamp(0.0, 1.0);
    }
}

/// Scores every one-hot weight vector and keeps the best (lowest index on ties).
pub fn select_one(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    fit: &FitConfig,
    window_seconds: f64,
) -> Result<OptimizationResult, OptimizeError> {
    let problem = prepare(series, prompts, fit, window_seconds)?;
    let n = prompts.len();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| problem.fitness(WeightVector::one_hot(n, i).as_slice()))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let history = vec![GenerationStats {
        best: scores[best],
        mean: scores.iter().sum::<f64>() / n as f64,
        generation_best: scores[best],
    }];
    Ok(finish(
        &problem,
        Mode::One,
        WeightVector::one_hot(n, best).into(),
        history,
        window_seconds,
        None,
        n,
    ))
}

/// Scores the uniform weight vector.
pub fn select_all(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    fit: &FitConfig,
    window_seconds: f64,
) -> Result<OptimizationResult, OptimizeError> {
    let problem = prepare(series, prompts, fit, window_seconds)?;
    let n = prompts.len();
    let e = problem.fitness(&vec![1.0; n]);
    let history = vec![GenerationStats {
        best: e,
        mean: e,
        generation_best: e,
    }];
    Ok(finish(&problem, Mode::All, vec![1.0; n], history, window_seconds, None, 1))
}

/// Dispatches on `mode`; `ga` is only used for [`Mode::Opt`].
pub fn run_mode(
    mode: Mode,
    series: &SimilaritySeries,
    prompts: &PromptSet,
    ga: &GaConfig,
    fit: &FitConfig,
    window_seconds: f64,
) -> Result<OptimizationResult, OptimizeError> {
    match mode {
        Mode::Opt => optimize(series, prompts, ga, fit, window_seconds),
        Mode::One => select_one(series, prompts, fit, window_seconds),
        Mode::All => select_all(series, prompts, fit, window_seconds),
    }
}
