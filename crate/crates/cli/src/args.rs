use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use statefit::detector::DEFAULT_THRESHOLD;
use statefit::fit::{FitConfig, FitTarget};
use statefit::model::IngestMode;
use statefit::optimizer::{GaConfig, Mode};
use statefit::synth::{Pattern, SynthSpec};

/// Recognize when a continuous state change finishes, from per-frame
/// image-text similarities.
#[derive(Parser, Debug)]
#[command(name = "statefit", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic similarity file with a known change time.
    Synth(SynthArgs),
    /// Choose prompt weights on an optimization recording.
    Optimize(OptimizeArgs),
    /// Replay a file or watch standard input for the change.
    Detect(DetectArgs),
    /// Score a held-out recording against its annotation.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Change shape: i (slow ramp), ii (late), iii (early), iv (centered)
    #[arg(long, default_value = "iv")]
    pub pattern: Pattern,
    /// Number of frames T
    #[arg(long, default_value_t = 600)]
    pub samples: usize,
    #[arg(long, default_value_t = 10.0)]
    pub sample_rate: f64,
    /// Prompts that follow the change
    #[arg(long, default_value_t = 10)]
    pub informative: usize,
    /// Prompts that carry only noise
    #[arg(long, default_value_t = 40)]
    pub noise: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sd: f64,
    /// Slope in 1/sample; defaults to the pattern's
    #[arg(long)]
    pub true_alpha: Option<f64>,
    /// Center as a sample index; defaults to the pattern's
    #[arg(long)]
    pub true_beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Similarity file to write
    #[arg(long, short)]
    pub output: PathBuf,
    /// Annotation file (t_data) to write
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    /// Prompt file to write
    #[arg(long)]
    pub prompts_out: Option<PathBuf>,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            pattern: self.pattern,
            samples: self.samples,
            sample_rate_hz: self.sample_rate,
            n_informative: self.informative,
            n_noise: self.noise,
            noise_sd: self.noise_sd,
            true_alpha: self.true_alpha,
            true_beta: self.true_beta,
            rng_seed: self.seed,
        }
    }
}

/// Sigmoid fit settings. Unset flags keep the library defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct FitArgs {
    /// Starting slope [default: 0.1]
    #[arg(long)]
    pub alpha_init: Option<f64>,
    /// Starting center as a fraction of T [default: 0.5]
    #[arg(long)]
    pub beta_init_fraction: Option<f64>,
    /// [default: 200]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Relative step size that counts as converged [default: 1e-10]
    #[arg(long)]
    pub residual_tolerance: Option<f64>,
    /// Lower bound on sigma inside E [default: 1e-6]
    #[arg(long)]
    pub sigma_floor: Option<f64>,
    /// Fit the normalized average or the normalized raw aggregate [default: averaged]
    #[arg(long)]
    pub fit_target: Option<FitTarget>,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        let d = FitConfig::default();
        FitConfig {
            alpha_init: self.alpha_init.unwrap_or(d.alpha_init),
            beta_init_fraction: self.beta_init_fraction.unwrap_or(d.beta_init_fraction),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            residual_tolerance: self.residual_tolerance.unwrap_or(d.residual_tolerance),
            sigma_floor: self.sigma_floor.unwrap_or(d.sigma_floor),
            target: self.fit_target.unwrap_or(d.target),
        }
    }
}

/// Genetic search settings. Unset flags keep the library defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct GaArgs {
    /// [default: 300]
    #[arg(long)]
    pub population: Option<usize>,
    /// [default: 300]
    #[arg(long)]
    pub generations: Option<usize>,
    /// Pair crossover probability [default: 0.5]
    #[arg(long)]
    pub crossover_prob: Option<f64>,
    /// Individual mutation probability [default: 0.2]
    #[arg(long)]
    pub mutation_prob: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub mutation_mean: Option<f64>,
    /// [default: sqrt(0.1)]
    #[arg(long)]
    pub mutation_sigma: Option<f64>,
    /// Per-gene mutation probability [default: 1/N]
    #[arg(long)]
    pub mutation_gene_prob: Option<f64>,
    /// [default: 5]
    #[arg(long)]
    pub tournament_size: Option<usize>,
    /// [default: 0.5]
    #[arg(long)]
    pub blend_alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate fitness on one thread
    #[arg(long)]
    pub serial: bool,
}

impl GaArgs {
    pub fn config(&self) -> GaConfig {
        let d = GaConfig::default();
        GaConfig {
            population_size: self.population.unwrap_or(d.population_size),
            generations: self.generations.unwrap_or(d.generations),
            crossover_prob: self.crossover_prob.unwrap_or(d.crossover_prob),
            mutation_prob: self.mutation_prob.unwrap_or(d.mutation_prob),
            mutation_mean: self.mutation_mean.unwrap_or(d.mutation_mean),
            mutation_sigma: self.mutation_sigma.unwrap_or(d.mutation_sigma),
            mutation_gene_prob: self.mutation_gene_prob.or(d.mutation_gene_prob),
            tournament_size: self.tournament_size.unwrap_or(d.tournament_size),
            blend_alpha: self.blend_alpha.unwrap_or(d.blend_alpha),
            rng_seed: self.seed,
            parallel: !self.serial,
        }
    }
}

#[derive(Args, Debug, Clone, Copy, Default)]
pub struct IngestArgs {
    /// Clamp out-of-range similarities to [-1, 1] instead of rejecting the file
    #[arg(long)]
    pub lenient: bool,
}

impl IngestArgs {
    pub fn mode(&self) -> IngestMode {
        if self.lenient {
            IngestMode::Lenient
        } else {
            IngestMode::Strict
        }
    }
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// Similarity file of the optimization recording
    #[arg(long, short)]
    pub input: PathBuf,
    /// Prompt file; must match the prompts in the similarity header
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value = "opt")]
    pub mode: Mode,
    /// Moving-average window
    #[arg(long, default_value_t = 3.0)]
    pub window_seconds: f64,
    /// Threshold for the detected column of the trace
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Weights artifact to write
    #[arg(long, short)]
    pub output: PathBuf,
    /// Trace CSV (time, raw, average, sigmoid, detected)
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub ga: GaArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub ingest: IngestArgs,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Weights artifact from `optimize`
    #[arg(long, short)]
    pub weights: PathBuf,
    /// Similarity file to replay
    #[arg(long, short, conflicts_with = "stream", required_unless_present = "stream")]
    pub input: Option<PathBuf>,
    /// Read rows from standard input and report the change as it happens
    #[arg(long)]
    pub stream: bool,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Annotation file; adds t_diff to the report
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    /// Report file; standard output when absent
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Trace CSV (file mode only)
    #[arg(long, conflicts_with = "stream")]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub ingest: IngestArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Weights artifact from `optimize`
    #[arg(long, short)]
    pub weights: PathBuf,
    /// Similarity file of the evaluation recording
    #[arg(long, short)]
    pub input: PathBuf,
    /// Annotation file with t_data; t_diff is omitted without it
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Report file; standard output when absent
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Trace CSV (time, raw, average, sigmoid, detected)
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub ingest: IngestArgs,
}
