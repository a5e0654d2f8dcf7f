//! Synthetic similarity series with a known state change.
//!
//! Informative prompts follow a logistic curve rescaled into the cosine band
//! `[0.1, 0.4]`, with Gaussian noise added. Prompts of negative polarity see
//! the mirrored curve. Noise prompts carry low-pass (AR(1)) noise around a
//! fixed per-prompt level inside the band.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::sigmoid;
use crate::model::{IngestMode, ModelError, Prompt, PromptSet, Polarity, SimilaritySeries};

pub const BAND_LOW: f64 = 0.1;
pub const BAND_HIGH: f64 = 0.4;
/// Fraction of the clean range at which the change counts as finished.
pub const CHANGE_END_FRACTION: f64 = 0.8;
const NOISE_AR: f64 = 0.9;

/// Shape of the state change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Changes steadily over the whole window.
    I,
    /// Flat, then changing until the end.
    Ii,
    /// Changing from the start, then settling.
    Iii,
    /// Flat, change, flat.
    Iv,
}

impl Pattern {
    /// Default `(alpha, beta)` for a series of `t` samples.
    pub fn default_params(self, t: usize) -> (f64, f64) {
        let t = t as f64;
        match self {
            Pattern::I => (4.0 / t, 0.5 * t),
            Pattern::Ii => (10.0 / t, 0.8 * t),
            Pattern::Iii => (10.0 / t, 0.2 * t),
            Pattern::Iv => (30.0 / t, 0.5 * t),
        }
    }
}

impl std::str::FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(Pattern::I),
            "ii" | "2" => Ok(Pattern::Ii),
            "iii" | "3" => Ok(Pattern::Iii),
            "iv" | "4" => Ok(Pattern::Iv),
            other => Err(format!("unknown pattern {other:?}, expected i, ii, iii or iv")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub pattern: Pattern,
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub n_informative: usize,
    pub n_noise: usize,
    pub noise_sd: f64,
    /// Overrides the pattern's default slope.
    pub true_alpha: Option<f64>,
    /// Overrides the pattern's default center, in sample indices.
    pub true_beta: Option<f64>,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            pattern: Pattern::Iv,
            samples: 600,
            sample_rate_hz: 10.0,
            n_informative: 10,
            n_noise: 40,
            noise_sd: 0.05,
            true_alpha: None,
            true_beta: None,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SynthSpec {
    /// Effective `(alpha, beta)`.
    pub fn params(&self) -> (f64, f64) {
        let (a, b) = self.pattern.default_params(self.samples);
        (self.true_alpha.unwrap_or(a), self.true_beta.unwrap_or(b))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut problems = Vec::new();
        if self.n_informative + self.n_noise == 0 {
            problems.push("need at least one prompt".to_string());
        }
        if self.samples < 3 {
            problems.push(format!("need at least 3 samples, got {}", self.samples));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            problems.push("sample rate must be positive".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            problems.push("noise_sd must be >= 0".into());
        }
        let (a, b) = self.params();
        if !(a > 0.0 && a.is_finite()) {
            problems.push(format!("alpha must be positive, got {a}"));
        }
        if !(b >= 0.0 && b.is_finite()) {
            problems.push(format!("beta must be >= 0, got {b}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub prompts: PromptSet,
    pub series: SimilaritySeries,
    /// Time the clean curve reaches 80% of its range, seconds.
    pub t_data: f64,
    /// Column indices of the informative prompts.
    pub informative: Vec<usize>,
    /// The noise-free change curve in `[0, 1]`, one value per sample.
    pub clean: Vec<f64>,
}

/// Clean curve rescaled so that it runs from exactly 0 to exactly 1 over the window.
pub fn clean_curve(samples: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let first = sigmoid(1.0, alpha, beta);
    let last = sigmoid(samples as f64, alpha, beta);
    (1..=samples)
        .map(|t| (sigmoid(t as f64, alpha, beta) - first) / (last - first))
        .collect()
}

/// Seconds at which the rescaled clean curve reaches `fraction` of its range,
/// with sample index 1 at t = 0.
pub fn change_time(samples: usize, sample_rate_hz: f64, alpha: f64, beta: f64, fraction: f64) -> f64 {
    let first = sigmoid(1.0, alpha, beta);
    let last = sigmoid(samples as f64, alpha, beta);
    let target = first + fraction * (last - first);
    let index = beta - (1.0 / target - 1.0).ln() / alpha;
    (index - 1.0) / sample_rate_hz
}

/// Baseline similarity of noise prompt `k`. It belongs to the prompt, so
/// recordings generated with different seeds share it.
pub fn noise_level(k: usize) -> f64 {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    0.15 + 0.2 * ((k as f64 + 1.0) * GOLDEN).fract()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let (alpha, beta) = spec.params();
    let n = spec.n_informative + spec.n_noise;
    let clean = clean_curve(spec.samples, alpha, beta);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let white = Normal::new(0.0, spec.noise_sd).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let innovation = Normal::new(0.0, spec.noise_sd * (1.0 - NOISE_AR * NOISE_AR).sqrt())
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let polarity = |k: usize| if k % 2 == 0 { Polarity::Changed } else { Polarity::Unchanged };
    let mut prompts = Vec::with_capacity(n);
    for k in 0..spec.n_informative {
        let text = match polarity(k) {
            Polarity::Changed => format!("changed state {k}"),
            Polarity::Unchanged => format!("unchanged state {k}"),
        };
        prompts.push(Prompt {
            text,
            polarity: polarity(k),
        });
    }
    for k in 0..spec.n_noise {
        prompts.push(Prompt {
            text: format!("unrelated prompt {k}"),
            polarity: polarity(k),
        });
    }
    let prompts = PromptSet::from_prompts(prompts)?;

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..spec.n_informative {
        let col = clean
            .iter()
            .map(|&g| {
                let v = match polarity(k) {
                    Polarity::Changed => BAND_LOW + (BAND_HIGH - BAND_LOW) * g,
                    Polarity::Unchanged => BAND_HIGH - (BAND_HIGH - BAND_LOW) * g,
                };
                v + white.sample(&mut rng)
            })
            .collect();
        columns.push(col);
    }
    for k in 0..spec.n_noise {
        let level = noise_level(k);
        let mut state = white.sample(&mut rng);
        let col = (0..spec.samples)
            .map(|_| {
                let v = level + state;
                state = NOISE_AR * state + innovation.sample(&mut rng);
                v
            })
            .collect();
        columns.push(col);
    }

    let rows: Vec<Vec<f64>> = (0..spec.samples)
        .map(|t| columns.iter().map(|c| c[t].clamp(-1.0, 1.0)).collect())
        .collect();
    let timestamps = (0..spec.samples).map(|t| t as f64 / spec.sample_rate_hz).collect();
    let series = SimilaritySeries::validate_for(&prompts, rows, spec.sample_rate_hz, Some(timestamps), IngestMode::Strict)?;
    Ok(SynthOutput {
        prompts,
        series,
        t_data: change_time(spec.samples, spec.sample_rate_hz, alpha, beta, CHANGE_END_FRACTION),
        informative: (0..spec.n_informative).collect(),
        clean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_sigmoid, FitConfig};

    #[test]
    fn centered_pattern_refits_to_truth() {
        let spec = SynthSpec {
            pattern: Pattern::Iv,
            samples: 600,
            n_informative: 1,
            n_noise: 0,
            noise_sd: 0.0,
            true_alpha: Some(0.05),
            true_beta: Some(300.0),
            ..SynthSpec::default()
        };
        let out = generate(&spec).unwrap();
        let col: Vec<f64> = out.series.column(0).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - BAND_LOW).abs() < 1e-12 && (hi - BAND_HIGH).abs() < 1e-12);
        let normalized: Vec<f64> = col.iter().map(|v| (v - lo) / (hi - lo)).collect();
        let fit = fit_sigmoid(&normalized, &FitConfig::default()).unwrap();
        assert!((fit.alpha - 0.05).abs() < 1e-4, "{fit:?}");
        assert!((fit.beta - 300.0).abs() < 1e-3, "{fit:?}");
    }

    #[test]
    fn early_pattern_changes_in_first_half() {
        let spec = SynthSpec {
            pattern: Pattern::Iii,
            ..SynthSpec::default()
        };
        let out = generate(&spec).unwrap();
        let duration = spec.samples as f64 / spec.sample_rate_hz;
        assert!(out.t_data < duration / 2.0, "{}", out.t_data);
    }

    #[test]
    fn change_time_matches_scan_of_clean_curve() {
        for pattern in [Pattern::I, Pattern::Ii, Pattern::Iii, Pattern::Iv] {
            let (a, b) = pattern.default_params(600);
            let clean = clean_curve(600, a, b);
            let t = change_time(600, 10.0, a, b, 0.8);
            let k = clean.iter().position(|&g| g >= 0.8).unwrap();
            // the continuous crossing lies between samples k-1 and k
            assert!(t <= k as f64 / 10.0 + 1e-9 && t > (k as f64 - 1.0) / 10.0, "{pattern:?} {t} {k}");
        }
    }

    #[test]
    fn polarity_mirrors_curves() {
        let spec = SynthSpec {
            n_informative: 2,
            n_noise: 2,
            noise_sd: 0.0,
            ..SynthSpec::default()
        };
        let out = generate(&spec).unwrap();
        assert_eq!(out.prompts.prompts()[1].polarity, Polarity::Unchanged);
        for row in out.series.rows() {
            assert!((row[0] + row[1] - (BAND_LOW + BAND_HIGH)).abs() < 1e-12);
        }
        assert_eq!(out.series.n_prompts(), 4);
        assert_eq!(out.informative, vec![0, 1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::default();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { rng_seed: 1, ..spec };
        assert_ne!(generate(&spec).unwrap().series, generate(&other).unwrap().series);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = SynthSpec {
            n_informative: 0,
            n_noise: 0,
            ..SynthSpec::default()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthSpec {
            noise_sd: -1.0,
            ..SynthSpec::default()
        };
        assert!(generate(&bad).is_err());
    }
}
