//! Two-parameter logistic fit and the evaluation value built on it.
//!
//! The model is `f(t) = 1 / (1 + exp(-alpha (t - beta)))` over sample indices
//! `t = 1..=T`, fitted by damped Gauss-Newton (Levenberg-Marquardt with
//! Marquardt diagonal scaling). Steps are projected onto `alpha >= 0`,
//! `beta >= 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NormalizationParams, PromptSet, SigmoidFit, SimilaritySeries};
use crate::signal::{self, AggregateSignal, Aggregator, SignalError};

/// Exponent magnitude at which the logistic saturates.
const EXPONENT_CLAMP: f64 = 500.0;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;
const SSE_SLACK: f64 = 1e-13;

/// Which version of the aggregate the sigmoid is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitTarget {
    /// Normalized moving average.
    #[default]
    Averaged,
    /// Normalized raw aggregate (normalization still uses the average's extremes).
    Raw,
}

impl std::str::FromStr for FitTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "averaged" => Ok(FitTarget::Averaged),
            "raw" => Ok(FitTarget::Raw),
            other => Err(format!("unknown fit target {other:?}, expected averaged or raw")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub alpha_init: f64,
    /// Initial beta as a fraction of T.
    pub beta_init_fraction: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step changes every parameter by less than this, relatively.
    pub residual_tolerance: f64,
    /// Lower bound on sigma when computing E.
    pub sigma_floor: f64,
    pub target: FitTarget,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha_init: 0.1,
            beta_init_fraction: 0.5,
            max_iterations: 200,
            residual_tolerance: 1e-10,
            sigma_floor: 1e-6,
            target: FitTarget::Averaged,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let ok = self.alpha_init > 0.0
            && self.beta_init_fraction > 0.0
            && self.beta_init_fraction < 1.0
            && self.sigma_floor > 0.0
            && self.max_iterations > 0
            && self.residual_tolerance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(FitError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least 3 samples to fit, got {0}")]
    TooShort(usize),
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
}

#[inline]
pub fn sigmoid(t: f64, alpha: f64, beta: f64) -> f64 {
    let z = (-alpha * (t - beta)).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    1.0 / (1.0 + z.exp())
}

/// `[df/dalpha, df/dbeta]` at `t`.
#[inline]
pub fn sigmoid_gradient(t: f64, alpha: f64, beta: f64) -> [f64; 2] {
    let f = sigmoid(t, alpha, beta);
    let s = f * (1.0 - f);
    [(t - beta) * s, -alpha * s]
}

fn sum_squares(y: &[f64], alpha: f64, beta: f64) -> f64 {
    y.iter()
        .enumerate()
        .map(|(k, &v)| {
            let r = sigmoid((k + 1) as f64, alpha, beta) - v;
            r * r
        })
        .sum()
}

/// Least-squares fit of the logistic to `y`, with `y[k]` observed at `t = k + 1`.
pub fn fit_sigmoid(y: &[f64], config: &FitConfig) -> Result<SigmoidFit, FitError> {
    config.validate()?;
    let n = y.len();
    if n < 3 {
        return Err(FitError::TooShort(n));
    }
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(FitError::NonFinite(k));
    }

    let mut p = [config.alpha_init, config.beta_init_fraction * n as f64];
    let mut sse = sum_squares(y, p[0], p[1]);
    let mut lambda = LAMBDA_INIT;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < config.max_iterations {
        iterations += 1;
        if sse == 0.0 {
            converged = true;
            break;
        }
        // normal equations: a = J'J, g = J'r
        let (mut a00, mut a01, mut a11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, &v) in y.iter().enumerate() {
            let t = (k + 1) as f64;
            let f = sigmoid(t, p[0], p[1]);
            let s = f * (1.0 - f);
            let (j0, j1) = ((t - p[1]) * s, -p[0] * s);
            let r = f - v;
            a00 += j0 * j0;
            a01 += j0 * j1;
            a11 += j1 * j1;
            g0 += j0 * r;
            g1 += j1 * r;
        }
        let diag_floor = 1e-12 * a00.max(a11).max(1e-300);
        let (d0, d1) = (a00.max(diag_floor), a11.max(diag_floor));

        loop {
            let m00 = a00 + lambda * d0;
            let m11 = a11 + lambda * d1;
            let det = m00 * m11 - a01 * a01;
            if det.is_finite() && det > 0.0 {
                let step0 = (-g0 * m11 + g1 * a01) / det;
                let step1 = (-g1 * m00 + g0 * a01) / det;
                let candidate = [(p[0] + step0).max(0.0), (p[1] + step1).max(0.0)];
                let trial = sum_squares(y, candidate[0], candidate[1]);
                // near the minimum SSE differences drown in rounding; the
                // Gauss-Newton step itself is still accurate, so take it
                if trial < sse || (trial <= sse * (1.0 + SSE_SLACK) && candidate != p) {
                    let tol = config.residual_tolerance;
                    let small = (0..2).all(|i| (candidate[i] - p[i]).abs() <= tol * (candidate[i].abs() + tol));
                    p = candidate;
                    sse = trial;
                    lambda = (lambda / 10.0).max(1e-15);
                    if small {
                        converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // no descent direction left within the box: stationary point
                converged = true;
                break 'outer;
            }
        }
    }

    let sigma = (sse / n as f64).sqrt();
    if !converged {
        return Ok(SigmoidFit::failed(p[0], p[1], sigma, iterations));
    }
    let e_value = p[0] * p[1] / sigma.max(config.sigma_floor);
    Ok(SigmoidFit {
        alpha: p[0],
        beta: p[1],
        sigma,
        e_value: if e_value.is_finite() { e_value } else { 0.0 },
        converged,
        iterations,
    })
}

/// Why an evaluation scored zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroReason {
    DegenerateWeights,
    FlatSignal,
    FitFailed,
    NotConverged,
    InvalidInput(String),
}

/// Outcome of scoring one weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fit: SigmoidFit,
    pub normalization: Option<NormalizationParams>,
    pub signal: Option<AggregateSignal>,
    pub zero_reason: Option<ZeroReason>,
}

impl Evaluation {
    pub fn e_value(&self) -> f64 {
        self.fit.e_value
    }

    fn zero(reason: ZeroReason, signal: Option<AggregateSignal>, normalization: Option<NormalizationParams>) -> Self {
        Evaluation {
            fit: SigmoidFit::failed(0.0, 0.0, 0.0, 0),
            normalization,
            signal,
            zero_reason: Some(reason),
        }
    }
}

/// Aggregate -> moving average -> normalize -> fit. Stage failures become a
/// zero score with a reason instead of an error.
pub fn evaluate_weights(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    weights: &[f64],
    window_seconds: f64,
    config: &FitConfig,
) -> Evaluation {
    let window = match signal::window_samples(window_seconds, series.sample_rate_hz()) {
        Ok(w) => w,
        Err(e) => return Evaluation::zero(ZeroReason::InvalidInput(e.to_string()), None, None),
    };
    evaluate_with_window(series, prompts, weights, window, config)
}

pub(crate) fn evaluate_with_window(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    weights: &[f64],
    window: usize,
    config: &FitConfig,
) -> Evaluation {
    if let Err(e) = series.check_prompts(prompts) {
        return Evaluation::zero(ZeroReason::InvalidInput(e.to_string()), None, None);
    }
    let aggregator = match Aggregator::new(prompts, weights) {
        Ok(a) => a,
        Err(SignalError::DegenerateWeights(_)) => return Evaluation::zero(ZeroReason::DegenerateWeights, None, None),
        Err(e) => return Evaluation::zero(ZeroReason::InvalidInput(e.to_string()), None, None),
    };
    let raw: Vec<f64> = series.rows().map(|r| aggregator.aggregate(r)).collect();
    let (signal, params) = match AggregateSignal::self_normalized(raw, window) {
        Ok(v) => v,
        Err(SignalError::FlatSignal(_)) => return Evaluation::zero(ZeroReason::FlatSignal, None, None),
        Err(e) => return Evaluation::zero(ZeroReason::InvalidInput(e.to_string()), None, None),
    };
    let target = match config.target {
        FitTarget::Averaged => signal.normalized.clone(),
        FitTarget::Raw => signal.normalized_raw(&params),
    };
    match fit_sigmoid(&target, config) {
        Ok(fit) if fit.converged => Evaluation {
            fit,
            normalization: Some(params),
            signal: Some(signal),
            zero_reason: None,
        },
        Ok(fit) => Evaluation {
            fit,
            normalization: Some(params),
            signal: Some(signal),
            zero_reason: Some(ZeroReason::NotConverged),
        },
        Err(_) => Evaluation::zero(ZeroReason::FitFailed, Some(signal), Some(params)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IngestMode, RawPrompt};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn curve(n: usize, alpha: f64, beta: f64) -> Vec<f64> {
        (1..=n).map(|t| sigmoid(t as f64, alpha, beta)).collect()
    }

    #[test]
    fn sigmoid_values() {
        for alpha in [0.0, 0.1, 3.0] {
            assert_eq!(sigmoid(42.0, alpha, 42.0), 0.5);
        }
        for t in [-1e6, 0.0, 1e6] {
            assert_eq!(sigmoid(t, 0.0, 10.0), 0.5);
        }
        // 1 / (1 + e^-5)
        let expected = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((sigmoid(100.0, 0.1, 50.0) - expected).abs() < 1e-15);
        assert!((expected - 0.993_307_149_075_715_2).abs() < 1e-15);
        // saturation without overflow
        assert_eq!(sigmoid(1e308, 10.0, 0.0), 1.0);
        assert!(sigmoid(-1e308, 10.0, 0.0) >= 0.0);
        assert!(sigmoid(-1e308, 10.0, 0.0) < 1e-200);
    }

    #[test]
    fn sigmoid_monotone_in_t() {
        let mut prev = 0.0;
        for k in 0..1000 {
            let v = sigmoid(k as f64 * 0.3, 0.7, 120.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn recovers_exact_sigmoid() {
        let y = curve(100, 0.5, 50.0);
        let fit = fit_sigmoid(&y, &FitConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.alpha - 0.5).abs() < 1e-4, "{fit:?}");
        assert!((fit.beta - 50.0).abs() < 1e-4, "{fit:?}");
        assert!(fit.sigma < 1e-8, "{fit:?}");
        // sigma is floored, so E = alpha beta / floor
        assert!((fit.e_value - fit.alpha * fit.beta / 1e-6).abs() < 1e-6 * fit.e_value);
    }

    #[test]
    fn constant_input_scores_zero() {
        let fit = fit_sigmoid(&[0.5; 100], &FitConfig::default()).unwrap();
        assert!(fit.alpha >= 0.0 && fit.beta >= 0.0);
        assert!(fit.alpha < 1e-9 || !fit.converged, "{fit:?}");
        assert!(fit.e_value < 1e-9, "{fit:?}");
    }

    #[test]
    fn noisy_recovery_rate() {
        let n = 100;
        let (alpha, beta) = (0.2, 50.0);
        let clean = curve(n, alpha, beta);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let seeds = 40;
        let mut hits = 0;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
            let fit = fit_sigmoid(&y, &FitConfig::default()).unwrap();
            if fit.converged && (fit.alpha - alpha).abs() <= 0.2 * alpha && (fit.beta - beta).abs() <= 0.05 * n as f64 {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.95 * seeds as f64, "{hits}/{seeds}");
    }

    #[test]
    fn constraints_hold_on_decreasing_data() {
        // a falling curve pulls alpha negative; the box keeps it at zero
        let y: Vec<f64> = curve(80, 0.3, 40.0).into_iter().map(|v| 1.0 - v).collect();
        let fit = fit_sigmoid(&y, &FitConfig::default()).unwrap();
        assert!(fit.alpha >= 0.0 && fit.beta >= 0.0, "{fit:?}");
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let y = curve(200, 1.5, 30.0);
        let cfg = FitConfig {
            max_iterations: 1,
            ..FitConfig::default()
        };
        let fit = fit_sigmoid(&y, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.e_value, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(fit_sigmoid(&[0.1, 0.2], &FitConfig::default()), Err(FitError::TooShort(2))));
        assert!(matches!(
            fit_sigmoid(&[0.1, f64::NAN, 0.2], &FitConfig::default()),
            Err(FitError::NonFinite(1))
        ));
        let bad = FitConfig {
            sigma_floor: 0.0,
            ..FitConfig::default()
        };
        assert!(fit_sigmoid(&[0.1, 0.2, 0.3], &bad).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..100 {
            let t = rng.random_range(0.0..200.0);
            let alpha = rng.random_range(0.01..2.0);
            let beta = rng.random_range(0.0..200.0);
            let [da, db] = sigmoid_gradient(t, alpha, beta);
            let fa = (sigmoid(t, alpha + h, beta) - sigmoid(t, alpha - h, beta)) / (2.0 * h);
            let fb = (sigmoid(t, alpha, beta + h) - sigmoid(t, alpha, beta - h)) / (2.0 * h);
            // absolute floor for points deep in the saturated tails
            assert!((da - fa).abs() <= 1e-5 * da.abs().max(fa.abs()) + 1e-10, "{t} {alpha} {beta}");
            assert!((db - fb).abs() <= 1e-5 * db.abs().max(fb.abs()) + 1e-10, "{t} {alpha} {beta}");
        }
    }

    fn two_channel_series(seed: u64) -> (SimilaritySeries, PromptSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let rows: Vec<Vec<f64>> = (1..=300)
            .map(|t| {
                let informative = 0.1 + 0.3 * sigmoid(t as f64, 0.08, 180.0) + noise.sample(&mut rng);
                let junk = 0.25 + noise.sample(&mut rng);
                vec![informative, junk]
            })
            .collect();
        let series = SimilaritySeries::validate(rows, 10.0, None, IngestMode::Strict).unwrap();
        let prompts = PromptSet::validate(vec![
            RawPrompt { text: "changed".into(), polarity: 1 },
            RawPrompt { text: "noise".into(), polarity: 1 },
        ])
        .unwrap();
        (series, prompts)
    }

    #[test]
    fn informative_channel_beats_noise_channel() {
        let (series, prompts) = two_channel_series(1);
        let cfg = FitConfig::default();
        let good = evaluate_weights(&series, &prompts, &[1.0, 0.0], 3.0, &cfg);
        let bad = evaluate_weights(&series, &prompts, &[0.0, 1.0], 3.0, &cfg);
        assert!(good.e_value() > 0.0, "{:?}", good.zero_reason);
        assert!(good.e_value() >= 10.0 * bad.e_value(), "{} vs {}", good.e_value(), bad.e_value());

        // matches running the stages by hand
        let raw = signal::weighted_similarity(&series, &prompts, &[1.0, 0.0]).unwrap();
        let avg = signal::moving_average(&raw, 3.0, 10.0).unwrap();
        let params = signal::compute_normalization(&avg, 30).unwrap();
        let fit = fit_sigmoid(&signal::normalize(&avg, &params), &cfg).unwrap();
        assert_eq!(fit, good.fit);
        assert_eq!(Some(params), good.normalization);
    }

    #[test]
    fn zero_weights_score_zero() {
        let (series, prompts) = two_channel_series(2);
        let ev = evaluate_weights(&series, &prompts, &[0.0, 0.0], 3.0, &FitConfig::default());
        assert_eq!(ev.e_value(), 0.0);
        assert_eq!(ev.zero_reason, Some(ZeroReason::DegenerateWeights));
    }

    #[test]
    fn flat_series_scores_zero() {
        let series = SimilaritySeries::validate(vec![vec![0.2, 0.3]; 50], 10.0, None, IngestMode::Strict).unwrap();
        let (_, prompts) = two_channel_series(0);
        let ev = evaluate_weights(&series, &prompts, &[1.0, 1.0], 3.0, &FitConfig::default());
        assert_eq!(ev.e_value(), 0.0);
        assert_eq!(ev.zero_reason, Some(ZeroReason::FlatSignal));
    }

    #[test]
    fn raw_fit_target() {
        let (series, prompts) = two_channel_series(3);
        let cfg = FitConfig {
            target: FitTarget::Raw,
            ..FitConfig::default()
        };
        let raw_fit = evaluate_weights(&series, &prompts, &[1.0, 0.0], 3.0, &cfg);
        let avg_fit = evaluate_weights(&series, &prompts, &[1.0, 0.0], 3.0, &FitConfig::default());
        assert!(raw_fit.e_value() > 0.0);
        // residuals of the raw signal are noisier
        assert!(raw_fit.fit.sigma > avg_fit.fit.sigma);
    }
}
