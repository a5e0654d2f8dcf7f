//! Threshold-crossing change detection on the normalized moving average.
//!
//! [`Detector`] is the streaming form; [`evaluate_detection`] replays a
//! precomputed trace offline. Both use the same aggregation, averaging and
//! normalization code, so they report the same crossing sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DetectionReport, ModelError, NormalizationParams, PromptSet, SimilaritySeries, TracePoint, WeightVector};
use crate::optimizer::OptimizationResult;
use crate::signal::{AggregateSignal, Aggregator, SignalError, TrailingMean};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("row has {found} values, expected {expected}")]
    RowLength { expected: usize, found: usize },
    #[error("optimization result has no normalization (no signal was found)")]
    MissingNormalization,
    #[error("times ({times}) and signal ({signal}) differ in length")]
    TimeLength { times: usize, signal: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Emitted once, on the first sample whose normalized average exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeDetected {
    pub t_detected: f64,
    /// Zero-based index of the sample that fired.
    pub sample: usize,
    pub value: f64,
}

/// Values computed for one streamed sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub raw: f64,
    pub average: f64,
    pub normalized: f64,
    pub event: Option<ChangeDetected>,
}

/// Online detector for one stream. Not shared between streams.
#[derive(Debug, Clone)]
pub struct Detector {
    prompts: PromptSet,
    weights: WeightVector,
    normalization: NormalizationParams,
    aggregator: Aggregator,
    mean: TrailingMean,
    threshold: f64,
    fired: bool,
    samples_seen: usize,
}

impl Detector {
    pub fn new(
        prompts: PromptSet,
        weights: WeightVector,
        normalization: NormalizationParams,
        threshold: f64,
    ) -> Result<Self, DetectError> {
        let aggregator = Aggregator::from_weights(&prompts, &weights)?;
        Ok(Detector {
            mean: TrailingMean::new(normalization.window_samples()),
            prompts,
            weights,
            normalization,
            aggregator,
            threshold,
            fired: false,
            samples_seen: 0,
        })
    }

    /// Detector with the weights and frozen normalization of an optimization run.
    pub fn from_result(prompts: PromptSet, result: &OptimizationResult, threshold: f64) -> Result<Self, DetectError> {
        let normalization = result.normalization.ok_or(DetectError::MissingNormalization)?;
        Self::new(prompts, result.best_weights.clone(), normalization, threshold)
    }

    pub fn step(&mut self, row: &[f64], time: f64) -> Result<StepOutput, DetectError> {
        if row.len() != self.aggregator.n_prompts() {
            return Err(DetectError::RowLength {
                expected: self.aggregator.n_prompts(),
                found: row.len(),
            });
        }
        let raw = self.aggregator.aggregate(row);
        let average = self.mean.push(raw);
        let normalized = self.normalization.apply(average);
        let sample = self.samples_seen;
        self.samples_seen += 1;
        let event = if !self.fired && normalized > self.threshold {
            self.fired = true;
            Some(ChangeDetected {
                t_detected: time,
                sample,
                value: normalized,
            })
        } else {
            None
        };
        Ok(StepOutput {
            raw,
            average,
            normalized,
            event,
        })
    }

    pub fn reset(&mut self) {
        self.mean.reset();
        self.fired = false;
        self.samples_seen = 0;
    }

    pub fn fired(&self) -> bool {
        self.fired
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    /// Number of raw values currently held for the moving average.
    pub fn buffered(&self) -> usize {
        self.mean.len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn normalization(&self) -> &NormalizationParams {
        &self.normalization
    }
}

/// Offline replay: first time the normalized average strictly exceeds `threshold`.
pub fn evaluate_detection(
    signal: &AggregateSignal,
    normalization: &NormalizationParams,
    times: &[f64],
    t_data: Option<f64>,
    threshold: f64,
) -> Result<DetectionReport, DetectError> {
    if times.len() != signal.len() {
        return Err(DetectError::TimeLength {
            times: times.len(),
            signal: signal.len(),
        });
    }
    let t_detected = signal
        .normalized
        .iter()
        .position(|&v| v > threshold)
        .map(|k| times[k]);
    let trace = times
        .iter()
        .zip(&signal.raw)
        .zip(&signal.normalized)
        .map(|((&time, &raw), &average)| TracePoint {
            time,
            raw: normalization.apply(raw),
            average,
        })
        .collect();
    Ok(DetectionReport::new(t_detected, t_data, threshold, trace))
}

/// Aggregates a whole series with frozen normalization and replays detection.
pub fn detect_series(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    weights: &WeightVector,
    normalization: &NormalizationParams,
    t_data: Option<f64>,
    threshold: f64,
) -> Result<(DetectionReport, AggregateSignal), DetectError> {
    series.check_prompts(prompts)?;
    let aggregator = Aggregator::from_weights(prompts, weights)?;
    let raw = series.rows().map(|r| aggregator.aggregate(r)).collect();
    let signal = AggregateSignal::with_normalization(raw, normalization)?;
    let report = evaluate_detection(&signal, normalization, &series.times(), t_data, threshold)?;
    Ok((report, signal))
}
