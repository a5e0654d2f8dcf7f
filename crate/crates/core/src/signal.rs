//! Weighted aggregation of per-prompt similarities, trailing moving average
//! and min-max normalization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, NormalizationParams, PromptSet, SimilaritySeries, WeightVector};

/// Total weight below which the aggregate is undefined.
pub const WEIGHT_EPSILON: f64 = 1e-9;
/// Minimum max-min spread of the averaged signal.
pub const RANGE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("degenerate weights: total weight {0} is not above {WEIGHT_EPSILON}")]
    DegenerateWeights(f64),
    #[error("flat signal: range {0} is below {RANGE_EPSILON}")]
    FlatSignal(f64),
    #[error("empty signal")]
    Empty,
    #[error("signal too short: {0} samples")]
    TooShort(usize),
    #[error("invalid window: {0} s")]
    InvalidWindow(f64),
    #[error("weight count {weights} does not match prompt count {prompts}")]
    WeightCountMismatch { weights: usize, prompts: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-row weighted aggregate. Both the offline pipeline and the online
/// detector go through [`Aggregator::aggregate`], so they agree bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregator {
    coefficients: Vec<f64>,
    total_weight: f64,
}

impl Aggregator {
    /// Accepts raw weights so the optimizer can score arbitrary genes.
    pub fn new(prompts: &PromptSet, weights: &[f64]) -> Result<Self, SignalError> {
        if weights.len() != prompts.len() {
            return Err(SignalError::WeightCountMismatch {
                weights: weights.len(),
                prompts: prompts.len(),
            });
        }
        let total_weight: f64 = weights.iter().sum();
        if !(total_weight > WEIGHT_EPSILON) {
            return Err(SignalError::DegenerateWeights(total_weight));
        }
        let coefficients = prompts.signs().zip(weights).map(|(p, w)| p * w).collect();
        Ok(Aggregator {
            coefficients,
            total_weight,
        })
    }

    pub fn from_weights(prompts: &PromptSet, weights: &WeightVector) -> Result<Self, SignalError> {
        Self::new(prompts, weights.as_slice())
    }

    pub fn n_prompts(&self) -> usize {
        self.coefficients.len()
    }

    #[inline]
    pub fn aggregate(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.coefficients.len());
        let mut acc = 0.0;
        for (c, s) in self.coefficients.iter().zip(row) {
            acc += c * s;
        }
        acc / self.total_weight
    }
}

/// `sum_i p_i w_i s(t, i) / sum_i w_i` for every row of the series.
pub fn weighted_similarity(
    series: &SimilaritySeries,
    prompts: &PromptSet,
    weights: &[f64],
) -> Result<Vec<f64>, SignalError> {
    series.check_prompts(prompts)?;
    let agg = Aggregator::new(prompts, weights)?;
    Ok(series.rows().map(|r| agg.aggregate(r)).collect())
}

/// Converts a window length in seconds to samples, rounding half up.
pub fn window_samples(window_seconds: f64, sample_rate_hz: f64) -> Result<usize, SignalError> {
    if !(window_seconds.is_finite() && window_seconds >= 0.0) {
        return Err(SignalError::InvalidWindow(window_seconds));
    }
    Ok((window_seconds * sample_rate_hz + 0.5).floor() as usize)
}

/// Causal moving average over the last `window` samples. Until `window`
/// samples have been seen it averages everything seen so far. A window of 0
/// passes values through unchanged.
#[derive(Debug, Clone)]
pub struct TrailingMean {
    window: usize,
    buffer: VecDeque<f64>,
}

impl TrailingMean {
    pub fn new(window: usize) -> Self {
        TrailingMean {
            window,
            buffer: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn push(&mut self, x: f64) -> f64 {
        if self.window == 0 {
            return x;
        }
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(x);
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.buffer {
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        // rounding can push the quotient an ulp outside the window range
        (sum / self.buffer.len() as f64).clamp(lo, hi)
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }
}

/// Trailing moving average with a window given in samples.
pub fn moving_average_samples(signal: &[f64], window: usize) -> Result<Vec<f64>, SignalError> {
    if signal.is_empty() {
        return Err(SignalError::Empty);
    }
    let mut mean = TrailingMean::new(window);
    Ok(signal.iter().map(|&x| mean.push(x)).collect())
}

/// Trailing moving average with a window given in seconds.
pub fn moving_average(signal: &[f64], window_seconds: f64, sample_rate_hz: f64) -> Result<Vec<f64>, SignalError> {
    moving_average_samples(signal, window_samples(window_seconds, sample_rate_hz)?)
}

pub fn compute_normalization(averaged: &[f64], window_samples: usize) -> Result<NormalizationParams, SignalError> {
    if averaged.len() < 2 {
        return Err(SignalError::TooShort(averaged.len()));
    }
    let (lo, hi) = averaged
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    if !(range >= RANGE_EPSILON) {
        return Err(SignalError::FlatSignal(range));
    }
    Ok(NormalizationParams::new(lo, hi, window_samples)?)
}

pub fn normalize(signal: &[f64], params: &NormalizationParams) -> Vec<f64> {
    signal.iter().map(|&x| params.apply(x)).collect()
}

/// Aggregate, averaged and normalized versions of one weighted signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSignal {
    pub raw: Vec<f64>,
    pub averaged: Vec<f64>,
    /// `averaged` after normalization.
    pub normalized: Vec<f64>,
    pub window_samples: usize,
}

impl AggregateSignal {
    /// Builds the signal using externally supplied (frozen) normalization.
    pub fn with_normalization(raw: Vec<f64>, params: &NormalizationParams) -> Result<Self, SignalError> {
        let window = params.window_samples();
        let averaged = moving_average_samples(&raw, window)?;
        let normalized = normalize(&averaged, params);
        Ok(AggregateSignal {
            raw,
            averaged,
            normalized,
            window_samples: window,
        })
    }

    /// Builds the signal and derives normalization from its own averaged values.
    pub fn self_normalized(raw: Vec<f64>, window: usize) -> Result<(Self, NormalizationParams), SignalError> {
        let averaged = moving_average_samples(&raw, window)?;
        let params = compute_normalization(&averaged, window)?;
        let normalized = normalize(&averaged, &params);
        Ok((
            AggregateSignal {
                raw,
                averaged,
                normalized,
                window_samples: window,
            },
            params,
        ))
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// `raw` after normalization.
    pub fn normalized_raw(&self, params: &NormalizationParams) -> Vec<f64> {
        normalize(&self.raw, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IngestMode, RawPrompt};
    use proptest::prelude::*;

    fn prompts(polarities: &[i64]) -> PromptSet {
        PromptSet::validate(
            polarities
                .iter()
                .enumerate()
                .map(|(i, &p)| RawPrompt {
                    text: format!("prompt {i}"),
                    polarity: p,
                })
                .collect(),
        )
        .unwrap()
    }

    fn series(rows: Vec<Vec<f64>>) -> SimilaritySeries {
        SimilaritySeries::validate(rows, 10.0, None, IngestMode::Strict).unwrap()
    }

    #[test]
    fn single_prompt_identity() {
        let s = series(vec![vec![0.3]; 4]);
        let a = weighted_similarity(&s, &prompts(&[1]), &[1.0]).unwrap();
        assert_eq!(a, vec![0.3; 4]);
    }

    #[test]
    fn antonym_pair() {
        let s = series(vec![vec![0.3, 0.1]; 2]);
        let a = weighted_similarity(&s, &prompts(&[1, -1]), &[1.0, 1.0]).unwrap();
        for v in a {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn fractional_weights_match_direct_sum() {
        let s = series(vec![vec![0.4, 0.8]; 2]);
        let a = weighted_similarity(&s, &prompts(&[1, 1]), &[0.5, 0.25]).unwrap();
        // (0.5*0.4 + 0.25*0.8) / 0.75
        let oracle = (0.5 * 0.4 + 0.25 * 0.8) / (0.5 + 0.25);
        assert!((a[0] - oracle).abs() < 1e-15);
        assert!((a[0] - 0.533_333_333_333_333_3).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_rejected() {
        let s = series(vec![vec![0.4, 0.8]; 2]);
        let err = weighted_similarity(&s, &prompts(&[1, 1]), &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, SignalError::DegenerateWeights(_)));
        let err = weighted_similarity(&s, &prompts(&[1, 1]), &[1e-10, 0.0]).unwrap_err();
        assert!(matches!(err, SignalError::DegenerateWeights(_)));
    }

    #[test]
    fn window_rounding() {
        assert_eq!(window_samples(3.0, 10.0).unwrap(), 30);
        assert_eq!(window_samples(0.25, 10.0).unwrap(), 3);
        assert_eq!(window_samples(0.24, 10.0).unwrap(), 2);
        assert_eq!(window_samples(0.0, 10.0).unwrap(), 0);
        assert!(window_samples(-1.0, 10.0).is_err());
    }

    #[test]
    fn trailing_average_hand_computed() {
        let out = moving_average_samples(&[0.0, 0.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.5, 1.0]);
        // growing window during warm-up
        let out = moving_average_samples(&[3.0, 0.0, 0.0, 3.0], 3).unwrap();
        assert_eq!(out, vec![3.0, 1.5, 1.0, 1.0]);
    }

    #[test]
    fn moving_average_errors_on_empty() {
        assert!(matches!(moving_average(&[], 3.0, 10.0), Err(SignalError::Empty)));
    }

    #[test]
    fn normalization_extremes() {
        let p = compute_normalization(&[0.2, 0.4, 0.6], 0).unwrap();
        assert_eq!((p.a_min(), p.a_max()), (0.2, 0.6));
        let n = normalize(&[0.2, 0.4, 0.6, 0.8], &p);
        assert!((n[1] - 0.5).abs() < 1e-15);
        assert_eq!(n[0], 0.0);
        assert_eq!(n[2], 1.0);
        // unclamped beyond the frozen range
        assert!(n[3] > 1.0);

        assert!(matches!(
            compute_normalization(&[0.3; 10], 0),
            Err(SignalError::FlatSignal(_))
        ));
    }

    #[test]
    fn sigmoid_shaped_series_extremes_are_plateaus() {
        let raw: Vec<f64> = (1..=600)
            .map(|t| 0.1 + 0.3 / (1.0 + (-0.05 * (t as f64 - 300.0)).exp()))
            .collect();
        let avg = moving_average_samples(&raw, 30).unwrap();
        let p = compute_normalization(&avg, 30).unwrap();
        assert!((p.a_min() - 0.1).abs() < 1e-5, "{}", p.a_min());
        assert!((p.a_max() - 0.4).abs() < 1e-5, "{}", p.a_max());
    }

    proptest! {
        #[test]
        fn scale_invariance(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..20),
            weights in prop::collection::vec(0.01f64..1.0, 4),
            c in 0.01f64..10.0,
        ) {
            let p = prompts(&[1, -1, 1, -1]);
            let s = series(rows);
            let base = weighted_similarity(&s, &p, &weights).unwrap();
            let scaled_w: Vec<f64> = weights.iter().map(|w| w * c).collect();
            let scaled = weighted_similarity(&s, &p, &scaled_w).unwrap();
            for (t, (a, b)) in base.iter().zip(&scaled).enumerate() {
                // relative to the magnitude of the summands, which bounds the rounding error
                let scale: f64 = s.row(t).iter().zip(&weights).map(|(x, w)| (x * w).abs()).sum::<f64>()
                    / weights.iter().sum::<f64>();
                prop_assert!((a - b).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
            }
        }

        #[test]
        fn polarity_antisymmetry(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..20),
            weights in prop::collection::vec(0.01f64..1.0, 3),
        ) {
            let p = prompts(&[1, -1, 1]);
            let s = series(rows);
            let a = weighted_similarity(&s, &p, &weights).unwrap();
            let b = weighted_similarity(&s, &p.flipped(), &weights).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(*x, -*y);
            }
        }

        #[test]
        fn self_normalization_spans_unit_interval(
            raw in prop::collection::vec(-1.0f64..1.0, 2..200),
            window in 0usize..40,
        ) {
            let avg = moving_average_samples(&raw, window).unwrap();
            if let Ok(p) = compute_normalization(&avg, window) {
                let n = normalize(&avg, &p);
                let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
        }

        #[test]
        fn moving_average_bounded(
            raw in prop::collection::vec(-1.0f64..1.0, 1..200),
            window in 0usize..40,
        ) {
            let avg = moving_average_samples(&raw, window).unwrap();
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(avg.iter().all(|&x| x >= lo && x <= hi));
            if window <= 1 {
                prop_assert_eq!(&avg, &raw);
            }
        }

        #[test]
        fn constant_signal_is_fixed_point(c in -1.0f64..1.0, len in 1usize..100, window in 0usize..40) {
            let avg = moving_average_samples(&vec![c; len], window).unwrap();
            prop_assert!(avg.iter().all(|&x| x == c));
        }
    }
}
