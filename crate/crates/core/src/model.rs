//! Shared domain types.
//!
//! Everything here is immutable once constructed. Constructors validate the
//! invariants and report every violation they find rather than stopping at the
//! first one, so a malformed prompt file can be fixed in a single pass.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A single invariant violation found while validating input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Where the problem is (`prompt[3]`, `row 17`, ...).
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("validation failed: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("prompt count mismatch: prompt set has {expected}, series has {found}")]
    PromptCountMismatch { expected: usize, found: usize },
    #[error("prompt hash mismatch: expected {expected}, found {found}")]
    PromptHashMismatch { expected: String, found: String },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ModelError {
    fn single(location: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid(vec![Violation {
            location: location.into(),
            message: message.into(),
        }])
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ModelError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Whether a prompt describes the changed (+1) or unchanged (-1) state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Polarity {
    Changed,
    Unchanged,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Changed => 1.0,
            Polarity::Unchanged => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Changed => Polarity::Unchanged,
            Polarity::Unchanged => Polarity::Changed,
        }
    }
}

impl TryFrom<i64> for Polarity {
    type Error = String;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Polarity::Changed),
            -1 => Ok(Polarity::Unchanged),
            other => Err(format!("invalid polarity {other}, expected +1 or -1")),
        }
    }
}

impl From<Polarity> for i64 {
    fn from(p: Polarity) -> i64 {
        match p {
            Polarity::Changed => 1,
            Polarity::Unchanged => -1,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Changed => "+1",
            Polarity::Unchanged => "-1",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub polarity: Polarity,
}

/// A prompt before validation: polarity is still a raw integer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPrompt {
    pub text: String,
    pub polarity: i64,
}

/// Ordered prompts with polarities. Position in the set is the column index
/// of the similarity matrix and the index of the weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RawPrompt>", into = "Vec<RawPrompt>")]
pub struct PromptSet {
    prompts: Vec<Prompt>,
}

impl PromptSet {
    /// Validates raw prompts, preserving order.
    pub fn validate(raw: Vec<RawPrompt>) -> Result<Self, ModelError> {
        let mut violations = Vec::new();
        if raw.is_empty() {
            violations.push(Violation {
                location: "prompts".into(),
                message: "empty prompt set".into(),
            });
        }
        let mut seen = HashSet::new();
        let mut prompts = Vec::with_capacity(raw.len());
        for (i, p) in raw.into_iter().enumerate() {
            let location = format!("prompt[{i}]");
            if p.text.is_empty() {
                violations.push(Violation {
                    location: location.clone(),
                    message: "empty prompt text".into(),
                });
            }
            match Polarity::try_from(p.polarity) {
                Ok(polarity) => {
                    if !seen.insert((p.text.clone(), polarity)) {
                        violations.push(Violation {
                            location,
                            message: format!("duplicate prompt ({polarity}, {:?})", p.text),
                        });
                    }
                    prompts.push(Prompt { text: p.text, polarity });
                }
                Err(_) => violations.push(Violation {
                    location,
                    message: format!("invalid polarity {}", p.polarity),
                }),
            }
        }
        if violations.is_empty() {
            Ok(PromptSet { prompts })
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    pub fn from_prompts(prompts: Vec<Prompt>) -> Result<Self, ModelError> {
        Self::validate(prompts.into_iter().map(RawPrompt::from).collect())
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn signs(&self) -> impl Iterator<Item = f64> + '_ {
        self.prompts.iter().map(|p| p.polarity.sign())
    }

    /// The same prompts with every polarity flipped.
    pub fn flipped(&self) -> Self {
        PromptSet {
            prompts: self
                .prompts
                .iter()
                .map(|p| Prompt {
                    text: p.text.clone(),
                    polarity: p.polarity.flipped(),
                })
                .collect(),
        }
    }

    /// SHA-256 over `polarity\ttext\n` lines, hex encoded. Order-sensitive.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.prompts {
            hasher.update(p.polarity.to_string().as_bytes());
            hasher.update(b"\t");
            hasher.update(p.text.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

impl From<Prompt> for RawPrompt {
    fn from(p: Prompt) -> Self {
        RawPrompt {
            text: p.text,
            polarity: p.polarity.into(),
        }
    }
}

impl TryFrom<Vec<RawPrompt>> for PromptSet {
    type Error = ModelError;

    fn try_from(raw: Vec<RawPrompt>) -> Result<Self, Self::Error> {
        PromptSet::validate(raw)
    }
}

impl From<PromptSet> for Vec<RawPrompt> {
    fn from(set: PromptSet) -> Self {
        set.prompts.into_iter().map(RawPrompt::from).collect()
    }
}

/// How out-of-range similarities are treated on ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    /// Values outside [-1, 1] are errors.
    #[default]
    Strict,
    /// Values outside [-1, 1] are clamped and counted.
    Lenient,
}

/// T x N matrix of per-prompt cosine similarities, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySeries {
    values: Vec<f64>,
    n_prompts: usize,
    sample_rate_hz: f64,
    timestamps: Option<Vec<f64>>,
    #[serde(default)]
    clamped: usize,
}

impl SimilaritySeries {
    /// Validates a row-major matrix. `timestamps`, when given, must be
    /// strictly increasing with one entry per row.
    pub fn validate(
        rows: Vec<Vec<f64>>,
        sample_rate_hz: f64,
        timestamps: Option<Vec<f64>>,
        mode: IngestMode,
    ) -> Result<Self, ModelError> {
        let mut violations = Vec::new();
        let mut push = |location: String, message: String| {
            violations.push(Violation { location, message })
        };
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            push("sample_rate_hz".into(), format!("sample rate must be positive, got {sample_rate_hz}"));
        }
        if rows.len() < 2 {
            push("rows".into(), format!("T < 2 (got {} rows)", rows.len()));
        }
        let n = rows.first().map_or(0, Vec::len);
        if !rows.is_empty() && n == 0 {
            push("row 0".into(), "row has no columns".into());
        }
        let mut values = Vec::with_capacity(rows.len() * n);
        let mut clamped = 0;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                push(format!("row {t}"), format!("ragged row: {} columns, expected {n}", row.len()));
                continue;
            }
            for (i, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    push(format!("row {t}, column {i}"), format!("non-finite similarity {v}"));
                    values.push(0.0);
                } else if !(-1.0..=1.0).contains(&v) {
                    match mode {
                        IngestMode::Strict => {
                            push(format!("row {t}, column {i}"), format!("similarity out of range: {v}"));
                            values.push(v);
                        }
                        IngestMode::Lenient => {
                            clamped += 1;
                            values.push(v.clamp(-1.0, 1.0));
                        }
                    }
                } else {
                    values.push(v);
                }
            }
        }
        if let Some(ts) = &timestamps {
            if ts.len() != rows.len() {
                push("timestamps".into(), format!("{} timestamps for {} rows", ts.len(), rows.len()));
            }
            if let Some(k) = ts.windows(2).position(|w| !(w[1] > w[0])) {
                push(format!("timestamps[{}]", k + 1), "non-monotone timestamps".into());
            }
            if ts.iter().any(|t| !t.is_finite()) {
                push("timestamps".into(), "non-finite timestamp".into());
            }
        }
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        Ok(SimilaritySeries {
            values,
            n_prompts: n,
            sample_rate_hz,
            timestamps,
            clamped,
        })
    }

    /// Like [`validate`](Self::validate), additionally checking the column
    /// count against a prompt set.
    pub fn validate_for(
        prompts: &PromptSet,
        rows: Vec<Vec<f64>>,
        sample_rate_hz: f64,
        timestamps: Option<Vec<f64>>,
        mode: IngestMode,
    ) -> Result<Self, ModelError> {
        let series = Self::validate(rows, sample_rate_hz, timestamps, mode)?;
        series.check_prompts(prompts)?;
        Ok(series)
    }

    pub fn check_prompts(&self, prompts: &PromptSet) -> Result<(), ModelError> {
        if prompts.len() != self.n_prompts {
            return Err(ModelError::PromptCountMismatch {
                expected: prompts.len(),
                found: self.n_prompts,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_prompts.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    /// Number of values clamped during lenient ingest.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_prompts..(t + 1) * self.n_prompts]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_prompts)
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[i])
    }

    /// Time of row `t` in seconds: the stored timestamp, or `t / rate`.
    pub fn time(&self, t: usize) -> f64 {
        match &self.timestamps {
            Some(ts) => ts[t],
            None => t as f64 / self.sample_rate_hz,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|t| self.time(t)).collect()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> SimilaritySeries {
        let values = self
            .rows()
            .flat_map(|r| columns.iter().map(move |&c| r[c]))
            .collect();
        SimilaritySeries {
            values,
            n_prompts: columns.len(),
            sample_rate_hz: self.sample_rate_hz,
            timestamps: self.timestamps.clone(),
            clamped: 0,
        }
    }
}

/// Per-prompt weights in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, ModelError> {
        let mut violations = Vec::new();
        if weights.is_empty() {
            violations.push(Violation {
                location: "weights".into(),
                message: "empty weight vector".into(),
            });
        }
        for (i, w) in weights.iter().enumerate() {
            if !(0.0..=1.0).contains(w) {
                violations.push(Violation {
                    location: format!("weights[{i}]"),
                    message: format!("weight {w} outside [0, 1]"),
                });
            }
        }
        if violations.is_empty() && weights.iter().sum::<f64>() <= 0.0 {
            violations.push(Violation {
                location: "weights".into(),
                message: "all weights are zero".into(),
            });
        }
        if violations.is_empty() {
            Ok(WeightVector(weights))
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        WeightVector(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weights rescaled to sum to one, for reporting.
    pub fn normalized_to_unit_sum(&self) -> Vec<f64> {
        let total: f64 = self.0.iter().sum();
        self.0.iter().map(|w| w / total).collect()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = ModelError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        WeightVector::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Min/max of the moving-averaged aggregate on the optimization data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNormalization", into = "RawNormalization")]
pub struct NormalizationParams {
    a_min: f64,
    a_max: f64,
    window_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct RawNormalization {
    a_min: f64,
    a_max: f64,
    window_samples: usize,
}

impl NormalizationParams {
    pub fn new(a_min: f64, a_max: f64, window_samples: usize) -> Result<Self, ModelError> {
        if !(a_min.is_finite() && a_max.is_finite()) {
            return Err(ModelError::single("normalization", "non-finite bounds"));
        }
        if !(a_max > a_min) {
            return Err(ModelError::single(
                "normalization",
                format!("a_max ({a_max}) must exceed a_min ({a_min})"),
            ));
        }
        Ok(NormalizationParams {
            a_min,
            a_max,
            window_samples,
        })
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn window_samples(&self) -> usize {
        self.window_samples
    }

    /// `(x - a_min) / (a_max - a_min)`, unclamped.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.a_min) / (self.a_max - self.a_min)
    }
}

impl TryFrom<RawNormalization> for NormalizationParams {
    type Error = ModelError;

    fn try_from(r: RawNormalization) -> Result<Self, Self::Error> {
        NormalizationParams::new(r.a_min, r.a_max, r.window_samples)
    }
}

impl From<NormalizationParams> for RawNormalization {
    fn from(p: NormalizationParams) -> Self {
        RawNormalization {
            a_min: p.a_min,
            a_max: p.a_max,
            window_samples: p.window_samples,
        }
    }
}

/// Fitted sigmoid parameters and the resulting evaluation value.
///
/// `beta` is in sample-index units (first sample is index 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub alpha: f64,
    pub beta: f64,
    /// Root mean squared error of the fit.
    pub sigma: f64,
    pub e_value: f64,
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
}

impl SigmoidFit {
    /// A fit that scores zero.
    pub fn failed(alpha: f64, beta: f64, sigma: f64, iterations: usize) -> Self {
        SigmoidFit {
            alpha,
            beta,
            sigma,
            e_value: 0.0,
            converged: false,
            iterations,
        }
    }

    /// `beta` as seconds, with sample index 1 at t = 0.
    pub fn beta_seconds(&self, sample_rate_hz: f64) -> f64 {
        (self.beta - 1.0) / sample_rate_hz
    }
}

/// One row of a detection trace: time, normalized raw, normalized average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time: f64,
    pub raw: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub t_detected: Option<f64>,
    pub t_data: Option<f64>,
    pub t_diff: Option<f64>,
    pub threshold: f64,
    pub trace: Vec<TracePoint>,
}

impl DetectionReport {
    /// Builds a report, deriving `t_diff` from the two times.
    pub fn new(t_detected: Option<f64>, t_data: Option<f64>, threshold: f64, trace: Vec<TracePoint>) -> Self {
        let t_diff = match (t_detected, t_data) {
            (Some(d), Some(a)) => Some((d - a).abs()),
            _ => None,
        };
        DetectionReport {
            t_detected,
            t_data,
            t_diff,
            threshold,
            trace,
        }
    }

    pub fn detected(&self) -> bool {
        self.t_detected.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Optimization,
    Evaluation,
}

/// A similarity series tagged with its role and optional annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub role: DatasetRole,
    pub series: SimilaritySeries,
    /// Annotated time of the state change, seconds.
    pub t_data: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str, polarity: i64) -> RawPrompt {
        RawPrompt {
            text: text.into(),
            polarity,
        }
    }

    #[test]
    fn minimal_prompt_set() {
        let set = PromptSet::validate(vec![raw("boiled water", 1), raw("unboiled water", -1)]).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.signs().collect::<Vec<_>>(), vec![1.0, -1.0]);
    }

    #[test]
    fn fifty_prompts_keep_file_order() {
        let articles = ["a", "the", "this", "that", ""];
        let states = [("boiled", 1), ("unboiled", -1), ("boiling", 1), ("not boiling", -1), ("bubbling", 1)];
        let mut prompts = Vec::new();
        for a in articles {
            for (s, p) in states {
                prompts.push(raw(&format!("{a} {s} water").trim().to_string(), p));
                prompts.push(raw(&format!("water that is {s} in {a} pot"), p));
            }
        }
        let expected: Vec<_> = prompts.iter().map(|p| p.text.clone()).collect();
        let set = PromptSet::validate(prompts).unwrap();
        assert_eq!(set.len(), 50);
        let got: Vec<_> = set.prompts().iter().map(|p| p.text.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn rejects_bad_prompts() {
        let err = PromptSet::validate(vec![raw("x", 0)]).unwrap_err();
        assert!(err.to_string().contains("invalid polarity"), "{err}");

        let err = PromptSet::validate(vec![]).unwrap_err();
        assert!(err.to_string().contains("empty prompt set"));

        let err = PromptSet::validate(vec![raw("a", 1), raw("a", 1), raw("", -1)]).unwrap_err();
        assert_eq!(err.violations().len(), 2);

        // same text with opposite polarity is allowed
        assert!(PromptSet::validate(vec![raw("a", 1), raw("a", -1)]).is_ok());
    }

    #[test]
    fn hash_is_order_sensitive() {
        let a = PromptSet::validate(vec![raw("x", 1), raw("y", -1)]).unwrap();
        let b = PromptSet::validate(vec![raw("y", -1), raw("x", 1)]).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    #[test]
    fn series_validation() {
        let rows: Vec<Vec<f64>> = (0..100).map(|t| vec![0.01 * t as f64 - 0.5; 5]).collect();
        let s = SimilaritySeries::validate(rows, 10.0, None, IngestMode::Strict).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.n_prompts(), 5);
        assert_eq!(s.time(73), 7.3);

        let err = SimilaritySeries::validate(vec![vec![0.1]], 10.0, None, IngestMode::Strict).unwrap_err();
        assert!(err.to_string().contains("T < 2"));

        let err = SimilaritySeries::validate(vec![vec![0.1], vec![1.3]], 10.0, None, IngestMode::Strict)
            .unwrap_err();
        assert!(err.to_string().contains("similarity out of range"));

        let err = SimilaritySeries::validate(vec![vec![0.1, 0.2], vec![0.3]], 10.0, None, IngestMode::Strict)
            .unwrap_err();
        assert!(err.to_string().contains("ragged"));

        let err = SimilaritySeries::validate(
            vec![vec![0.1], vec![0.2], vec![0.3]],
            10.0,
            Some(vec![0.0, 0.2, 0.1]),
            IngestMode::Strict,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-monotone"));
    }

    #[test]
    fn lenient_ingest_clamps_and_counts() {
        let s = SimilaritySeries::validate(
            vec![vec![1.0000001, 0.2], vec![-1.5, 0.3]],
            10.0,
            None,
            IngestMode::Lenient,
        )
        .unwrap();
        assert_eq!(s.clamped_count(), 2);
        assert_eq!(s.row(0), &[1.0, 0.2]);
        assert_eq!(s.row(1), &[-1.0, 0.3]);
    }

    #[test]
    fn prompt_count_checked() {
        let set = PromptSet::validate(vec![raw("a", 1)]).unwrap();
        let err = SimilaritySeries::validate_for(&set, vec![vec![0.1, 0.2]; 3], 10.0, None, IngestMode::Strict)
            .unwrap_err();
        assert!(matches!(err, ModelError::PromptCountMismatch { expected: 1, found: 2 }));
    }

    #[test]
    fn weight_vector_bounds() {
        assert!(WeightVector::new(vec![0.0, 1.0, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.0, 0.0]).is_err());
        assert!(WeightVector::new(vec![1.2]).is_err());
        assert!(WeightVector::new(vec![f64::NAN]).is_err());
        assert_eq!(WeightVector::one_hot(3, 1).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn normalization_rejects_degenerate_range() {
        assert!(NormalizationParams::new(0.3, 0.3, 0).is_err());
        assert!(NormalizationParams::new(0.4, 0.3, 0).is_err());
        let p = NormalizationParams::new(0.2, 0.6, 30).unwrap();
        assert_eq!(p.apply(0.2), 0.0);
        assert_eq!(p.apply(0.6), 1.0);
    }

    #[test]
    fn report_t_diff() {
        let r = DetectionReport::new(Some(7.3), Some(8.0), 0.8, vec![]);
        assert!((r.t_diff.unwrap() - 0.7).abs() < 1e-12);
        let r = DetectionReport::new(None, Some(8.0), 0.8, vec![]);
        assert_eq!(r.t_diff, None);
        let r = DetectionReport::new(Some(1.0), None, 0.8, vec![]);
        assert_eq!(r.t_diff, None);
    }

    #[test]
    fn serde_rejects_invalid_payloads() {
        assert!(serde_json::from_str::<WeightVector>("[0.5, 2.0]").is_err());
        assert!(serde_json::from_str::<PromptSet>(r#"[{"text":"a","polarity":0}]"#).is_err());
        assert!(serde_json::from_str::<NormalizationParams>(r#"{"a_min":1,"a_max":0,"window_samples":3}"#).is_err());
    }
}
