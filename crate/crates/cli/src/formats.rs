//! File formats: prompt files (TOML), similarity files (columnar text with a
//! `#` header block), weights artifacts and reports (JSON), annotations
//! (JSON) and trace exports (CSV).
//!
//! Every artifact the tool writes carries the [`RunManifest`] of the run that
//! produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statefit::model::{
    IngestMode, ModelError, NormalizationParams, PromptSet, RawPrompt, SigmoidFit, SimilaritySeries, WeightVector,
};
use statefit::optimizer::{GaConfig, GenerationStats, Mode, OptimizationResult};
use statefit::fit::FitConfig;
use thiserror::Error;

/// First line of every similarity file.
pub const SIMILARITY_TAG: &str = "statefit-similarity v1";
pub const WEIGHTS_FORMAT: &str = "statefit-weights/1";
/// Trace export columns, in order.
pub const TRACE_COLUMNS: [&str; 5] = ["time", "raw", "average", "sigmoid", "detected"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("prompt hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance stamped into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name; re-running them reproduces the output.
    pub args: Vec<String>,
    /// Every effective setting, defaults included.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub rng_seed: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value, rng_seed: Option<u64>) -> Self {
        RunManifest {
            tool: "statefit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config,
            inputs: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn record_input(&mut self, role: &str, bytes: &[u8]) {
        self.inputs.insert(role.into(), sha256_hex(bytes));
    }

    fn to_line(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }
}

// Prompt files

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptFile {
    prompt: Vec<RawPrompt>,
}

/// Parses a prompt file:
///
/// ```toml
/// [[prompt]]
/// text = "the water is boiling"
/// polarity = 1
/// ```
pub fn parse_prompts(text: &str) -> Result<PromptSet, FormatError> {
    let file: PromptFile = toml::from_str(text).map_err(|e| parse_err("prompt file", e.to_string()))?;
    Ok(PromptSet::validate(file.prompt)?)
}

pub fn render_prompts(prompts: &PromptSet) -> String {
    let file = PromptFile {
        prompt: prompts.clone().into(),
    };
    toml::to_string(&file).expect("prompt file serializes")
}

// Similarity files

/// Header fields of a similarity file or stream, collected line by line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityHeader {
    pub tagged: bool,
    pub sample_rate_hz: Option<f64>,
    pub prompt_hash: Option<String>,
    pub timestamps: bool,
    pub prompts: Vec<RawPrompt>,
    pub manifest: Option<RunManifest>,
}

impl SimilarityHeader {
    /// Consumes one `# key: value` line. Unknown keys are ignored so that
    /// producers can record extra provenance.
    pub fn parse_line(&mut self, line_no: usize, line: &str) -> Result<(), FormatError> {
        let location = || format!("line {line_no}");
        let body = line.trim_start_matches('#').trim();
        if body == SIMILARITY_TAG {
            self.tagged = true;
            return Ok(());
        }
        let Some((key, value)) = body.split_once(':') else {
            return Ok(());
        };
        let value = value.trim();
        match key.trim() {
            "sample_rate_hz" => {
                let rate = value
                    .parse()
                    .map_err(|_| parse_err(location(), format!("bad sample_rate_hz {value:?}")))?;
                self.sample_rate_hz = Some(rate);
            }
            "prompt_hash" => self.prompt_hash = Some(value.to_string()),
            "timestamps" => {
                self.timestamps = value
                    .parse()
                    .map_err(|_| parse_err(location(), format!("timestamps must be true or false, got {value:?}")))?;
            }
            "prompt" => {
                let (polarity, text) = value
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| parse_err(location(), "expected `prompt: <polarity> \"<text>\"`"))?;
                let polarity = polarity
                    .parse()
                    .map_err(|_| parse_err(location(), format!("bad polarity {polarity:?}")))?;
                let text: String = serde_json::from_str(text.trim())
                    .map_err(|e| parse_err(location(), format!("prompt text must be a JSON string: {e}")))?;
                self.prompts.push(RawPrompt { text, polarity });
            }
            "manifest" => {
                let manifest =
                    serde_json::from_str(value).map_err(|e| parse_err(location(), format!("bad manifest: {e}")))?;
                self.manifest = Some(manifest);
            }
            _ => {}
        }
        Ok(())
    }

    /// Validates the prompts and checks them against the declared hash.
    pub fn prompt_set(&self) -> Result<PromptSet, FormatError> {
        let prompts = PromptSet::validate(self.prompts.clone())?;
        if let Some(declared) = &self.prompt_hash {
            let actual = prompts.content_hash();
            if *declared != actual {
                return Err(parse_err(
                    "header",
                    format!("prompt_hash {declared} does not match the listed prompts ({actual})"),
                ));
            }
        }
        Ok(prompts)
    }
}

pub fn render_similarity_header(
    prompts: &PromptSet,
    sample_rate_hz: f64,
    timestamps: bool,
    manifest: Option<&RunManifest>,
) -> String {
    let mut out = String::new();
    writeln!(out, "# {SIMILARITY_TAG}").unwrap();
    writeln!(out, "# sample_rate_hz: {sample_rate_hz}").unwrap();
    writeln!(out, "# prompt_hash: {}", prompts.content_hash()).unwrap();
    writeln!(out, "# timestamps: {timestamps}").unwrap();
    for p in prompts.prompts() {
        let text = serde_json::to_string(&p.text).unwrap();
        writeln!(out, "# prompt: {} {text}", p.polarity).unwrap();
    }
    if let Some(m) = manifest {
        writeln!(out, "# manifest: {}", m.to_line()).unwrap();
    }
    out
}

pub fn render_similarity(prompts: &PromptSet, series: &SimilaritySeries, manifest: Option<&RunManifest>) -> String {
    let timestamps = series.timestamps();
    let mut out = render_similarity_header(prompts, series.sample_rate_hz(), timestamps.is_some(), manifest);
    for (t, row) in series.rows().enumerate() {
        let mut first = true;
        if let Some(ts) = timestamps {
            write!(out, "{}", ts[t]).unwrap();
            first = false;
        }
        for v in row {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Splits a data line into numbers, checking the count.
pub fn parse_row(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>, FormatError> {
    let values = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(format!("line {line_no}"), format!("not a number: {tok:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(parse_err(
            format!("line {line_no}"),
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityFile {
    pub prompts: PromptSet,
    pub series: SimilaritySeries,
    pub manifest: Option<RunManifest>,
}

pub fn parse_similarity(text: &str, mode: IngestMode) -> Result<SimilarityFile, FormatError> {
    let mut header = SimilarityHeader::default();
    let mut prompts: Option<PromptSet> = None;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if prompts.is_some() {
                return Err(parse_err(format!("line {line_no}"), "header line after data rows"));
            }
            header.parse_line(line_no, line)?;
            if !header.tagged {
                return Err(parse_err("line 1", format!("missing `# {SIMILARITY_TAG}` tag")));
            }
            continue;
        }
        if prompts.is_none() {
            if !header.tagged {
                return Err(parse_err("line 1", format!("missing `# {SIMILARITY_TAG}` tag")));
            }
            if header.prompt_hash.is_none() {
                return Err(parse_err("header", "missing prompt_hash"));
            }
            if header.sample_rate_hz.is_none() {
                return Err(parse_err("header", "missing sample_rate_hz"));
            }
            prompts = Some(header.prompt_set()?);
        }
        let n = prompts.as_ref().map_or(0, PromptSet::len);
        let mut row = parse_row(line_no, line, n + header.timestamps as usize)?;
        if header.timestamps {
            times.push(row.remove(0));
        }
        rows.push(row);
    }
    let prompts = match prompts {
        Some(p) => p,
        None if header.tagged => header.prompt_set()?,
        None => return Err(parse_err("line 1", format!("missing `# {SIMILARITY_TAG}` tag"))),
    };
    let rate = header
        .sample_rate_hz
        .ok_or_else(|| parse_err("header", "missing sample_rate_hz"))?;
    let timestamps = header.timestamps.then_some(times);
    let series = SimilaritySeries::validate_for(&prompts, rows, rate, timestamps, mode)?;
    Ok(SimilarityFile {
        prompts,
        series,
        manifest: header.manifest,
    })
}

// Weights artifact

/// Everything needed to run detection with frozen normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsArtifact {
    pub format: String,
    pub mode: Mode,
    pub prompt_hash: String,
    pub prompts: PromptSet,
    pub weights: WeightVector,
    /// Absent when no signal was found.
    pub normalization: Option<NormalizationParams>,
    pub best_fit: SigmoidFit,
    pub no_signal: bool,
    pub window_seconds: f64,
    pub sample_rate_hz: f64,
    pub fit_config: FitConfig,
    pub ga_config: Option<GaConfig>,
    pub evaluations: usize,
    pub history: Vec<GenerationStats>,
    pub manifest: RunManifest,
}

impl WeightsArtifact {
    pub fn from_result(
        result: &OptimizationResult,
        prompts: &PromptSet,
        sample_rate_hz: f64,
        manifest: RunManifest,
    ) -> Self {
        WeightsArtifact {
            format: WEIGHTS_FORMAT.into(),
            mode: result.mode,
            prompt_hash: prompts.content_hash(),
            prompts: prompts.clone(),
            weights: result.best_weights.clone(),
            normalization: result.normalization,
            best_fit: result.best_fit,
            no_signal: result.no_signal,
            window_seconds: result.window_seconds,
            sample_rate_hz,
            fit_config: result.fit_config,
            ga_config: result.ga_config,
            evaluations: result.evaluations,
            history: result.history.clone(),
            manifest,
        }
    }

    /// Parses and checks internal consistency, including the prompt hash.
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let artifact: WeightsArtifact =
            serde_json::from_str(text).map_err(|e| parse_err("weights artifact", e.to_string()))?;
        if artifact.format != WEIGHTS_FORMAT {
            return Err(parse_err(
                "weights artifact",
                format!("format {:?}, expected {WEIGHTS_FORMAT:?}", artifact.format),
            ));
        }
        let actual = artifact.prompts.content_hash();
        if actual != artifact.prompt_hash {
            return Err(FormatError::HashMismatch {
                expected: artifact.prompt_hash,
                found: actual,
            });
        }
        if artifact.weights.len() != artifact.prompts.len() {
            return Err(parse_err(
                "weights artifact",
                format!("{} weights for {} prompts", artifact.weights.len(), artifact.prompts.len()),
            ));
        }
        Ok(artifact)
    }

    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    /// Refuses prompts whose hash differs from the artifact's.
    pub fn check_prompts(&self, prompts: &PromptSet) -> Result<(), FormatError> {
        let found = prompts.content_hash();
        if found != self.prompt_hash {
            return Err(FormatError::HashMismatch {
                expected: self.prompt_hash.clone(),
                found,
            });
        }
        Ok(())
    }
}

// Annotations

/// Ground-truth change time for an evaluation recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    /// Seconds.
    pub t_data: f64,
}

impl Annotation {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let a: Annotation = serde_json::from_str(text).map_err(|e| parse_err("annotation", e.to_string()))?;
        if !a.t_data.is_finite() {
            return Err(parse_err("annotation", "t_data must be finite"));
        }
        Ok(a)
    }

    pub fn render(&self) -> String {
        let mut s = serde_json::to_string(self).expect("annotation serializes");
        s.push('\n');
        s
    }
}

// Trace export

/// One row of the plot-data export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    /// Normalized raw aggregate.
    pub raw: f64,
    /// Normalized moving average.
    pub average: f64,
    /// Fitted sigmoid at this sample.
    pub sigmoid: f64,
    /// 0 before detection, 1 from the detecting sample on.
    pub detected: u8,
}

pub fn render_trace(manifest: &RunManifest, rows: &[TraceRow]) -> String {
    let mut out = format!("# manifest: {}\n", manifest.to_line());
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("trace row serializes");
    }
    let bytes = w.into_inner().expect("in-memory writer");
    if rows.is_empty() {
        out.push_str(&TRACE_COLUMNS.join(","));
        out.push('\n');
    } else {
        out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
    }
    out
}

/// Reads a trace export, insisting on the exact column set and order.
pub fn parse_trace(text: &str) -> Result<(Option<RunManifest>, Vec<TraceRow>), FormatError> {
    let mut manifest = None;
    let mut body_start = 0;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { break };
        body_start += line.len() + 1;
        if let Some(json) = rest.trim().strip_prefix("manifest:") {
            manifest = Some(serde_json::from_str(json.trim()).map_err(|e| parse_err("trace", format!("bad manifest: {e}")))?);
        }
    }
    let body = text.get(body_start..).unwrap_or("");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err("trace", e.to_string()))?;
    let found: Vec<&str> = headers.iter().collect();
    if found != TRACE_COLUMNS {
        return Err(parse_err(
            "trace",
            format!("columns {found:?}, expected exactly {TRACE_COLUMNS:?}"),
        ));
    }
    let rows = reader
        .deserialize()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| parse_err(format!("trace row {}", k + 1), e.to_string())))
        .collect::<Result<_, _>>()?;
    Ok((manifest, rows))
}
