//! Subcommand bodies. Each returns an [`Outcome`] or a [`CliError`]; `main`
//! turns those into exit codes.

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use statefit::detector::{detect_series, DetectError, Detector};
use statefit::fit::{fit_sigmoid, sigmoid, FitTarget};
use statefit::model::{DetectionReport, IngestMode, ModelError, SigmoidFit};
use statefit::optimizer::{run_mode, OptimizeError};
use statefit::signal::AggregateSignal;
use statefit::synth::{generate, SynthError};
use thiserror::Error;

use crate::args::{Command, DetectArgs, EvaluateArgs, OptimizeArgs, SynthArgs};
use crate::formats::{
    parse_prompts, parse_row, parse_similarity, read_text, render_prompts, render_similarity, render_trace,
    write_text, Annotation, FormatError, RunManifest, SimilarityHeader, TraceRow, WeightsArtifact,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NO_RESULT: i32 = 3;

/// How a command that ran to completion ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success,
    /// Optimization found nothing sigmoid-like.
    NoSignal,
    /// The threshold was never exceeded.
    NotDetected,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => EXIT_OK,
            Outcome::NoSignal | Outcome::NotDetected => EXIT_NO_RESULT,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Format(FormatError::Io { .. }) | CliError::Io(_) => EXIT_FAILURE,
            CliError::Format(_) | CliError::Invalid(_) => EXIT_INVALID,
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Invalid(e.to_string())
            }
        }
    )*};
}
invalid_from!(SynthError, OptimizeError, DetectError, ModelError);

/// Runs one subcommand. `args` are the raw arguments after the program name,
/// recorded in the manifest of every output.
pub fn run(
    command: &Command,
    args: &[String],
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
) -> Result<Outcome, CliError> {
    match command {
        Command::Synth(a) => synth(a, args, stdout),
        Command::Optimize(a) => optimize(a, args, stdout),
        Command::Detect(a) if a.stream => detect_stream(a, args, stdin, stdout),
        Command::Detect(a) => detect_file(a, args, stdout),
        Command::Evaluate(a) => evaluate(a, args, stdout),
    }
}

fn write_json_line(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn emit_report(path: Option<&Path>, stdout: &mut dyn Write, report: &impl Serialize) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut text = serde_json::to_string_pretty(report).map_err(io::Error::from)?;
            text.push('\n');
            write_text(p, &text)?;
        }
        None => write_json_line(stdout, report)?,
    }
    Ok(())
}

fn read_input(path: &Path, role: &str, manifest: &mut RunManifest) -> Result<String, CliError> {
    let text = read_text(path)?;
    manifest.record_input(role, text.as_bytes());
    Ok(text)
}

fn check_rate(artifact: &WeightsArtifact, rate: f64) -> Result<(), CliError> {
    if rate != artifact.sample_rate_hz {
        return Err(CliError::Invalid(format!(
            "sample rate {rate} Hz differs from the optimization run ({} Hz); the frozen window would change length",
            artifact.sample_rate_hz
        )));
    }
    Ok(())
}

/// Plot rows. `fit` supplies the sigmoid column, evaluated at sample indices 1..=T.
fn trace_rows(report: &DetectionReport, fit: Option<&SigmoidFit>) -> Vec<TraceRow> {
    let fired = report.trace.iter().position(|p| p.average > report.threshold);
    report
        .trace
        .iter()
        .enumerate()
        .map(|(k, p)| TraceRow {
            time: p.time,
            raw: p.raw,
            average: p.average,
            sigmoid: fit.map_or(f64::NAN, |f| sigmoid((k + 1) as f64, f.alpha, f.beta)),
            detected: fired.is_some_and(|s| k >= s) as u8,
        })
        .collect()
}

#[derive(Serialize)]
struct SynthSummary {
    samples: usize,
    prompts: usize,
    informative: Vec<usize>,
    alpha: f64,
    beta: f64,
    t_data: f64,
}

fn synth(a: &SynthArgs, args: &[String], stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = a.spec();
    let out = generate(&spec)?;
    let manifest = RunManifest::new("synth", args.to_vec(), json!({ "synth": spec }), Some(spec.rng_seed));
    write_text(&a.output, &render_similarity(&out.prompts, &out.series, Some(&manifest)))?;
    if let Some(p) = &a.annotation {
        write_text(p, &Annotation { t_data: out.t_data }.render())?;
    }
    if let Some(p) = &a.prompts_out {
        write_text(p, &render_prompts(&out.prompts))?;
    }
    let (alpha, beta) = spec.params();
    write_json_line(
        stdout,
        &SynthSummary {
            samples: out.series.len(),
            prompts: out.prompts.len(),
            informative: out.informative,
            alpha,
            beta,
            t_data: out.t_data,
        },
    )?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    mode: String,
    e_value: f64,
    alpha: f64,
    beta: f64,
    beta_seconds: f64,
    sigma: f64,
    converged: bool,
    no_signal: bool,
    evaluations: usize,
    weights: &'a [f64],
}

fn optimize(a: &OptimizeArgs, args: &[String], stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let ga = a.ga.config();
    let fit = a.fit.config();
    let mode = a.ingest.mode();
    let mut manifest = RunManifest::new(
        "optimize",
        args.to_vec(),
        json!({
            "mode": a.mode,
            "ga": ga,
            "fit": fit,
            "window_seconds": a.window_seconds,
            "threshold": a.threshold,
            "ingest": mode,
        }),
        Some(ga.rng_seed),
    );
    let data = parse_similarity(&read_input(&a.input, "similarity", &mut manifest)?, mode)?;
    if let Some(path) = &a.prompts {
        let prompts = parse_prompts(&read_input(path, "prompts", &mut manifest)?)?;
        if prompts != data.prompts {
            return Err(FormatError::HashMismatch {
                expected: prompts.content_hash(),
                found: data.prompts.content_hash(),
            }
            .into());
        }
    }
    let result = run_mode(a.mode, &data.series, &data.prompts, &ga, &fit, a.window_seconds)?;
    let rate = data.series.sample_rate_hz();
    let artifact = WeightsArtifact::from_result(&result, &data.prompts, rate, manifest.clone());
    write_text(&a.output, &artifact.render())?;

    if let Some(path) = &a.trace {
        let rows = match &result.normalization {
            Some(norm) => {
                let (report, _) =
                    detect_series(&data.series, &data.prompts, &result.best_weights, norm, None, a.threshold)?;
                trace_rows(&report, Some(&result.best_fit))
            }
            None => Vec::new(),
        };
        write_text(path, &render_trace(&manifest, &rows))?;
    }

    let fit = result.best_fit;
    write_json_line(
        stdout,
        &OptimizeSummary {
            mode: result.mode.to_string(),
            e_value: result.e_value(),
            alpha: fit.alpha,
            beta: fit.beta,
            beta_seconds: fit.beta_seconds(rate),
            sigma: fit.sigma,
            converged: fit.converged,
            no_signal: result.no_signal,
            evaluations: result.evaluations,
            weights: result.best_weights.as_slice(),
        },
    )?;
    if result.no_signal {
        eprintln!("no signal found: no weighting produced a converged sigmoid fit");
        return Ok(Outcome::NoSignal);
    }
    Ok(Outcome::Success)
}

fn load_artifact(path: &Path, manifest: &mut RunManifest) -> Result<WeightsArtifact, CliError> {
    Ok(WeightsArtifact::parse(&read_input(path, "weights", manifest)?)?)
}

fn load_annotation(path: Option<&Path>, manifest: &mut RunManifest) -> Result<Option<f64>, CliError> {
    path.map(|p| Ok(Annotation::parse(&read_input(p, "annotation", manifest)?)?.t_data))
        .transpose()
}

#[derive(Debug, Serialize)]
struct DetectReport {
    detected: bool,
    t_detected: Option<f64>,
    t_data: Option<f64>,
    t_diff: Option<f64>,
    threshold: f64,
    samples: usize,
    manifest: RunManifest,
}

fn detect_file(a: &DetectArgs, args: &[String], stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let mode = a.ingest.mode();
    let mut manifest = RunManifest::new(
        "detect",
        args.to_vec(),
        json!({ "threshold": a.threshold, "ingest": mode, "stream": false }),
        None,
    );
    let artifact = load_artifact(&a.weights, &mut manifest)?;
    let input = a.input.as_deref().expect("clap requires --input without --stream");
    let data = parse_similarity(&read_input(input, "similarity", &mut manifest)?, mode)?;
    artifact.check_prompts(&data.prompts)?;
    check_rate(&artifact, data.series.sample_rate_hz())?;
    let t_data = load_annotation(a.annotation.as_deref(), &mut manifest)?;
    let Some(norm) = artifact.normalization else {
        eprintln!("the weights artifact has no normalization: its optimization found no signal");
        return Ok(Outcome::NoSignal);
    };
    let (report, _) = detect_series(&data.series, &artifact.prompts, &artifact.weights, &norm, t_data, a.threshold)?;
    if let Some(path) = &a.trace {
        write_text(path, &render_trace(&manifest, &trace_rows(&report, Some(&artifact.best_fit))))?;
    }
    let detected = report.detected();
    emit_report(
        a.output.as_deref(),
        stdout,
        &DetectReport {
            detected,
            t_detected: report.t_detected,
            t_data: report.t_data,
            t_diff: report.t_diff,
            threshold: report.threshold,
            samples: data.series.len(),
            manifest,
        },
    )?;
    Ok(if detected { Outcome::Success } else { Outcome::NotDetected })
}

#[derive(Serialize)]
struct StreamEvent {
    event: &'static str,
    t_detected: f64,
    sample: usize,
    value: f64,
}

/// Streams rows from `stdin`. Optional `#` header lines before the first row
/// are checked against the artifact. The change event is written and flushed
/// while handling the row that crossed, so it trails the frame by at most one
/// sample period plus processing time.
fn detect_stream(
    a: &DetectArgs,
    args: &[String],
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let mode = a.ingest.mode();
    let mut manifest = RunManifest::new(
        "detect",
        args.to_vec(),
        json!({ "threshold": a.threshold, "ingest": mode, "stream": true }),
        None,
    );
    let artifact = load_artifact(&a.weights, &mut manifest)?;
    let t_data = load_annotation(a.annotation.as_deref(), &mut manifest)?;
    let Some(norm) = artifact.normalization else {
        eprintln!("the weights artifact has no normalization: its optimization found no signal");
        return Ok(Outcome::NoSignal);
    };
    let mut detector = Detector::new(artifact.prompts.clone(), artifact.weights.clone(), norm, a.threshold)?;
    let n = artifact.prompts.len();
    let mut header = SimilarityHeader::default();
    let mut checked = false;
    let mut t_detected = None;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if stdin.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text.starts_with('#') {
            if checked {
                return Err(CliError::Invalid(format!("line {line_no}: header line after data rows")));
            }
            header.parse_line(line_no, text)?;
            continue;
        }
        if !checked {
            check_stream_header(&artifact, &header)?;
            checked = true;
        }
        let mut row = parse_row(line_no, text, n + header.timestamps as usize)?;
        let sample = detector.samples_seen();
        let time = if header.timestamps {
            row.remove(0)
        } else {
            sample as f64 / artifact.sample_rate_hz
        };
        for v in row.iter_mut() {
            *v = checked_similarity(*v, mode, line_no)?;
        }
        if let Some(event) = detector.step(&row, time)?.event {
            t_detected = Some(event.t_detected);
            write_json_line(
                stdout,
                &StreamEvent {
                    event: "change_detected",
                    t_detected: event.t_detected,
                    sample: event.sample,
                    value: event.value,
                },
            )?;
        }
    }
    let t_diff = t_detected.zip(t_data).map(|(d, a)| (d - a).abs());
    emit_report(
        a.output.as_deref(),
        stdout,
        &DetectReport {
            detected: t_detected.is_some(),
            t_detected,
            t_data,
            t_diff,
            threshold: a.threshold,
            samples: detector.samples_seen(),
            manifest,
        },
    )?;
    Ok(if t_detected.is_some() {
        Outcome::Success
    } else {
        Outcome::NotDetected
    })
}

fn check_stream_header(artifact: &WeightsArtifact, header: &SimilarityHeader) -> Result<(), CliError> {
    if let Some(found) = &header.prompt_hash {
        if *found != artifact.prompt_hash {
            return Err(FormatError::HashMismatch {
                expected: artifact.prompt_hash.clone(),
                found: found.clone(),
            }
            .into());
        }
    }
    if !header.prompts.is_empty() {
        artifact.check_prompts(&header.prompt_set()?)?;
    }
    if let Some(rate) = header.sample_rate_hz {
        check_rate(artifact, rate)?;
    }
    Ok(())
}

fn checked_similarity(v: f64, mode: IngestMode, line_no: usize) -> Result<f64, CliError> {
    if !v.is_finite() {
        return Err(CliError::Invalid(format!("line {line_no}: non-finite similarity {v}")));
    }
    if (-1.0..=1.0).contains(&v) {
        return Ok(v);
    }
    match mode {
        IngestMode::Strict => Err(CliError::Invalid(format!("line {line_no}: similarity out of range: {v}"))),
        IngestMode::Lenient => Ok(v.clamp(-1.0, 1.0)),
    }
}

#[derive(Serialize)]
struct EvaluationReport {
    detected: bool,
    t_detected: Option<f64>,
    t_data: Option<f64>,
    t_diff: Option<f64>,
    threshold: f64,
    /// Refit on the frozen-normalized evaluation signal. For reference only:
    /// evaluation data is never used to choose weights.
    reference_fit: Option<SigmoidFit>,
    e_reference: f64,
    e_is_reference_only: bool,
    /// Range of the normalized average; frozen normalization may leave [0, 1].
    normalized_min: f64,
    normalized_max: f64,
    samples: usize,
    manifest: RunManifest,
}

fn evaluate(a: &EvaluateArgs, args: &[String], stdout: &mut dyn Write) -> Result<Outcome, CliError> {
    let mode = a.ingest.mode();
    let mut manifest = RunManifest::new(
        "evaluate",
        args.to_vec(),
        json!({ "threshold": a.threshold, "ingest": mode }),
        None,
    );
    let artifact = load_artifact(&a.weights, &mut manifest)?;
    let data = parse_similarity(&read_input(&a.input, "similarity", &mut manifest)?, mode)?;
    artifact.check_prompts(&data.prompts)?;
    check_rate(&artifact, data.series.sample_rate_hz())?;
    let t_data = load_annotation(a.annotation.as_deref(), &mut manifest)?;
    let Some(norm) = artifact.normalization else {
        eprintln!("the weights artifact has no normalization: its optimization found no signal");
        return Ok(Outcome::NoSignal);
    };
    let (report, signal) =
        detect_series(&data.series, &artifact.prompts, &artifact.weights, &norm, t_data, a.threshold)?;
    let reference_fit = reference_fit(&signal, &artifact);
    if let Some(path) = &a.trace {
        write_text(path, &render_trace(&manifest, &trace_rows(&report, reference_fit.as_ref())))?;
    }
    let detected = report.detected();
    let fold = |f: fn(f64, f64) -> f64, init| signal.normalized.iter().copied().fold(init, f);
    emit_report(
        a.output.as_deref(),
        stdout,
        &EvaluationReport {
            detected,
            t_detected: report.t_detected,
            t_data: report.t_data,
            t_diff: report.t_diff,
            threshold: report.threshold,
            e_reference: reference_fit.map_or(0.0, |f| f.e_value),
            reference_fit,
            e_is_reference_only: true,
            normalized_min: fold(f64::min, f64::INFINITY),
            normalized_max: fold(f64::max, f64::NEG_INFINITY),
            samples: data.series.len(),
            manifest,
        },
    )?;
    Ok(if detected { Outcome::Success } else { Outcome::NotDetected })
}

fn reference_fit(signal: &AggregateSignal, artifact: &WeightsArtifact) -> Option<SigmoidFit> {
    let norm = artifact.normalization.as_ref()?;
    let target = match artifact.fit_config.target {
        FitTarget::Averaged => signal.normalized.clone(),
        FitTarget::Raw => signal.normalized_raw(norm),
    };
    fit_sigmoid(&target, &artifact.fit_config).ok()
}

