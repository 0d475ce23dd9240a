//! Inference path, OCR engines, and the three-condition benchmark runner.
//!
//! Conditions: *Ideal* runs OCR on the upright source (reconstructed
//! losslessly from the stored rotated file via the ground-truth label),
//! *Rotated* on the stored file as-is, *Corrected* on the classifier's
//! inverse-rotated output. The deterministic mock engine returns the exact
//! ground truth for upright inputs and a seeded per-`(id, class)`
//! corruption otherwise, which makes orchestration testable end to end
//! without any external model: when every classification is correct, the
//! Corrected report equals the Ideal report exactly.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, SampleRecord};
use crate::encoder::EncoderConfig;
use crate::imaging::{self, ImageBuffer, RotationClass};
use crate::metrics::{self, MetricLevel, MetricsError};
use crate::model::{classify_image, CroppingMode, ModelParams};
use crate::training::{Checkpoint, CheckpointError};

/// OCR instruction sent by the HTTP engine.
pub const DEFAULT_OCR_PROMPT: &str = "You are an OCR engine. You job is to extract the exact text from the given image. Preserve the text formatting, including line breaks, spaces, and any symbols or special characters. Respond in plain text format.";

const SUBSTITUTION_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
const HALLUCINATION_SUFFIX_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("record \"{0}\" has no gt_text")]
    MissingGtText(String),
    #[error("record \"{0}\" has an empty gt_text")]
    EmptyGtText(String),
    #[error("http engine requires an endpoint")]
    MissingEndpoint,
    #[error("auth environment variable \"{0}\" is not set")]
    AuthEnvMissing(String),
    #[error("OCR request timed out after {attempts} attempt(s)")]
    OcrTimeout { attempts: u32 },
    #[error("OCR transport failure after {attempts} attempt(s): {detail}")]
    OcrTransport { attempts: u32, detail: String },
    #[error("OCR endpoint returned status {status} after {attempts} attempt(s)")]
    OcrStatus { status: u16, attempts: u32 },
    #[error("malformed OCR response")]
    MalformedOcrResponse,
    #[error("checkpoint was trained with cropping mode {trained}, requested {requested}")]
    CroppingModeMismatch {
        trained: CroppingMode,
        requested: CroppingMode,
    },
    #[error("no samples to report on")]
    EmptyInput,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Per-class substitution probabilities of the mock engine. The upright
/// rate is zero so an exactly corrected image round-trips the ground
/// truth; the rotated rates are large enough that degradation dominates
/// the Rotated condition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CorruptionRates {
    pub upright: f64,
    pub cw90: f64,
    pub ccw90: f64,
    pub upside_down: f64,
}

impl Default for CorruptionRates {
    fn default() -> Self {
        Self {
            upright: 0.0,
            cw90: 0.5,
            ccw90: 0.5,
            upside_down: 0.4,
        }
    }
}

impl CorruptionRates {
    pub fn rate(&self, cls: RotationClass) -> f64 {
        match cls {
            RotationClass::Upright => self.upright,
            RotationClass::Cw90 => self.cw90,
            RotationClass::Ccw90 => self.ccw90,
            RotationClass::UpsideDown => self.upside_down,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Mock,
    Http,
}

/// Configuration of a pluggable OCR engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrEngineSpec {
    pub kind: EngineKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub prompt: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub corruption: CorruptionRates,
}

impl Default for OcrEngineSpec {
    fn default() -> Self {
        Self::mock()
    }
}

impl OcrEngineSpec {
    pub fn mock() -> Self {
        Self {
            kind: EngineKind::Mock,
            endpoint: None,
            auth_env: None,
            prompt: DEFAULT_OCR_PROMPT.to_string(),
            timeout_secs: 30.0,
            max_retries: 2,
            corruption: CorruptionRates::default(),
        }
    }

    pub fn http(endpoint: &str) -> Self {
        Self {
            kind: EngineKind::Http,
            endpoint: Some(endpoint.to_string()),
            ..Self::mock()
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            EngineKind::Mock => "mock".to_string(),
            EngineKind::Http => format!(
                "http:{}",
                self.endpoint.as_deref().unwrap_or("<missing endpoint>")
            ),
        }
    }

    /// Run this engine on one presented image.
    pub fn run(
        &self,
        record: &SampleRecord,
        image: &ImageBuffer,
        presented: RotationClass,
    ) -> Result<String, PipelineError> {
        match self.kind {
            EngineKind::Mock => mock_ocr(record, presented, &self.corruption),
            EngineKind::Http => http_ocr(image, self),
        }
    }
}

/// Deterministic OCR double. An upright presentation returns the ground
/// truth verbatim; any other orientation substitutes each code point with
/// probability `q(class)` (always to a different character) and appends a
/// duplicated suffix of the last ten code points, the repetition failure
/// mode rotated inputs provoke in real engines. The stream is derived from
/// `(record.id, presented class)` only, so outputs replay exactly.
pub fn mock_ocr(
    record: &SampleRecord,
    presented: RotationClass,
    rates: &CorruptionRates,
) -> Result<String, PipelineError> {
    let gt = record
        .gt_text
        .as_deref()
        .ok_or_else(|| PipelineError::MissingGtText(record.id.clone()))?;
    if presented == RotationClass::Upright {
        return Ok(gt.to_string());
    }
    let q = rates.rate(presented);
    let mut rng = crate::rng::derive(0, &format!("mock-ocr/{}/{}", record.id, presented.label()));
    let mut chars: Vec<char> = gt.chars().collect();
    for c in chars.iter_mut() {
        if rng.gen::<f64>() < q {
            loop {
                let pick =
                    SUBSTITUTION_ALPHABET[rng.gen_range(0..SUBSTITUTION_ALPHABET.len())] as char;
                if pick != *c {
                    *c = pick;
                    break;
                }
            }
        }
    }
    let suffix_start = chars.len().saturating_sub(HALLUCINATION_SUFFIX_LEN);
    let suffix: Vec<char> = chars[suffix_start..].to_vec();
    chars.extend(suffix);
    Ok(chars.into_iter().collect())
}

#[derive(Deserialize)]
struct OcrHttpResponse {
    text: String,
}

/// POST the image to a generic OCR endpoint: JSON body
/// `{"prompt": ..., "image": <base64 PNG>}`, expecting `{"text": ...}`.
/// Non-2xx responses and transport failures are retried with exponential
/// backoff; the total time stays within `timeout * (max_retries + 1)`.
pub fn http_ocr(image: &ImageBuffer, spec: &OcrEngineSpec) -> Result<String, PipelineError> {
    use base64::Engine as _;
    let endpoint = spec.endpoint.as_deref().ok_or(PipelineError::MissingEndpoint)?;
    let token = match &spec.auth_env {
        Some(var) => Some(
            std::env::var(var).map_err(|_| PipelineError::AuthEnvMissing(var.clone()))?,
        ),
        None => None,
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(spec.timeout_secs))
        .build()
        .map_err(|e| PipelineError::OcrTransport {
            attempts: 0,
            detail: e.to_string(),
        })?;
    let body = serde_json::json!({
        "prompt": spec.prompt,
        "image": base64::engine::general_purpose::STANDARD.encode(image.png_bytes()),
    });
    let deadline = Instant::now()
        + Duration::from_secs_f64(spec.timeout_secs * f64::from(spec.max_retries + 1));

    let mut attempts = 0u32;
    let mut last_error: Option<PipelineError> = None;
    while attempts <= spec.max_retries {
        if attempts > 0 {
            let backoff = Duration::from_millis(100 * (1 << (attempts - 1).min(6)));
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            std::thread::sleep(backoff.min(remaining));
        }
        attempts += 1;
        let mut request = client.post(endpoint).json(&body);
        if let Some(token) = &token {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    return match response.json::<OcrHttpResponse>() {
                        Ok(parsed) => Ok(parsed.text),
                        Err(_) => Err(PipelineError::MalformedOcrResponse),
                    };
                }
                last_error = Some(PipelineError::OcrStatus {
                    status: status.as_u16(),
                    attempts,
                });
            }
            Err(e) if e.is_timeout() => {
                last_error = Some(PipelineError::OcrTimeout { attempts });
            }
            Err(e) => {
                last_error = Some(PipelineError::OcrTransport {
                    attempts,
                    detail: e.to_string(),
                });
            }
        }
    }
    Err(last_error.unwrap_or(PipelineError::OcrTimeout { attempts }))
}

/// Predict the orientation of an image using a loaded checkpoint. The
/// requested cropping mode must match what the checkpoint was trained
/// with.
pub fn classify_rotation(
    checkpoint: &Checkpoint,
    image: &ImageBuffer,
    cropping: CroppingMode,
) -> Result<RotationClass, PipelineError> {
    if checkpoint.meta.cropping_mode != cropping {
        return Err(PipelineError::CroppingModeMismatch {
            trained: checkpoint.meta.cropping_mode,
            requested: cropping,
        });
    }
    let params: ModelParams<f32> = checkpoint.to_model()?;
    Ok(classify_image(
        &params,
        &checkpoint.meta.encoder,
        image,
        cropping,
    )?)
}

/// Classify, then rotate the image back to upright; returns the corrected
/// image and the predicted class.
pub fn correct_image(
    checkpoint: &Checkpoint,
    image: &ImageBuffer,
) -> Result<(ImageBuffer, RotationClass), PipelineError> {
    let predicted = classify_rotation(checkpoint, image, checkpoint.meta.cropping_mode)?;
    let corrected = imaging::rotate_quarter(image, imaging::correction_turns(predicted));
    Ok((corrected, predicted))
}

/// Source of rotation predictions for the benchmark: a trained model, or
/// the ground-truth oracle that isolates orchestration from model quality.
pub trait RotationClassifier: Sync {
    fn classify(
        &self,
        record: &SampleRecord,
        stored_image: &ImageBuffer,
    ) -> Result<RotationClass, PipelineError>;
    fn describe(&self) -> String;
}

/// Deserialized checkpoint driving the real inference path.
pub struct ModelClassifier {
    params: ModelParams<f32>,
    encoder: EncoderConfig,
    cropping: CroppingMode,
    source: String,
}

impl ModelClassifier {
    pub fn from_checkpoint(checkpoint: &Checkpoint, source: &str) -> Result<Self, PipelineError> {
        Ok(Self {
            params: checkpoint.to_model()?,
            encoder: checkpoint.meta.encoder,
            cropping: checkpoint.meta.cropping_mode,
            source: source.to_string(),
        })
    }
}

impl RotationClassifier for ModelClassifier {
    fn classify(
        &self,
        _record: &SampleRecord,
        stored_image: &ImageBuffer,
    ) -> Result<RotationClass, PipelineError> {
        Ok(classify_image(
            &self.params,
            &self.encoder,
            stored_image,
            self.cropping,
        )?)
    }
    fn describe(&self) -> String {
        format!("model:{}", self.source)
    }
}

/// Returns the stored ground-truth label.
pub struct OracleClassifier;

impl RotationClassifier for OracleClassifier {
    fn classify(
        &self,
        record: &SampleRecord,
        _stored_image: &ImageBuffer,
    ) -> Result<RotationClass, PipelineError> {
        Ok(record.rotation_class)
    }
    fn describe(&self) -> String {
        "oracle".to_string()
    }
}

/// Benchmark condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Ideal,
    Rotated,
    Corrected,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Ideal, Condition::Rotated, Condition::Corrected];
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::Ideal => write!(f, "ideal"),
            Condition::Rotated => write!(f, "rotated"),
            Condition::Corrected => write!(f, "corrected"),
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ideal" => Ok(Condition::Ideal),
            "rotated" => Ok(Condition::Rotated),
            "corrected" => Ok(Condition::Corrected),
            other => Err(format!(
                "unknown condition \"{other}\" (expected ideal, rotated, or corrected)"
            )),
        }
    }
}

/// Metric values for one (condition, language) cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricBlock {
    pub sample_count: usize,
    pub word_anls: f64,
    pub char_anls: f64,
    pub wer: f64,
    pub cer: f64,
    pub word_similarity: f64,
    pub char_similarity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConditionReport {
    pub pooled: MetricBlock,
    pub languages: BTreeMap<String, MetricBlock>,
    /// Samples dropped from the means because the engine failed on them.
    pub excluded: usize,
}

/// Aggregated benchmark output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub engine: String,
    pub classifier: String,
    pub seed: u64,
    pub sample_count: usize,
    pub conditions: BTreeMap<Condition, ConditionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<[[u32; 4]; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotation_accuracy: Option<f64>,
}

/// Confusion matrix (`matrix[true][predicted]`) and accuracy in percent.
pub fn confusion_and_accuracy(
    pairs: &[(RotationClass, RotationClass)],
) -> Result<([[u32; 4]; 4], f64), PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut matrix = [[0u32; 4]; 4];
    for &(truth, predicted) in pairs {
        matrix[truth.label() as usize][predicted.label() as usize] += 1;
    }
    let trace: u32 = (0..4).map(|i| matrix[i][i]).sum();
    Ok((matrix, 100.0 * f64::from(trace) / pairs.len() as f64))
}

struct SampleOutcome {
    language: String,
    gt_text: String,
    fields: Option<BTreeMap<String, String>>,
    /// Per condition: OCR text or the engine failure message.
    texts: BTreeMap<Condition, Result<String, String>>,
    predicted: Option<RotationClass>,
}

fn metric_block(
    samples: &[(&str, &str, Option<&BTreeMap<String, String>>)],
) -> Result<MetricBlock, PipelineError> {
    let pairs: Vec<(String, String)> = samples
        .iter()
        .map(|(gt, ocr, _)| (gt.to_string(), ocr.to_string()))
        .collect();
    let word = metrics::anls_report(&pairs, MetricLevel::Word)?;
    let char_ = metrics::anls_report(&pairs, MetricLevel::Char)?;
    let mut wer_sum = 0.0;
    let mut cer_sum = 0.0;
    let mut word_sim = 0.0;
    let mut char_sim = 0.0;
    for (gt, ocr, _) in samples {
        wer_sum += metrics::wer(gt, ocr)?;
        cer_sum += metrics::cer(gt, ocr)?;
        word_sim += metrics::similarity_ratio_words(gt, ocr);
        char_sim += metrics::similarity_ratio(gt, ocr);
    }
    let n = samples.len() as f64;
    let with_fields: Vec<(String, BTreeMap<String, String>)> = samples
        .iter()
        .filter_map(|(_, ocr, fields)| fields.map(|f| (ocr.to_string(), f.clone())))
        .collect();
    let field_accuracy = if with_fields.is_empty() {
        None
    } else {
        Some(metrics::field_accuracy(&with_fields)?)
    };
    Ok(MetricBlock {
        sample_count: samples.len(),
        word_anls: word.mean_value,
        char_anls: char_.mean_value,
        wer: wer_sum / n,
        cer: cer_sum / n,
        word_similarity: word_sim / n,
        char_similarity: char_sim / n,
        field_accuracy,
    })
}

/// Run the benchmark over a corpus. Engine failures are recorded per
/// sample and excluded from the means with a visible count; classifier
/// failures abort the run. Aggregation happens in manifest order, so the
/// report does not depend on execution concurrency.
pub fn run_bench(
    records: &[SampleRecord],
    base_dir: &Path,
    classifier: &dyn RotationClassifier,
    engine: &OcrEngineSpec,
    conditions: &[Condition],
    seed: u64,
) -> Result<EvalReport, PipelineError> {
    use rayon::prelude::*;
    if records.is_empty() || conditions.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    for record in records {
        let gt = record
            .gt_text
            .as_deref()
            .ok_or_else(|| PipelineError::MissingGtText(record.id.clone()))?;
        if gt.split_whitespace().next().is_none() {
            return Err(PipelineError::EmptyGtText(record.id.clone()));
        }
    }
    let mut wanted: Vec<Condition> = conditions.to_vec();
    wanted.sort();
    wanted.dedup();

    let outcomes: Vec<SampleOutcome> = records
        .par_iter()
        .map(|record| -> Result<SampleOutcome, PipelineError> {
            let stored = data::load_image(base_dir, record)?;
            let truth = record.rotation_class;
            let mut predicted = None;
            let mut texts = BTreeMap::new();
            for &condition in &wanted {
                let (image, presented) = match condition {
                    Condition::Ideal => (
                        imaging::rotate_quarter(&stored, imaging::correction_turns(truth)),
                        RotationClass::Upright,
                    ),
                    Condition::Rotated => (stored.clone(), truth),
                    Condition::Corrected => {
                        let guess = classifier.classify(record, &stored)?;
                        predicted = Some(guess);
                        let turns = imaging::correction_turns(guess);
                        (
                            imaging::rotate_quarter(&stored, turns),
                            truth.plus_turns(turns),
                        )
                    }
                };
                let text = engine
                    .run(record, &image, presented)
                    .map_err(|e| e.to_string());
                texts.insert(condition, text);
            }
            Ok(SampleOutcome {
                language: record.language.clone(),
                gt_text: record.gt_text.clone().expect("validated above"),
                fields: record.fields.clone(),
                texts,
                predicted,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut condition_reports = BTreeMap::new();
    for &condition in &wanted {
        let mut included: Vec<(&str, &str, Option<&BTreeMap<String, String>>)> = Vec::new();
        let mut by_language: BTreeMap<&str, Vec<(&str, &str, Option<&BTreeMap<String, String>>)>> =
            BTreeMap::new();
        let mut excluded = 0usize;
        for outcome in &outcomes {
            match &outcome.texts[&condition] {
                Ok(text) => {
                    let row = (
                        outcome.gt_text.as_str(),
                        text.as_str(),
                        outcome.fields.as_ref(),
                    );
                    included.push(row);
                    by_language.entry(&outcome.language).or_default().push(row);
                }
                Err(_) => excluded += 1,
            }
        }
        if included.is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let pooled = metric_block(&included)?;
        let mut languages = BTreeMap::new();
        for (language, rows) in by_language {
            languages.insert(language.to_string(), metric_block(&rows)?);
        }
        condition_reports.insert(
            condition,
            ConditionReport {
                pooled,
                languages,
                excluded,
            },
        );
    }

    let (confusion, rotation_accuracy) = if wanted.contains(&Condition::Corrected) {
        let pairs: Vec<(RotationClass, RotationClass)> = records
            .iter()
            .zip(&outcomes)
            .map(|(r, o)| (r.rotation_class, o.predicted.expect("corrected pass ran")))
            .collect();
        let (matrix, accuracy) = confusion_and_accuracy(&pairs)?;
        (Some(matrix), Some(accuracy))
    } else {
        (None, None)
    };

    Ok(EvalReport {
        engine: engine.describe(),
        classifier: classifier.describe(),
        seed,
        sample_count: records.len(),
        conditions: condition_reports,
        confusion,
        rotation_accuracy,
    })
}

impl EvalReport {
    /// Write `report.json` and `report.csv` under `out_dir`; returns their
    /// paths. The CSV holds flat `(condition, language, metric, value)`
    /// rows followed by the 4x4 confusion block.
    pub fn write_files(
        &self,
        out_dir: &Path,
    ) -> Result<(std::path::PathBuf, std::path::PathBuf), PipelineError> {
        let io_err = |path: &Path, source: std::io::Error| PipelineError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
        let json_path = out_dir.join("report.json");
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;

        let csv_path = out_dir.join("report.csv");
        let mut writer = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(&csv_path)
            .map_err(|e| PipelineError::Io {
                path: csv_path.display().to_string(),
                source: std::io::Error::other(e),
            })?;
        writer
            .write_record(["condition", "language", "metric", "value"])
            .ok();
        for (condition, report) in &self.conditions {
            let mut rows: Vec<(&str, &MetricBlock)> = vec![("all", &report.pooled)];
            rows.extend(report.languages.iter().map(|(l, b)| (l.as_str(), b)));
            for (language, block) in rows {
                let mut cells: Vec<(&str, f64)> = vec![
                    ("word_anls", block.word_anls),
                    ("char_anls", block.char_anls),
                    ("wer", block.wer),
                    ("cer", block.cer),
                    ("word_similarity", block.word_similarity),
                    ("char_similarity", block.char_similarity),
                ];
                if let Some(fa) = block.field_accuracy {
                    cells.push(("field_accuracy", fa));
                }
                for (metric, value) in cells {
                    writer
                        .write_record([
                            condition.to_string().as_str(),
                            language,
                            metric,
                            &format!("{value}"),
                        ])
                        .ok();
                }
                writer
                    .write_record([
                        condition.to_string().as_str(),
                        language,
                        "excluded",
                        &report.excluded.to_string(),
                    ])
                    .ok();
            }
        }
        if let (Some(matrix), Some(accuracy)) = (&self.confusion, self.rotation_accuracy) {
            writer
                .write_record(["rotation_accuracy", "", "", &format!("{accuracy}")])
                .ok();
            for (i, row) in matrix.iter().enumerate() {
                let mut record = vec![format!("confusion_true_{i}")];
                record.extend(row.iter().map(|v| v.to_string()));
                writer.write_record(&record).ok();
            }
        }
        writer.flush().map_err(|e| PipelineError::Io {
            path: csv_path.display().to_string(),
            source: e,
        })?;
        Ok((json_path, csv_path))
    }
}
