//! Training: AdamW with decoupled weight decay, global-norm gradient
//! clipping, early stopping on validation accuracy, binary checkpoints,
//! and finite-difference gradient verification.
//!
//! The loop is deterministic: `(seed, corpus, config)` fully determine the
//! trajectory. Shuffles via one derived stream per epoch, dropout via one
//! derived stream per `(epoch, step, sample)`, gradients accumulated in
//! sample order within a batch and averaged per batch.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, SampleRecord};
use crate::encoder::EncoderConfig;
use crate::head::{softmax_cross_entropy, ForwardMode};
use crate::imaging::ImagingError;
use crate::model::{
    backward_sample, classify_image, crops_for_image, forward_crops, CroppingMode, HeadMode,
    ModelError, ModelParams,
};
use crate::numeric::Scalar;

const CHECKPOINT_MAGIC: &[u8; 4] = b"ORNT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Optimization hyperparameters. The defaults are the from-scratch desk
/// settings; clip norm, epoch budget, and early stopping follow the
/// fine-tuning recipe (which used learning rate 1e-5 on pretrained
/// weights and batch sizes 256 global-only / 64 dynamic).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub cropping_mode: CroppingMode,
    pub head_mode: HeadMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
            max_epochs: 35,
            patience: 5,
            batch_size: 32,
            seed: 0,
            cropping_mode: CroppingMode::Dynamic,
            head_mode: HeadMode::MultiLayer,
        }
    }
}

/// First/second-moment accumulators mirroring the parameter shapes.
pub struct OptimState<S> {
    pub m: ModelParams<S>,
    pub v: ModelParams<S>,
    pub step: u64,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update: decoupled weight decay applied multiplicatively
/// before the bias-corrected adaptive term.
pub fn adamw_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    state: &mut OptimState<S>,
    cfg: &TrainConfig,
) -> Result<(), TrainingError> {
    for slice in grads.flat_slices() {
        if !slice.iter().all(|v| v.is_finite()) {
            return Err(TrainingError::NonFiniteGradient);
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = S::from_f(cfg.learning_rate);
    let beta1 = S::from_f(cfg.beta1);
    let beta2 = S::from_f(cfg.beta2);
    let one_m_b1 = S::from_f(1.0 - cfg.beta1);
    let one_m_b2 = S::from_f(1.0 - cfg.beta2);
    let eps = S::from_f(cfg.eps);
    let decay = S::from_f(1.0 - cfg.learning_rate * cfg.weight_decay);
    let bc1 = S::from_f(1.0 - cfg.beta1.powi(t));
    let bc2 = S::from_f(1.0 - cfg.beta2.powi(t));

    let mut p = params.flat_slices_mut();
    let g = grads.flat_slices();
    let mut m = state.m.flat_slices_mut();
    let mut v = state.v.flat_slices_mut();
    for t_idx in 0..p.len() {
        let (ps, gs, ms, vs) = (&mut p[t_idx], &g[t_idx], &mut m[t_idx], &mut v[t_idx]);
        for i in 0..ps.len() {
            let grad = gs[i];
            ms[i] = beta1 * ms[i] + one_m_b1 * grad;
            vs[i] = beta2 * vs[i] + one_m_b2 * grad * grad;
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            ps[i] = ps[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale gradients so their global L2 norm is at most `max_norm`; returns
/// the pre-clip norm. Rescales once more if floating-point rounding leaves
/// the scaled norm above `max_norm + 1e-9`.
pub fn clip_global_norm<S: Scalar>(grads: &mut ModelParams<S>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    let mut current = norm;
    while current > max_norm + 1e-9 {
        let scale = S::from_f(max_norm / current);
        for slice in grads.flat_slices_mut() {
            for g in slice.iter_mut() {
                *g = *g * scale;
            }
        }
        current = global_norm(grads);
    }
    norm
}

/// Global L2 norm, accumulated in f64 regardless of the scalar type.
pub fn global_norm<S: Scalar>(grads: &ModelParams<S>) -> f64 {
    let mut sum = 0.0f64;
    for slice in grads.flat_slices() {
        for g in slice {
            let v = g.as_f64();
            sum += v * v;
        }
    }
    sum.sqrt()
}

/// Per-epoch training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Classification accuracy (percent) of a model over records' stored
/// images.
pub fn evaluate_accuracy<S: Scalar>(
    params: &ModelParams<S>,
    enc_cfg: &EncoderConfig,
    cropping: CroppingMode,
    records: &[SampleRecord],
    base_dir: &Path,
) -> Result<f64, TrainingError> {
    use rayon::prelude::*;
    if records.is_empty() {
        return Err(TrainingError::EmptyValidation);
    }
    let hits: Vec<bool> = records
        .par_iter()
        .map(|record| -> Result<bool, TrainingError> {
            let img = data::load_image(base_dir, record)?;
            let predicted = classify_image(params, enc_cfg, &img, cropping)?;
            Ok(predicted == record.rotation_class)
        })
        .collect::<Result<_, _>>()?;
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(100.0 * correct as f64 / records.len() as f64)
}

/// Train on the given split and return the checkpoint of the best
/// validation epoch (ties keep the earliest) plus the per-epoch history.
///
/// Stops after `patience` consecutive epochs without a strict validation
/// improvement, or at `max_epochs`.
pub fn train(
    train_records: &[SampleRecord],
    val_records: &[SampleRecord],
    base_dir: &Path,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochStats>), TrainingError> {
    use rand::seq::SliceRandom;
    if train_records.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    if val_records.is_empty() {
        return Err(TrainingError::EmptyValidation);
    }
    let mut model = ModelParams::<f32>::init(enc_cfg, cfg.head_mode, cfg.seed)?;
    let mut state = OptimState::new(&model);
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut epochs_without_improvement = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_records.len()).collect();
        order.shuffle(&mut crate::rng::derive(
            cfg.seed,
            &format!("epoch-shuffle/{epoch}"),
        ));

        let mut loss_sum = 0.0f64;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.zeros_like();
            let batch_scale = 1.0 / batch.len() as f32;
            for &idx in batch {
                let record = &train_records[idx];
                let img = data::load_image(base_dir, record)?;
                let crops = crops_for_image(&img, cfg.cropping_mode, enc_cfg.tile_px);
                let mut dropout_rng = crate::rng::derive(
                    cfg.seed,
                    &format!("dropout/{epoch}/{step}/{}", record.id),
                );
                let (logits, cache) = forward_crops(
                    &model,
                    enc_cfg,
                    &crops,
                    ForwardMode::Train(&mut dropout_rng),
                )?;
                let (loss, d_logits) = softmax_cross_entropy(&logits, record.rotation_class);
                if !loss.is_finite() {
                    return Err(TrainingError::NonFiniteLoss { epoch });
                }
                loss_sum += f64::from(loss);
                let d_scaled = d_logits.mapv(|v| v * batch_scale);
                backward_sample(&d_scaled, &cache, &model, &mut grads);
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            let clipped = global_norm(&grads);
            assert!(
                clipped <= cfg.clip_norm + 1e-9,
                "clipped norm {clipped} exceeds {}",
                cfg.clip_norm
            );
            adamw_step(&mut model, &grads, &mut state, cfg)?;
        }
        let train_loss = loss_sum / train_records.len() as f64;
        let val_accuracy =
            evaluate_accuracy(&model, enc_cfg, cfg.cropping_mode, val_records, base_dir)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy,
        });
        log::info!("epoch {epoch}: train loss {train_loss:.4}, val accuracy {val_accuracy:.2}%");

        let improved = best.as_ref().map_or(true, |(acc, _)| val_accuracy > *acc);
        if improved {
            let meta = CheckpointMeta {
                encoder: *enc_cfg,
                head_mode: cfg.head_mode,
                cropping_mode: cfg.cropping_mode,
                train_config: Some(cfg.clone()),
                best_val_accuracy: val_accuracy,
            };
            best = Some((val_accuracy, Checkpoint::from_model(&model, meta)));
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement > cfg.patience {
                break;
            }
        }
    }
    let (_, checkpoint) = best.expect("at least one epoch ran");
    Ok((checkpoint, history))
}

/// Write the per-epoch history as CSV (`epoch,train_loss,val_acc`).
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "epoch,train_loss,val_acc")?;
    for row in history {
        writeln!(
            file,
            "{},{:.6},{:.4}",
            row.epoch, row.train_loss, row.val_accuracy
        )?;
    }
    Ok(())
}

/// Compare the analytic full-model gradient (patch embed → encoder → pool
/// → head → loss, eval mode) against central finite differences over every
/// parameter; returns the maximum relative error
/// `|a - fd| / (|a| + |fd| + 1e-8)`. 64-bit only.
pub fn grad_check(
    enc_cfg: &EncoderConfig,
    head_mode: HeadMode,
    cropping: CroppingMode,
    img: &crate::imaging::ImageBuffer,
    label: crate::imaging::RotationClass,
    seed: u64,
    fd_step: f64,
) -> Result<f64, TrainingError> {
    let model = ModelParams::<f64>::init(enc_cfg, head_mode, seed)?;
    let crops = crops_for_image(img, cropping, enc_cfg.tile_px);

    let loss_of = |m: &ModelParams<f64>| -> Result<f64, TrainingError> {
        let (logits, _) = forward_crops(m, enc_cfg, &crops, ForwardMode::Eval)?;
        Ok(softmax_cross_entropy(&logits, label).0)
    };

    let (logits, cache) = forward_crops(&model, enc_cfg, &crops, ForwardMode::Eval)?;
    let (_, d_logits) = softmax_cross_entropy(&logits, label);
    let mut analytic = model.zeros_like();
    backward_sample(&d_logits, &cache, &model, &mut analytic);

    let mut probe = model.clone();
    let n_tensors = probe.flat_slices_mut().len();
    let mut max_rel = 0.0f64;
    for t in 0..n_tensors {
        let len = probe.flat_slices_mut()[t].len();
        for i in 0..len {
            let orig = probe.flat_slices_mut()[t][i];
            probe.flat_slices_mut()[t][i] = orig + fd_step;
            let up = loss_of(&probe)?;
            probe.flat_slices_mut()[t][i] = orig - fd_step;
            let down = loss_of(&probe)?;
            probe.flat_slices_mut()[t][i] = orig;
            let fd = (up - down) / (2.0 * fd_step);
            let a = analytic.flat_slices()[t][i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {got}, expected {want}")]
    VersionMismatch { got: u32, want: u32 },
    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("truncated tensor data for \"{0}\"")]
    TruncatedTensor(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

/// Everything a checkpoint carries besides the tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    pub head_mode: HeadMode,
    pub cropping_mode: CroppingMode,
    pub train_config: Option<TrainConfig>,
    pub best_val_accuracy: f64,
}

/// Named f32 tensors plus metadata; the on-disk format is
/// `"ORNT" | u32 version | u32 meta-JSON length | meta | u32 tensor count |
/// directory (name, dtype, shape, offset, length) | little-endian f32
/// payload`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl PartialEq for CheckpointMeta {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_string(self).unwrap() == serde_json::to_string(other).unwrap()
    }
}

impl Checkpoint {
    /// Snapshot model parameters, quantizing to f32.
    pub fn from_model<S: Scalar>(model: &ModelParams<S>, meta: CheckpointMeta) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(name, shape, data)| {
                (
                    name,
                    shape,
                    data.iter().map(|v| v.as_f64() as f32).collect(),
                )
            })
            .collect();
        Self { meta, tensors }
    }

    /// Rebuild model parameters; names and shapes must match what the
    /// declared config dictates.
    pub fn to_model<S: Scalar>(&self) -> Result<ModelParams<S>, CheckpointError> {
        let mut model = ModelParams::<S>::zeros(&self.meta.encoder, self.meta.head_mode)
            .map_err(|e| CheckpointError::ConfigMismatch(e.to_string()))?;
        let expected = model.named_tensors();
        if expected.len() != self.tensors.len() {
            return Err(CheckpointError::ConfigMismatch(format!(
                "checkpoint has {} tensors, config dictates {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((want_name, want_shape, want_data), (got_name, got_shape, _)) in
            expected.iter().zip(&self.tensors)
        {
            if want_name != got_name || want_shape != got_shape {
                return Err(CheckpointError::ConfigMismatch(format!(
                    "tensor \"{got_name}\" {got_shape:?} does not match expected \"{want_name}\" {want_shape:?}"
                )));
            }
            let _ = want_data;
        }
        for (slice, (_, _, data)) in model.flat_slices_mut().into_iter().zip(&self.tensors) {
            for (dst, src) in slice.iter_mut().zip(data.iter()) {
                *dst = S::from_f(f64::from(*src));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, shape, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(0u8); // dtype 0 = f32
            out.push(shape.len() as u8);
            for &dim in shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            let byte_len = (data.len() * 4) as u64;
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&byte_len.to_le_bytes());
            offset += byte_len;
        }
        for (_, _, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cursor = Reader {
            bytes: &bytes,
            pos: 0,
        };
        if cursor.take(4)? != &CHECKPOINT_MAGIC[..] {
            return Err(CheckpointError::BadMagic);
        }
        let version = cursor.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                got: version,
                want: CHECKPOINT_VERSION,
            });
        }
        let meta_len = cursor.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(cursor.take(meta_len)?)
            .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
        let tensor_count = cursor.u32()? as usize;
        let mut directory = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let name_len = cursor.u16()? as usize;
            let name = String::from_utf8(cursor.take(name_len)?.to_vec())
                .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
            let dtype = cursor.u8()?;
            if dtype != 0 {
                return Err(CheckpointError::CorruptHeader(format!(
                    "tensor \"{name}\" has unknown dtype {dtype}"
                )));
            }
            let ndim = cursor.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cursor.u32()? as usize);
            }
            let offset = cursor.u64()?;
            let byte_len = cursor.u64()?;
            directory.push((name, shape, offset, byte_len));
        }
        let payload_start = cursor.pos;
        let mut tensors = Vec::with_capacity(tensor_count);
        for (name, shape, offset, byte_len) in directory {
            let elements: usize = shape.iter().product();
            if byte_len as usize != elements * 4 {
                return Err(CheckpointError::CorruptHeader(format!(
                    "tensor \"{name}\" length {byte_len} does not match shape {shape:?}"
                )));
            }
            let start = payload_start + offset as usize;
            let end = start + byte_len as usize;
            if end > bytes.len() {
                return Err(CheckpointError::TruncatedTensor(name));
            }
            let data: Vec<f32> = bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, shape, data));
        }
        let ckpt = Self { meta, tensors };
        // Shape-check against the declared config up front.
        ckpt.to_model::<f32>()?;
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::CorruptHeader(
                "unexpected end of file".into(),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

/// Convenience for tests and the oracle paths: loss of one labeled sample.
pub fn sample_loss<S: Scalar>(
    model: &ModelParams<S>,
    enc_cfg: &EncoderConfig,
    img: &crate::imaging::ImageBuffer,
    label: crate::imaging::RotationClass,
    cropping: CroppingMode,
) -> Result<(f64, Array1<S>), TrainingError> {
    let crops = crops_for_image(img, cropping, enc_cfg.tile_px);
    let (logits, _) = forward_crops(model, enc_cfg, &crops, ForwardMode::Eval)?;
    let (loss, _) = softmax_cross_entropy(&logits, label);
    Ok((loss.as_f64(), logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::RotationClass;

    fn tiny_model(seed: u64) -> (EncoderConfig, ModelParams<f64>) {
        let cfg = EncoderConfig::tiny();
        let model = ModelParams::<f64>::init(&cfg, HeadMode::MultiLayer, seed).unwrap();
        (cfg, model)
    }

    #[test]
    fn adamw_zero_grads_and_decay() {
        let (_, mut model) = tiny_model(1);
        let before: Vec<f64> = model
            .flat_slices()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect();
        let grads = model.zeros_like();
        let mut state = OptimState::new(&model);

        // zero grads, zero decay: parameters unchanged, step advances
        let mut cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        adamw_step(&mut model, &grads, &mut state, &cfg).unwrap();
        assert_eq!(state.step, 1);
        let after: Vec<f64> = model
            .flat_slices()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect();
        assert_eq!(before, after);

        // zero grads, positive decay: every parameter shrinks by (1 - lr*wd)
        cfg.weight_decay = 0.01;
        adamw_step(&mut model, &grads, &mut state, &cfg).unwrap();
        let decayed: Vec<f64> = model
            .flat_slices()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect();
        let factor = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for (b, d) in after.iter().zip(decayed.iter()) {
            assert!((d - b * factor).abs() < 1e-15);
        }
    }

    #[test]
    fn adamw_first_step_magnitude() {
        // On the first bias-corrected step with wd=0 the update is
        // lr * g / (|g| + eps'), i.e. almost exactly lr in magnitude.
        let (_, mut model) = tiny_model(2);
        let start = model.flat_slices()[0][0];
        let mut grads = model.zeros_like();
        grads.flat_slices_mut()[0][0] = 0.37;
        let mut state = OptimState::new(&model);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        adamw_step(&mut model, &grads, &mut state, &cfg).unwrap();
        let delta = model.flat_slices()[0][0] - start;
        assert!(delta < 0.0, "moves against the gradient");
        assert!((delta.abs() - cfg.learning_rate).abs() < 1e-6);
    }

    #[test]
    fn adamw_rejects_non_finite_grads() {
        let (_, mut model) = tiny_model(3);
        let mut grads = model.zeros_like();
        grads.flat_slices_mut()[0][0] = f64::NAN;
        let mut state = OptimState::new(&model);
        assert!(matches!(
            adamw_step(&mut model, &grads, &mut state, &TrainConfig::default()),
            Err(TrainingError::NonFiniteGradient)
        ));
    }

    #[test]
    fn clip_scales_only_above_threshold() {
        let (_, model) = tiny_model(4);
        let mut grads = model.zeros_like();
        {
            let mut slices = grads.flat_slices_mut();
            slices[0][0] = 1.2;
            slices[0][1] = 1.6; // norm 2.0
        }
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!((pre - 2.0).abs() < 1e-12);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-9);
        assert!((grads.flat_slices()[0][0] - 0.6).abs() < 1e-9);

        let mut small = model.zeros_like();
        small.flat_slices_mut()[0][0] = 0.5;
        let pre = clip_global_norm(&mut small, 1.0);
        assert!((pre - 0.5).abs() < 1e-12);
        assert!((small.flat_slices()[0][0] - 0.5).abs() < 1e-15);

        let mut zero = model.zeros_like();
        clip_global_norm(&mut zero, 1.0);
        assert!(global_norm(&zero) == 0.0);
    }

    #[test]
    fn overfits_a_single_sample() {
        // Optimizer + full backward integration: repeated steps on one
        // sample drive its loss to nearly zero.
        let (cfg, mut model) = tiny_model(5);
        let img = crate::data::synth_document(77, &crate::data::SynthConfig::default()).unwrap();
        let label = RotationClass::Cw90;
        let crops = crops_for_image(&img, CroppingMode::GlobalOnly, cfg.tile_px);
        let mut state = OptimState::new(&model);
        let tcfg = TrainConfig {
            learning_rate: 3e-3,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut first = None;
        let mut last = f64::MAX;
        for _ in 0..300 {
            let (logits, cache) =
                forward_crops(&model, &cfg, &crops, ForwardMode::Eval).unwrap();
            let (loss, d_logits) = softmax_cross_entropy(&logits, label);
            first.get_or_insert(loss);
            last = loss;
            let mut grads = model.zeros_like();
            backward_sample(&d_logits, &cache, &model, &mut grads);
            clip_global_norm(&mut grads, 1.0);
            adamw_step(&mut model, &grads, &mut state, &tcfg).unwrap();
        }
        assert!(last < 0.01, "loss stayed at {last} (started {:?})", first);
    }

    #[test]
    fn grad_check_tiny_config() {
        let img = crate::data::synth_document(7, &crate::data::SynthConfig::default()).unwrap();
        let small = crate::imaging::resize_bilinear(&img, 28, 52);
        let max_rel = grad_check(
            &EncoderConfig::tiny(),
            HeadMode::MultiLayer,
            CroppingMode::GlobalOnly,
            &small,
            RotationClass::UpsideDown,
            9,
            1e-4,
        )
        .unwrap();
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let cfg = EncoderConfig::tiny();
        let model = ModelParams::<f32>::init(&cfg, HeadMode::MultiLayer, 21).unwrap();
        let meta = CheckpointMeta {
            encoder: cfg,
            head_mode: HeadMode::MultiLayer,
            cropping_mode: CroppingMode::Dynamic,
            train_config: Some(TrainConfig::default()),
            best_val_accuracy: 97.5,
        };
        let ckpt = Checkpoint::from_model(&model, meta);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ornt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);

        // and the rebuilt model matches the snapshot exactly at f32
        let restored: ModelParams<f32> = loaded.to_model().unwrap();
        for (a, b) in model.flat_slices().into_iter().zip(restored.flat_slices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let cfg = EncoderConfig::tiny();
        let model = ModelParams::<f32>::init(&cfg, HeadMode::SingleLayer, 22).unwrap();
        let meta = CheckpointMeta {
            encoder: cfg,
            head_mode: HeadMode::SingleLayer,
            cropping_mode: CroppingMode::GlobalOnly,
            train_config: None,
            best_val_accuracy: 0.0,
        };
        let ckpt = Checkpoint::from_model(&model, meta);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ornt");
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // bad magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::BadMagic)));

        // version mismatch
        let mut bad = bytes.clone();
        bad[4] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::VersionMismatch { got: 99, .. })
        ));

        // truncated payload
        let bad = &bytes[..bytes.len() - 5];
        std::fs::write(&path, bad).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::TruncatedTensor(_))
        ));

        // config mismatch: declare a different head mode than the tensors
        let mut lying = ckpt.clone();
        lying.meta.head_mode = HeadMode::MultiLayer;
        std::fs::write(&path, {
            lying.save(&path).unwrap();
            std::fs::read(&path).unwrap()
        })
        .unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::ConfigMismatch(_))
        ));
    }
}
