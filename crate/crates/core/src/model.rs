//! Full rotation classifier: encoder plus one of the two heads.
//!
//! Owns parameter initialization, the flat tensor traversal shared by the
//! optimizer / clipping / checkpoints / finite differences, and the
//! per-sample forward and backward passes over a set of crops.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    cls_pool, crop_backward, crop_forward, CropCache, EncoderConfig, EncoderError,
    EncoderParams,
};
use crate::head::{
    self, head_backward, head_forward, single_layer_backward, single_layer_forward, ForwardMode,
    HeadCache, HeadError, HeadParams, SingleLayerHeadParams,
};
use crate::imaging::{self, ImageBuffer};
use crate::numeric::Scalar;
use crate::tiling;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
}

/// Classification head variant of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    MultiLayer,
    SingleLayer,
}

impl std::fmt::Display for HeadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadMode::MultiLayer => write!(f, "multi_layer"),
            HeadMode::SingleLayer => write!(f, "single_layer"),
        }
    }
}

/// Crop production strategy of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CroppingMode {
    /// Tile grid plus the global view.
    Dynamic,
    /// Single globally resized view only.
    GlobalOnly,
}

impl std::fmt::Display for CroppingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CroppingMode::Dynamic => write!(f, "dynamic"),
            CroppingMode::GlobalOnly => write!(f, "global_only"),
        }
    }
}

/// Produce the encoder inputs for one image under the given strategy.
pub fn crops_for_image(
    img: &ImageBuffer,
    mode: CroppingMode,
    tile_px: u32,
) -> Vec<ImageBuffer> {
    match mode {
        CroppingMode::Dynamic => {
            let plan = tiling::plan_tiling(
                img.width(),
                img.height(),
                tile_px,
                tiling::MAX_LOCAL_CROPS,
            );
            tiling::extract_crops(img, &plan)
        }
        CroppingMode::GlobalOnly => vec![imaging::resize_bilinear(img, tile_px, tile_px)],
    }
}

#[derive(Debug, Clone)]
pub enum HeadVariant<S> {
    MultiLayer(HeadParams<S>),
    SingleLayer(SingleLayerHeadParams<S>),
}

/// Every trainable tensor of the classifier.
#[derive(Debug, Clone)]
pub struct ModelParams<S> {
    pub encoder: EncoderParams<S>,
    pub head: HeadVariant<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(cfg: &EncoderConfig, head_mode: HeadMode) -> Result<Self, ModelError> {
        cfg.validate()?;
        let head = match head_mode {
            HeadMode::MultiLayer => HeadVariant::MultiLayer(HeadParams::zeros(cfg.dim)?),
            HeadMode::SingleLayer => HeadVariant::SingleLayer(SingleLayerHeadParams::zeros(cfg.dim)),
        };
        Ok(Self {
            encoder: EncoderParams::zeros(cfg),
            head,
        })
    }

    /// Seeded init: weight matrices and embeddings from N(0, 0.02),
    /// biases zero, layernorm scales one.
    pub fn init(cfg: &EncoderConfig, head_mode: HeadMode, seed: u64) -> Result<Self, ModelError> {
        let mut model = Self::zeros(cfg, head_mode)?;
        let mut rng = crate::rng::derive(seed, "model-init");
        let std = 0.02;
        let fill2 = |a: &mut Array2<S>, rng: &mut rand_chacha::ChaCha8Rng| {
            for v in a.iter_mut() {
                *v = S::from_f(randn(rng) * std);
            }
        };
        fill2(&mut model.encoder.patch_proj, &mut rng);
        for v in model.encoder.cls_token.iter_mut() {
            *v = S::from_f(randn(&mut rng) * std);
        }
        fill2(&mut model.encoder.pos_embed, &mut rng);
        for block in &mut model.encoder.blocks {
            block.ln1.gamma.fill(S::one());
            block.ln2.gamma.fill(S::one());
            fill2(&mut block.attn.wq, &mut rng);
            fill2(&mut block.attn.wk, &mut rng);
            fill2(&mut block.attn.wv, &mut rng);
            fill2(&mut block.attn.wo, &mut rng);
            fill2(&mut block.mlp.w1, &mut rng);
            fill2(&mut block.mlp.w2, &mut rng);
        }
        model.encoder.final_ln.gamma.fill(S::one());
        match &mut model.head {
            HeadVariant::MultiLayer(h) => {
                fill2(&mut h.w1, &mut rng);
                fill2(&mut h.w2, &mut rng);
            }
            HeadVariant::SingleLayer(h) => {
                fill2(&mut h.w, &mut rng);
            }
        }
        Ok(model)
    }

    pub fn head_mode(&self) -> HeadMode {
        match &self.head {
            HeadVariant::MultiLayer(_) => HeadMode::MultiLayer,
            HeadVariant::SingleLayer(_) => HeadMode::SingleLayer,
        }
    }

    /// All tensors as `(name, shape, flat data)`, encoder first, in the
    /// same fixed order as [`flat_slices_mut`].
    ///
    /// [`flat_slices_mut`]: Self::flat_slices_mut
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut out: Vec<(String, Vec<usize>, &[S])> = self
            .encoder
            .named_tensors()
            .into_iter()
            .map(|(name, shape, data)| (format!("encoder.{name}"), shape, data))
            .collect();
        let head_tensors = match &self.head {
            HeadVariant::MultiLayer(h) => h.named_tensors(),
            HeadVariant::SingleLayer(h) => h.named_tensors(),
        };
        out.extend(
            head_tensors
                .into_iter()
                .map(|(name, shape, data)| (format!("head.{name}"), shape, data)),
        );
        out
    }

    pub fn flat_slices(&self) -> Vec<&[S]> {
        let mut out = self.encoder.flat_slices();
        match &self.head {
            HeadVariant::MultiLayer(h) => out.extend(h.flat_slices()),
            HeadVariant::SingleLayer(h) => out.extend(h.flat_slices()),
        }
        out
    }

    pub fn flat_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = self.encoder.flat_slices_mut();
        match &mut self.head {
            HeadVariant::MultiLayer(h) => out.extend(h.flat_slices_mut()),
            HeadVariant::SingleLayer(h) => out.extend(h.flat_slices_mut()),
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Same shapes, all zeros; the gradient/optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        let mut clone = self.clone();
        for slice in clone.flat_slices_mut() {
            slice.fill(S::zero());
        }
        clone
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: S) {
        for (dst, src) in self.flat_slices_mut().into_iter().zip(other.flat_slices()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d = *d + *s * scale;
            }
        }
    }
}

fn randn(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    // Box-Muller from two uniforms
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub enum HeadCacheVariant<S> {
    MultiLayer(HeadCache<S>),
    SingleLayer,
}

/// Activations for one sample's forward pass (all crops plus the head).
pub struct SampleCache<S> {
    crop_caches: Vec<CropCache<S>>,
    crop_token_dims: (usize, usize),
    pooled: Array1<S>,
    head: HeadCacheVariant<S>,
}

/// Forward over a sample's crops: encode each crop, pool the CLS rows,
/// run the head. `mode` controls dropout only.
pub fn forward_crops<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &EncoderConfig,
    crops: &[ImageBuffer],
    mode: ForwardMode,
) -> Result<(Array1<S>, SampleCache<S>), ModelError> {
    let mut outputs: Vec<Array2<S>> = Vec::with_capacity(crops.len());
    let mut caches = Vec::with_capacity(crops.len());
    for crop in crops {
        let (out, cache) = crop_forward(crop, &params.encoder, cfg)?;
        outputs.push(out);
        caches.push(cache);
    }
    let pooled = cls_pool(&outputs)?;
    let (logits, head_cache) = match &params.head {
        HeadVariant::MultiLayer(h) => {
            let (logits, cache) = head_forward(&pooled, h, mode)?;
            (logits, HeadCacheVariant::MultiLayer(cache))
        }
        HeadVariant::SingleLayer(h) => (
            single_layer_forward(&pooled, h)?,
            HeadCacheVariant::SingleLayer,
        ),
    };
    Ok((
        logits,
        SampleCache {
            crop_caches: caches,
            crop_token_dims: (cfg.tokens(), cfg.dim),
            pooled,
            head: head_cache,
        },
    ))
}

/// Backward for one sample: head, then the pooled-CLS gradient fans out as
/// `1/num_crops` into each crop's CLS row. Accumulates into `grads`.
pub fn backward_sample<S: Scalar>(
    d_logits: &Array1<S>,
    cache: &SampleCache<S>,
    params: &ModelParams<S>,
    grads: &mut ModelParams<S>,
) {
    let d_pooled = match (&cache.head, &params.head, &mut grads.head) {
        (HeadCacheVariant::MultiLayer(hc), HeadVariant::MultiLayer(h), HeadVariant::MultiLayer(g)) => {
            head_backward(d_logits, hc, h, g)
        }
        (HeadCacheVariant::SingleLayer, HeadVariant::SingleLayer(h), HeadVariant::SingleLayer(g)) => {
            single_layer_backward(d_logits, &cache.pooled, h, g)
        }
        _ => unreachable!("cache, params, and grads share one head mode"),
    };
    let n = cache.crop_caches.len();
    let share = d_pooled.mapv(|v| v / S::from_f(n as f64));
    let (tokens, dim) = cache.crop_token_dims;
    for crop_cache in &cache.crop_caches {
        let mut d_out = Array2::<S>::zeros((tokens, dim));
        d_out.row_mut(0).assign(&share);
        crop_backward(&d_out, crop_cache, &params.encoder, &mut grads.encoder);
    }
}

/// Eval-mode logits for an image under a cropping strategy.
pub fn image_logits<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &EncoderConfig,
    img: &ImageBuffer,
    cropping: CroppingMode,
) -> Result<Array1<S>, ModelError> {
    let crops = crops_for_image(img, cropping, cfg.tile_px);
    let (logits, _) = forward_crops(params, cfg, &crops, ForwardMode::Eval)?;
    Ok(logits)
}

/// Eval-mode class prediction for an image.
pub fn classify_image<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &EncoderConfig,
    img: &ImageBuffer,
    cropping: CroppingMode,
) -> Result<crate::imaging::RotationClass, ModelError> {
    Ok(head::predict(&image_logits(params, cfg, img, cropping)?))
}

#[test]
#[ignore]
fn desk_throughput_probe() {
    use crate::model::*;
    use crate::encoder::EncoderConfig;
    use crate::head::{softmax_cross_entropy, ForwardMode};
    use crate::imaging::RotationClass;
    let cfg = EncoderConfig::desk();
    let model = ModelParams::<f32>::init(&cfg, HeadMode::MultiLayer, 1).unwrap();
    let img = crate::data::synth_document(5, &crate::data::SynthConfig::default()).unwrap();
    let crops = crops_for_image(&img, CroppingMode::Dynamic, cfg.tile_px);
    eprintln!("crops per sample: {}", crops.len());
    let t0 = std::time::Instant::now();
    let n = 20;
    for _ in 0..n {
        let (logits, cache) = forward_crops(&model, &cfg, &crops, ForwardMode::Eval).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, RotationClass::Upright);
        let mut grads = model.zeros_like();
        backward_sample(&d, &cache, &model, &mut grads);
    }
    let per_sample = t0.elapsed().as_secs_f64() / n as f64;
    eprintln!("fwd+bwd per sample: {:.1} ms  -> epoch(4000) ~ {:.1}s", per_sample*1e3, per_sample*4000.0);
    let t1 = std::time::Instant::now();
    for _ in 0..n {
        let _ = forward_crops(&model, &cfg, &crops, ForwardMode::Eval).unwrap();
    }
    eprintln!("fwd-only per sample: {:.1} ms -> val(800) ~ {:.1}s", t1.elapsed().as_secs_f64()/n as f64*1e3, t1.elapsed().as_secs_f64()/n as f64*800.0);
}
