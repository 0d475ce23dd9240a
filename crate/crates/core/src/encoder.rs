//! Patch-embedding + transformer encoder with an analytic backward pass.
//!
//! Layout convention: a crop becomes a token matrix of shape `L x D` with
//! the CLS token at row 0, `L = (tile/patch)^2 + 1`. Blocks are pre-norm
//! (`x += MHSA(LN(x))`, `x += MLP(LN(x))`) with a final layernorm, the
//! arrangement used by the CLIP-family encoders this mirrors. Forward
//! functions return caches holding exactly the activations the backward
//! pass needs; gradients accumulate into an `EncoderParams` of identical
//! shape so the optimizer can walk both in lockstep.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::ImageBuffer;
use crate::numeric::{gelu, gelu_prime, Scalar};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("crop is {got_w}x{got_h}, expected {want}x{want}")]
    CropSizeMismatch { got_w: u32, got_h: u32, want: u32 },
    #[error("token matrix is {got_rows}x{got_cols}, expected width {want_cols}")]
    TokenShapeMismatch {
        got_rows: usize,
        got_cols: usize,
        want_cols: usize,
    },
    #[error("numeric overflow in encoder")]
    NumericOverflow,
    #[error("cls_pool requires at least one crop output")]
    EmptyCropList,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

/// Architecture hyperparameters of the vision encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub tile_px: u32,
    pub patch_px: u32,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

impl EncoderConfig {
    /// Paper-scale shapes (CLIP ViT-L/14 at 336px): used for token-count
    /// contracts only; training at this scale is out of reach here.
    pub fn paper() -> Self {
        Self {
            tile_px: 336,
            patch_px: 14,
            dim: 1024,
            layers: 24,
            heads: 16,
            mlp_hidden: 4096,
        }
    }

    /// Workstation-scale config actually trained in this artifact.
    pub fn desk() -> Self {
        Self {
            tile_px: 112,
            patch_px: 14,
            dim: 64,
            layers: 2,
            heads: 4,
            mlp_hidden: 256,
        }
    }

    /// Minimal config for finite-difference gradient verification.
    pub fn tiny() -> Self {
        Self {
            tile_px: 28,
            patch_px: 14,
            dim: 8,
            layers: 1,
            heads: 2,
            mlp_hidden: 32,
        }
    }

    /// Patches per side of a tile.
    pub fn patches_per_side(&self) -> usize {
        (self.tile_px / self.patch_px) as usize
    }

    /// Token count per crop including the CLS token.
    pub fn tokens(&self) -> usize {
        self.patches_per_side() * self.patches_per_side() + 1
    }

    /// Flattened patch length (`3 * patch^2`).
    pub fn patch_len(&self) -> usize {
        3 * (self.patch_px * self.patch_px) as usize
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.tile_px == 0 || self.patch_px == 0 || self.tile_px % self.patch_px != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "tile {} not divisible by patch {}",
                self.tile_px, self.patch_px
            )));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 || self.mlp_hidden == 0 {
            return Err(EncoderError::InvalidConfig(
                "layers and mlp_hidden must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams<S> {
    pub gamma: Array1<S>,
    pub beta: Array1<S>,
}

#[derive(Debug, Clone)]
pub struct AttentionParams<S> {
    pub wq: Array2<S>,
    pub bq: Array1<S>,
    pub wk: Array2<S>,
    pub bk: Array1<S>,
    pub wv: Array2<S>,
    pub bv: Array1<S>,
    pub wo: Array2<S>,
    pub bo: Array1<S>,
}

#[derive(Debug, Clone)]
pub struct MlpParams<S> {
    pub w1: Array2<S>,
    pub b1: Array1<S>,
    pub w2: Array2<S>,
    pub b2: Array1<S>,
}

#[derive(Debug, Clone)]
pub struct BlockParams<S> {
    pub ln1: LayerNormParams<S>,
    pub attn: AttentionParams<S>,
    pub ln2: LayerNormParams<S>,
    pub mlp: MlpParams<S>,
}

/// Every trainable tensor of the encoder.
#[derive(Debug, Clone)]
pub struct EncoderParams<S> {
    pub patch_proj: Array2<S>,
    pub patch_bias: Array1<S>,
    pub cls_token: Array1<S>,
    pub pos_embed: Array2<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub final_ln: LayerNormParams<S>,
}

impl<S: Scalar> EncoderParams<S> {
    /// Zero-valued parameters with the shapes the config dictates
    /// (layernorm scales included; callers that want a usable model
    /// initialize through [`crate::model::ModelParams::init`]).
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let (d, hidden, l) = (cfg.dim, cfg.mlp_hidden, cfg.tokens());
        let ln = || LayerNormParams {
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
        };
        let block = || BlockParams {
            ln1: ln(),
            attn: AttentionParams {
                wq: Array2::zeros((d, d)),
                bq: Array1::zeros(d),
                wk: Array2::zeros((d, d)),
                bk: Array1::zeros(d),
                wv: Array2::zeros((d, d)),
                bv: Array1::zeros(d),
                wo: Array2::zeros((d, d)),
                bo: Array1::zeros(d),
            },
            ln2: ln(),
            mlp: MlpParams {
                w1: Array2::zeros((hidden, d)),
                b1: Array1::zeros(hidden),
                w2: Array2::zeros((d, hidden)),
                b2: Array1::zeros(d),
            },
        };
        Self {
            patch_proj: Array2::zeros((d, cfg.patch_len())),
            patch_bias: Array1::zeros(d),
            cls_token: Array1::zeros(d),
            pos_embed: Array2::zeros((l, d)),
            blocks: (0..cfg.layers).map(|_| block()).collect(),
            final_ln: ln(),
        }
    }

    /// Visit every tensor as `(name, shape, flat data)` in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[S])> {
        fn flat2<S>(a: &Array2<S>) -> &[S] {
            a.as_slice().expect("standard layout")
        }
        fn flat1<S>(a: &Array1<S>) -> &[S] {
            a.as_slice().expect("standard layout")
        }
        let mut out: Vec<(String, Vec<usize>, &[S])> = vec![
            (
                "patch_proj".into(),
                self.patch_proj.shape().to_vec(),
                flat2(&self.patch_proj),
            ),
            (
                "patch_bias".into(),
                vec![self.patch_bias.len()],
                flat1(&self.patch_bias),
            ),
            (
                "cls_token".into(),
                vec![self.cls_token.len()],
                flat1(&self.cls_token),
            ),
            (
                "pos_embed".into(),
                self.pos_embed.shape().to_vec(),
                flat2(&self.pos_embed),
            ),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |suffix: &str| format!("block{i}.{suffix}");
            out.push((p("ln1.gamma"), vec![b.ln1.gamma.len()], flat1(&b.ln1.gamma)));
            out.push((p("ln1.beta"), vec![b.ln1.beta.len()], flat1(&b.ln1.beta)));
            out.push((p("attn.wq"), b.attn.wq.shape().to_vec(), flat2(&b.attn.wq)));
            out.push((p("attn.bq"), vec![b.attn.bq.len()], flat1(&b.attn.bq)));
            out.push((p("attn.wk"), b.attn.wk.shape().to_vec(), flat2(&b.attn.wk)));
            out.push((p("attn.bk"), vec![b.attn.bk.len()], flat1(&b.attn.bk)));
            out.push((p("attn.wv"), b.attn.wv.shape().to_vec(), flat2(&b.attn.wv)));
            out.push((p("attn.bv"), vec![b.attn.bv.len()], flat1(&b.attn.bv)));
            out.push((p("attn.wo"), b.attn.wo.shape().to_vec(), flat2(&b.attn.wo)));
            out.push((p("attn.bo"), vec![b.attn.bo.len()], flat1(&b.attn.bo)));
            out.push((p("ln2.gamma"), vec![b.ln2.gamma.len()], flat1(&b.ln2.gamma)));
            out.push((p("ln2.beta"), vec![b.ln2.beta.len()], flat1(&b.ln2.beta)));
            out.push((p("mlp.w1"), b.mlp.w1.shape().to_vec(), flat2(&b.mlp.w1)));
            out.push((p("mlp.b1"), vec![b.mlp.b1.len()], flat1(&b.mlp.b1)));
            out.push((p("mlp.w2"), b.mlp.w2.shape().to_vec(), flat2(&b.mlp.w2)));
            out.push((p("mlp.b2"), vec![b.mlp.b2.len()], flat1(&b.mlp.b2)));
        }
        out.push((
            "final_ln.gamma".into(),
            vec![self.final_ln.gamma.len()],
            flat1(&self.final_ln.gamma),
        ));
        out.push((
            "final_ln.beta".into(),
            vec![self.final_ln.beta.len()],
            flat1(&self.final_ln.beta),
        ));
        out
    }

    /// Flat slices in the same order as [`named_tensors`].
    ///
    /// [`named_tensors`]: Self::named_tensors
    pub fn flat_slices(&self) -> Vec<&[S]> {
        fn f2<S>(a: &Array2<S>) -> &[S] {
            a.as_slice().expect("standard layout")
        }
        fn f1<S>(a: &Array1<S>) -> &[S] {
            a.as_slice().expect("standard layout")
        }
        let mut out: Vec<&[S]> = vec![
            f2(&self.patch_proj),
            f1(&self.patch_bias),
            f1(&self.cls_token),
            f2(&self.pos_embed),
        ];
        for b in &self.blocks {
            out.push(f1(&b.ln1.gamma));
            out.push(f1(&b.ln1.beta));
            out.push(f2(&b.attn.wq));
            out.push(f1(&b.attn.bq));
            out.push(f2(&b.attn.wk));
            out.push(f1(&b.attn.bk));
            out.push(f2(&b.attn.wv));
            out.push(f1(&b.attn.bv));
            out.push(f2(&b.attn.wo));
            out.push(f1(&b.attn.bo));
            out.push(f1(&b.ln2.gamma));
            out.push(f1(&b.ln2.beta));
            out.push(f2(&b.mlp.w1));
            out.push(f1(&b.mlp.b1));
            out.push(f2(&b.mlp.w2));
            out.push(f1(&b.mlp.b2));
        }
        out.push(f1(&self.final_ln.gamma));
        out.push(f1(&self.final_ln.beta));
        out
    }

    /// Mutable flat slices in the same order as [`named_tensors`].
    ///
    /// [`named_tensors`]: Self::named_tensors
    pub fn flat_slices_mut(&mut self) -> Vec<&mut [S]> {
        fn f2<S>(a: &mut Array2<S>) -> &mut [S] {
            a.as_slice_mut().expect("standard layout")
        }
        fn f1<S>(a: &mut Array1<S>) -> &mut [S] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out: Vec<&mut [S]> = vec![
            f2(&mut self.patch_proj),
            f1(&mut self.patch_bias),
            f1(&mut self.cls_token),
            f2(&mut self.pos_embed),
        ];
        for b in &mut self.blocks {
            out.push(f1(&mut b.ln1.gamma));
            out.push(f1(&mut b.ln1.beta));
            out.push(f2(&mut b.attn.wq));
            out.push(f1(&mut b.attn.bq));
            out.push(f2(&mut b.attn.wk));
            out.push(f1(&mut b.attn.bk));
            out.push(f2(&mut b.attn.wv));
            out.push(f1(&mut b.attn.bv));
            out.push(f2(&mut b.attn.wo));
            out.push(f1(&mut b.attn.bo));
            out.push(f1(&mut b.ln2.gamma));
            out.push(f1(&mut b.ln2.beta));
            out.push(f2(&mut b.mlp.w1));
            out.push(f1(&mut b.mlp.b1));
            out.push(f2(&mut b.mlp.w2));
            out.push(f1(&mut b.mlp.b2));
        }
        out.push(f1(&mut self.final_ln.gamma));
        out.push(f1(&mut self.final_ln.beta));
        out
    }
}

pub struct LayerNormCache<S> {
    normalized: Array2<S>,
    inv_std: Array1<S>,
}

pub struct AttentionCache<S> {
    input: Array2<S>,
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    /// Per-head softmax rows; each row is a probability vector.
    pub attn: Vec<Array2<S>>,
    ctx: Array2<S>,
}

pub struct MlpCache<S> {
    input: Array2<S>,
    pre_act: Array2<S>,
    act: Array2<S>,
}

pub struct BlockCache<S> {
    ln1: LayerNormCache<S>,
    attn: AttentionCache<S>,
    ln2: LayerNormCache<S>,
    mlp: MlpCache<S>,
}

/// Everything the backward pass needs for one crop.
pub struct CropCache<S> {
    patches: Array2<S>,
    pub blocks: Vec<BlockCache<S>>,
    final_ln: LayerNormCache<S>,
}

fn layernorm_forward<S: Scalar>(
    x: &Array2<S>,
    p: &LayerNormParams<S>,
) -> (Array2<S>, LayerNormCache<S>) {
    let eps = S::from_f(LN_EPS);
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("rows");
    let inv_std = var.mapv(|v| S::one() / (v + eps).sqrt());
    let normalized = &centered * &inv_std.clone().insert_axis(Axis(1));
    let mut out = &normalized * &p.gamma;
    out += &p.beta;
    (out, LayerNormCache { normalized, inv_std })
}

fn layernorm_backward<S: Scalar>(
    d_out: &Array2<S>,
    cache: &LayerNormCache<S>,
    p: &LayerNormParams<S>,
    d_p: &mut LayerNormParams<S>,
) -> Array2<S> {
    let d = S::from_f(d_out.ncols() as f64);
    d_p.gamma += &(d_out * &cache.normalized).sum_axis(Axis(0));
    d_p.beta += &d_out.sum_axis(Axis(0));
    let d_norm = d_out * &p.gamma;
    let s1 = d_norm.sum_axis(Axis(1)).insert_axis(Axis(1));
    let s2 = (&d_norm * &cache.normalized)
        .sum_axis(Axis(1))
        .insert_axis(Axis(1));
    let scale = cache.inv_std.mapv(|v| v / d).insert_axis(Axis(1));
    (d_norm.mapv(|v| v * d) - &s1 - &cache.normalized * &s2) * &scale
}

fn attention_forward<S: Scalar>(
    x: &Array2<S>,
    p: &AttentionParams<S>,
    heads: usize,
) -> (Array2<S>, AttentionCache<S>) {
    let (l, d) = (x.nrows(), x.ncols());
    let dh = d / heads;
    let scale = S::from_f(1.0 / (dh as f64).sqrt());
    let mut q = x.dot(&p.wq.t());
    q += &p.bq;
    let mut k = x.dot(&p.wk.t());
    k += &p.bk;
    let mut v = x.dot(&p.wv.t());
    v += &p.bv;
    let mut ctx = Array2::<S>::zeros((l, d));
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|s| s * scale);
        // stable row softmax
        for mut row in scores.rows_mut() {
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            row.mapv_inplace(|s| (s - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|s| s / sum);
        }
        ctx.slice_mut(s![.., cols]).assign(&scores.dot(&vh));
        attn.push(scores);
    }
    let mut out = ctx.dot(&p.wo.t());
    out += &p.bo;
    (
        out,
        AttentionCache {
            input: x.clone(),
            q,
            k,
            v,
            attn,
            ctx,
        },
    )
}

fn attention_backward<S: Scalar>(
    d_out: &Array2<S>,
    cache: &AttentionCache<S>,
    p: &AttentionParams<S>,
    d_p: &mut AttentionParams<S>,
) -> Array2<S> {
    let (l, d) = (d_out.nrows(), d_out.ncols());
    let heads = cache.attn.len();
    let dh = d / heads;
    let scale = S::from_f(1.0 / (dh as f64).sqrt());

    d_p.wo += &d_out.t().dot(&cache.ctx);
    d_p.bo += &d_out.sum_axis(Axis(0));
    let d_ctx = d_out.dot(&p.wo);

    let mut d_q = Array2::<S>::zeros((l, d));
    let mut d_k = Array2::<S>::zeros((l, d));
    let mut d_v = Array2::<S>::zeros((l, d));
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let attn = &cache.attn[h];
        let d_ctx_h = d_ctx.slice(s![.., cols.clone()]);
        let vh = cache.v.slice(s![.., cols.clone()]);
        let qh = cache.q.slice(s![.., cols.clone()]);
        let kh = cache.k.slice(s![.., cols.clone()]);

        d_v.slice_mut(s![.., cols.clone()])
            .assign(&attn.t().dot(&d_ctx_h));
        let d_attn = d_ctx_h.dot(&vh.t());
        // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A))
        let row_dot = (&d_attn * attn).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut d_scores = attn * &(&d_attn - &row_dot);
        d_scores.mapv_inplace(|s| s * scale);
        d_q.slice_mut(s![.., cols.clone()]).assign(&d_scores.dot(&kh));
        d_k.slice_mut(s![.., cols]).assign(&d_scores.t().dot(&qh));
    }
    d_p.wq += &d_q.t().dot(&cache.input);
    d_p.bq += &d_q.sum_axis(Axis(0));
    d_p.wk += &d_k.t().dot(&cache.input);
    d_p.bk += &d_k.sum_axis(Axis(0));
    d_p.wv += &d_v.t().dot(&cache.input);
    d_p.bv += &d_v.sum_axis(Axis(0));

    d_q.dot(&p.wq) + d_k.dot(&p.wk) + d_v.dot(&p.wv)
}

fn mlp_forward<S: Scalar>(x: &Array2<S>, p: &MlpParams<S>) -> (Array2<S>, MlpCache<S>) {
    let mut pre_act = x.dot(&p.w1.t());
    pre_act += &p.b1;
    let act = pre_act.mapv(gelu);
    let mut out = act.dot(&p.w2.t());
    out += &p.b2;
    (
        out,
        MlpCache {
            input: x.clone(),
            pre_act,
            act,
        },
    )
}

fn mlp_backward<S: Scalar>(
    d_out: &Array2<S>,
    cache: &MlpCache<S>,
    p: &MlpParams<S>,
    d_p: &mut MlpParams<S>,
) -> Array2<S> {
    d_p.w2 += &d_out.t().dot(&cache.act);
    d_p.b2 += &d_out.sum_axis(Axis(0));
    let d_act = d_out.dot(&p.w2);
    let d_pre = &d_act * &cache.pre_act.mapv(gelu_prime);
    d_p.w1 += &d_pre.t().dot(&cache.input);
    d_p.b1 += &d_pre.sum_axis(Axis(0));
    d_pre.dot(&p.w1)
}

/// Flatten a tile into the `(L-1) x 3P^2` patch matrix, pixels normalized
/// to [0, 1], patches row-major over the tile, bytes row-major and
/// channel-minor within a patch.
fn patch_matrix<S: Scalar>(crop: &ImageBuffer, cfg: &EncoderConfig) -> Array2<S> {
    let p = cfg.patch_px;
    let per_side = cfg.patches_per_side() as u32;
    let norm = S::from_f(1.0 / 255.0);
    let mut out = Array2::<S>::zeros((cfg.tokens() - 1, cfg.patch_len()));
    for pr in 0..per_side {
        for pc in 0..per_side {
            let patch_idx = (pr * per_side + pc) as usize;
            let mut col = 0usize;
            for r in 0..p {
                for c in 0..p {
                    let px = crop.pixel(pr * p + r, pc * p + c);
                    for &ch in &px {
                        out[[patch_idx, col]] = S::from_f(f64::from(ch)) * norm;
                        col += 1;
                    }
                }
            }
        }
    }
    out
}

/// Project a tile into the token sequence: CLS token at row 0, projected
/// patches after it, positional embeddings added to every row.
pub fn patch_embed<S: Scalar>(
    crop: &ImageBuffer,
    params: &EncoderParams<S>,
    cfg: &EncoderConfig,
) -> Result<Array2<S>, EncoderError> {
    Ok(patch_embed_cached(crop, params, cfg)?.0)
}

fn patch_embed_cached<S: Scalar>(
    crop: &ImageBuffer,
    params: &EncoderParams<S>,
    cfg: &EncoderConfig,
) -> Result<(Array2<S>, Array2<S>), EncoderError> {
    if crop.width() != cfg.tile_px || crop.height() != cfg.tile_px {
        return Err(EncoderError::CropSizeMismatch {
            got_w: crop.width(),
            got_h: crop.height(),
            want: cfg.tile_px,
        });
    }
    let patches = patch_matrix::<S>(crop, cfg);
    let mut projected = patches.dot(&params.patch_proj.t());
    projected += &params.patch_bias;
    let mut tokens = Array2::<S>::zeros((cfg.tokens(), cfg.dim));
    tokens.row_mut(0).assign(&params.cls_token);
    tokens.slice_mut(s![1.., ..]).assign(&projected);
    tokens += &params.pos_embed;
    Ok((tokens, patches))
}

/// Run the N pre-norm blocks and the final layernorm.
pub fn encoder_forward<S: Scalar>(
    tokens: &Array2<S>,
    params: &EncoderParams<S>,
    cfg: &EncoderConfig,
) -> Result<Array2<S>, EncoderError> {
    Ok(encoder_forward_cached(tokens, params, cfg)?.0)
}

fn encoder_forward_cached<S: Scalar>(
    tokens: &Array2<S>,
    params: &EncoderParams<S>,
    cfg: &EncoderConfig,
) -> Result<(Array2<S>, Vec<BlockCache<S>>, LayerNormCache<S>), EncoderError> {
    if tokens.ncols() != cfg.dim {
        return Err(EncoderError::TokenShapeMismatch {
            got_rows: tokens.nrows(),
            got_cols: tokens.ncols(),
            want_cols: cfg.dim,
        });
    }
    let mut x = tokens.clone();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (ln1_out, ln1) = layernorm_forward(&x, &block.ln1);
        let (attn_out, attn) = attention_forward(&ln1_out, &block.attn, cfg.heads);
        let x_mid = &x + &attn_out;
        let (ln2_out, ln2) = layernorm_forward(&x_mid, &block.ln2);
        let (mlp_out, mlp) = mlp_forward(&ln2_out, &block.mlp);
        x = &x_mid + &mlp_out;
        blocks.push(BlockCache {
            ln1,
            attn,
            ln2,
            mlp,
        });
    }
    let (out, final_ln) = layernorm_forward(&x, &params.final_ln);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(EncoderError::NumericOverflow);
    }
    Ok((out, blocks, final_ln))
}

/// Full per-crop forward (patch embed + encoder) with the backward cache.
pub fn crop_forward<S: Scalar>(
    crop: &ImageBuffer,
    params: &EncoderParams<S>,
    cfg: &EncoderConfig,
) -> Result<(Array2<S>, CropCache<S>), EncoderError> {
    let (tokens, patches) = patch_embed_cached(crop, params, cfg)?;
    let (out, blocks, final_ln) = encoder_forward_cached(&tokens, params, cfg)?;
    Ok((
        out,
        CropCache {
            patches,
            blocks,
            final_ln,
        },
    ))
}

/// Backward through one crop, accumulating into `grads` (same shapes as
/// the parameters). Exact reverse of [`crop_forward`].
pub fn crop_backward<S: Scalar>(
    d_output: &Array2<S>,
    cache: &CropCache<S>,
    params: &EncoderParams<S>,
    grads: &mut EncoderParams<S>,
) {
    let mut d_x = layernorm_backward(
        d_output,
        &cache.final_ln,
        &params.final_ln,
        &mut grads.final_ln,
    );
    for i in (0..params.blocks.len()).rev() {
        let block = &params.blocks[i];
        let bc = &cache.blocks[i];
        let bg = &mut grads.blocks[i];
        // x_next = x_mid + mlp(ln2(x_mid)); the residual passes d_x through
        let d_ln2_out = mlp_backward(&d_x, &bc.mlp, &block.mlp, &mut bg.mlp);
        let d_x_mid = &d_x + &layernorm_backward(&d_ln2_out, &bc.ln2, &block.ln2, &mut bg.ln2);
        // x_mid = x + attn(ln1(x))
        let d_ln1_out = attention_backward(&d_x_mid, &bc.attn, &block.attn, &mut bg.attn);
        d_x = &d_x_mid + &layernorm_backward(&d_ln1_out, &bc.ln1, &block.ln1, &mut bg.ln1);
    }
    grads.pos_embed += &d_x;
    grads.cls_token += &d_x.row(0);
    let d_proj = d_x.slice(s![1.., ..]);
    grads.patch_proj += &d_proj.t().dot(&cache.patches);
    grads.patch_bias += &d_proj.sum_axis(Axis(0));
}

/// Mean of the CLS row (index 0) across all crop outputs, the global crop
/// included.
pub fn cls_pool<S: Scalar>(crop_outputs: &[Array2<S>]) -> Result<Array1<S>, EncoderError> {
    let first = crop_outputs.first().ok_or(EncoderError::EmptyCropList)?;
    let mut pooled = first.row(0).to_owned();
    for out in &crop_outputs[1..] {
        pooled += &out.row(0);
    }
    let n = S::from_f(crop_outputs.len() as f64);
    Ok(pooled.mapv(|v| v / n))
}
