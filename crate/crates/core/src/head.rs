//! Rotation classification head, loss, and prediction.
//!
//! The multi-layer head is dropout → linear → GELU → linear with hidden
//! width `D/2`; dropout is inverted (survivors scaled by `1/(1-p)`) so
//! eval mode needs no rescaling. The single-layer variant used by the
//! ablation grid is one linear map. Both heads output four logits.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imaging::RotationClass;
use crate::numeric::Scalar;

pub use crate::numeric::{gelu, gelu_prime};

/// Number of rotation classes.
pub const NUM_CLASSES: usize = 4;

/// Dropout probability applied to the pooled CLS embedding in train mode.
pub const DROPOUT_P: f64 = 0.2;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("input has dimension {got}, head expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("head input dimension {0} must be even")]
    OddDimension(usize),
}

/// Two-layer head parameters; hidden width is exactly half the input width.
#[derive(Debug, Clone)]
pub struct HeadParams<S> {
    pub w1: Array2<S>,
    pub b1: Array1<S>,
    pub w2: Array2<S>,
    pub b2: Array1<S>,
    pub dropout_p: f64,
}

impl<S: Scalar> HeadParams<S> {
    pub fn zeros(dim: usize) -> Result<Self, HeadError> {
        if dim % 2 != 0 {
            return Err(HeadError::OddDimension(dim));
        }
        let hidden = dim / 2;
        Ok(Self {
            w1: Array2::zeros((hidden, dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((NUM_CLASSES, hidden)),
            b2: Array1::zeros(NUM_CLASSES),
            dropout_p: DROPOUT_P,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[S])> {
        vec![
            ("w1".into(), self.w1.shape().to_vec(), self.w1.as_slice().unwrap()),
            ("b1".into(), vec![self.b1.len()], self.b1.as_slice().unwrap()),
            ("w2".into(), self.w2.shape().to_vec(), self.w2.as_slice().unwrap()),
            ("b2".into(), vec![self.b2.len()], self.b2.as_slice().unwrap()),
        ]
    }

    pub fn flat_slices(&self) -> Vec<&[S]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    pub fn flat_slices_mut(&mut self) -> Vec<&mut [S]> {
        vec![
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

/// Ablation variant: a single linear layer on the pooled embedding.
#[derive(Debug, Clone)]
pub struct SingleLayerHeadParams<S> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

impl<S: Scalar> SingleLayerHeadParams<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: Array2::zeros((NUM_CLASSES, dim)),
            b: Array1::zeros(NUM_CLASSES),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[S])> {
        vec![
            ("w".into(), self.w.shape().to_vec(), self.w.as_slice().unwrap()),
            ("b".into(), vec![self.b.len()], self.b.as_slice().unwrap()),
        ]
    }

    pub fn flat_slices(&self) -> Vec<&[S]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    pub fn flat_slices_mut(&mut self) -> Vec<&mut [S]> {
        vec![
            self.w.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
        ]
    }
}

/// Whether the forward pass samples a dropout mask.
pub enum ForwardMode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// Activations retained for the backward pass of the multi-layer head.
pub struct HeadCache<S> {
    dropped: Array1<S>,
    mask_scale: Array1<S>,
    pre_act: Array1<S>,
    act: Array1<S>,
}

fn outer<S: Scalar>(a: &Array1<S>, b: &Array1<S>) -> Array2<S> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Forward pass of the multi-layer head. In train mode each input
/// coordinate is zeroed with probability `dropout_p` and survivors are
/// scaled by `1/(1-p)`; eval mode touches no randomness.
pub fn head_forward<S: Scalar>(
    h_cls: &Array1<S>,
    params: &HeadParams<S>,
    mode: ForwardMode,
) -> Result<(Array1<S>, HeadCache<S>), HeadError> {
    if h_cls.len() != params.input_dim() {
        return Err(HeadError::DimensionMismatch {
            got: h_cls.len(),
            want: params.input_dim(),
        });
    }
    let mask_scale = match mode {
        ForwardMode::Eval => Array1::from_elem(h_cls.len(), S::one()),
        ForwardMode::Train(rng) => {
            let keep = S::from_f(1.0 / (1.0 - params.dropout_p));
            Array1::from_shape_fn(h_cls.len(), |_| {
                if rng.gen::<f64>() < params.dropout_p {
                    S::zero()
                } else {
                    keep
                }
            })
        }
    };
    let dropped = h_cls * &mask_scale;
    let pre_act = params.w1.dot(&dropped) + &params.b1;
    let act = pre_act.mapv(gelu);
    let logits = params.w2.dot(&act) + &params.b2;
    Ok((
        logits,
        HeadCache {
            dropped,
            mask_scale,
            pre_act,
            act,
        },
    ))
}

/// Backward pass of the multi-layer head; returns the gradient with
/// respect to the pooled input. The dropout mask is reused from the cache.
pub fn head_backward<S: Scalar>(
    grad_logits: &Array1<S>,
    cache: &HeadCache<S>,
    params: &HeadParams<S>,
    grads: &mut HeadParams<S>,
) -> Array1<S> {
    grads.w2 += &outer(grad_logits, &cache.act);
    grads.b2 += grad_logits;
    let d_act = params.w2.t().dot(grad_logits);
    let d_pre = &d_act * &cache.pre_act.mapv(gelu_prime);
    grads.w1 += &outer(&d_pre, &cache.dropped);
    grads.b1 += &d_pre;
    let d_dropped = params.w1.t().dot(&d_pre);
    d_dropped * &cache.mask_scale
}

/// Forward pass of the single-layer ablation head.
pub fn single_layer_forward<S: Scalar>(
    h_cls: &Array1<S>,
    params: &SingleLayerHeadParams<S>,
) -> Result<Array1<S>, HeadError> {
    if h_cls.len() != params.input_dim() {
        return Err(HeadError::DimensionMismatch {
            got: h_cls.len(),
            want: params.input_dim(),
        });
    }
    Ok(params.w.dot(h_cls) + &params.b)
}

/// Backward pass of the single-layer head.
pub fn single_layer_backward<S: Scalar>(
    grad_logits: &Array1<S>,
    h_cls: &Array1<S>,
    params: &SingleLayerHeadParams<S>,
    grads: &mut SingleLayerHeadParams<S>,
) -> Array1<S> {
    grads.w += &outer(grad_logits, h_cls);
    grads.b += grad_logits;
    params.w.t().dot(grad_logits)
}

/// Numerically stable softmax cross-entropy.
///
/// Returns the loss and its gradient with respect to the logits
/// (`softmax(logits) - onehot(label)`); the gradient coordinates sum to 0.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Array1<S>,
    label: RotationClass,
) -> (S, Array1<S>) {
    let max = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let shifted = logits.mapv(|v| v - max);
    let exps = shifted.mapv(|v| v.exp());
    let sum = exps.sum();
    let log_sum = sum.ln();
    let loss = log_sum - shifted[label.label() as usize];
    let mut grad = exps.mapv(|v| v / sum);
    grad[label.label() as usize] = grad[label.label() as usize] - S::one();
    (loss, grad)
}

/// Argmax over the four logits; ties break toward the lowest label index.
pub fn predict<S: Scalar>(logits: &Array1<S>) -> RotationClass {
    let mut best = 0usize;
    for i in 1..logits.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    RotationClass::from_label(best as u8).expect("logit vector has four entries")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::Rng;

    fn random_head(dim: usize, seed: u64, scale: f64) -> HeadParams<f64> {
        let mut rng = crate::rng::derive(seed, "head-test");
        let mut params = HeadParams::<f64>::zeros(dim).unwrap();
        for slice in params.flat_slices_mut() {
            for v in slice.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        params
    }

    #[test]
    fn zero_weights_pass_output_bias_through() {
        let mut params = HeadParams::<f64>::zeros(8).unwrap();
        params.b2 = arr1(&[1.0, 2.0, 3.0, 4.0]);
        let h = arr1(&[0.5; 8]);
        let (logits, _) = head_forward(&h, &params, ForwardMode::Eval).unwrap();
        assert_eq!(logits, arr1(&[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let params = random_head(8, 41, 0.5);
        let h = arr1(&[0.1, -0.2, 0.3, 0.7, -0.9, 0.05, 0.4, -0.6]);
        let (a, _) = head_forward(&h, &params, ForwardMode::Eval).unwrap();
        let (b, _) = head_forward(&h, &params, ForwardMode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_evaluated_instance() {
        // D=2, D'=1: W1=[[1,1]], h=(1,-1) -> preact 0 -> gelu 0 -> logits 0.
        let mut params = HeadParams::<f64>::zeros(2).unwrap();
        params.w1[[0, 0]] = 1.0;
        params.w1[[0, 1]] = 1.0;
        params.w2[[0, 0]] = 2.0;
        let h = arr1(&[1.0, -1.0]);
        let (logits, _) = head_forward(&h, &params, ForwardMode::Eval).unwrap();
        assert_eq!(logits, arr1(&[0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let params = HeadParams::<f64>::zeros(8).unwrap();
        let h = arr1(&[0.0; 7]);
        assert!(matches!(
            head_forward(&h, &params, ForwardMode::Eval),
            Err(HeadError::DimensionMismatch { got: 7, want: 8 })
        ));
        assert!(HeadParams::<f64>::zeros(7).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        for label in RotationClass::ALL {
            let (loss, _) = softmax_cross_entropy(&arr1(&[3.3f64; 4]), label);
            assert!((loss - 4.0f64.ln()).abs() < 1e-9);
        }
        let mut logits = arr1(&[0.0f64; 4]);
        logits[2] = 30.0;
        let (loss, _) = softmax_cross_entropy(&logits, RotationClass::Cw90);
        assert!(loss >= 0.0 && loss < 1e-12);
    }

    #[test]
    fn cross_entropy_grad_sums_to_zero() {
        let mut rng = crate::rng::derive(42, "head");
        for _ in 0..100 {
            let logits = arr1(&[
                rng.gen_range(-10.0f64..10.0),
                rng.gen_range(-10.0f64..10.0),
                rng.gen_range(-10.0f64..10.0),
                rng.gen_range(-10.0f64..10.0),
            ]);
            let label = RotationClass::from_label(rng.gen_range(0..4)).unwrap();
            let (loss, grad) = softmax_cross_entropy(&logits, label);
            assert!(loss >= 0.0);
            assert!(grad.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn predict_argmax_and_tie_break() {
        assert_eq!(
            predict(&arr1(&[0.1, 0.9, 0.2, 0.3])),
            RotationClass::Upright
        );
        assert_eq!(predict(&arr1(&[5.0, 5.0, 1.0, 1.0])), RotationClass::Ccw90);
        let mut rng = crate::rng::derive(43, "head");
        for _ in 0..50 {
            let logits = arr1(&[
                rng.gen_range(-3.0f64..3.0),
                rng.gen_range(-3.0f64..3.0),
                rng.gen_range(-3.0f64..3.0),
                rng.gen_range(-3.0f64..3.0),
            ]);
            let c = rng.gen_range(-5.0f64..5.0);
            assert_eq!(predict(&logits), predict(&logits.mapv(|v| v + c)));
        }
    }

    #[test]
    fn backward_zero_grad_gives_zero_everywhere() {
        let params = random_head(8, 44, 0.5);
        let h = arr1(&[0.3; 8]);
        let (_, cache) = head_forward(&h, &params, ForwardMode::Eval).unwrap();
        let mut grads = HeadParams::<f64>::zeros(8).unwrap();
        let d_h = head_backward(&arr1(&[0.0; 4]), &cache, &params, &mut grads);
        assert!(d_h.iter().all(|&v| v == 0.0));
        assert!(grads.w1.iter().all(|&v| v == 0.0));
        assert!(grads.w2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Head-only check in f64: central differences at h=1e-6, relative
        // error under 1e-6 with the guarded denominator.
        let dim = 8;
        let params = random_head(dim, 45, 0.6);
        let mut rng = crate::rng::derive(46, "head");
        let h: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
        let label = RotationClass::Cw90;

        let loss_of = |p: &HeadParams<f64>| -> f64 {
            let (logits, _) = head_forward(&h, p, ForwardMode::Eval).unwrap();
            softmax_cross_entropy(&logits, label).0
        };

        let (logits, cache) = head_forward(&h, &params, ForwardMode::Eval).unwrap();
        let (_, d_logits) = softmax_cross_entropy(&logits, label);
        let mut analytic = HeadParams::<f64>::zeros(dim).unwrap();
        let d_h = head_backward(&d_logits, &cache, &params, &mut analytic);

        let step = 1e-6;
        let mut max_rel: f64 = 0.0;
        let mut probe = params.clone();
        let n_tensors = probe.flat_slices_mut().len();
        for t in 0..n_tensors {
            let len = probe.flat_slices_mut()[t].len();
            for i in 0..len {
                let orig = probe.flat_slices_mut()[t][i];
                probe.flat_slices_mut()[t][i] = orig + step;
                let up = loss_of(&probe);
                probe.flat_slices_mut()[t][i] = orig - step;
                let down = loss_of(&probe);
                probe.flat_slices_mut()[t][i] = orig;
                let fd = (up - down) / (2.0 * step);
                let a = { analytic.flat_slices_mut()[t][i] };
                max_rel = max_rel.max((a - fd).abs() / (a.abs() + fd.abs() + 1e-8));
            }
        }
        assert!(max_rel < 1e-6, "head grad rel err {max_rel}");

        // And the input gradient, against the eval-mode chain rule.
        for i in 0..dim {
            let mut hh = h.clone();
            hh[i] += step;
            let (l1, _) = head_forward(&hh, &params, ForwardMode::Eval).unwrap();
            hh[i] = h[i] - step;
            let (l0, _) = head_forward(&hh, &params, ForwardMode::Eval).unwrap();
            let fd = (softmax_cross_entropy(&l1, label).0 - softmax_cross_entropy(&l0, label).0)
                / (2.0 * step);
            let rel = (d_h[i] - fd).abs() / (d_h[i].abs() + fd.abs() + 1e-8);
            assert!(rel < 1e-6, "input grad rel err {rel}");
        }
    }

    #[test]
    fn dropout_mean_approximates_eval_output() {
        let params = random_head(8, 47, 0.25);
        let mut rng = crate::rng::derive(48, "head");
        let h: Array1<f64> = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
        let (eval_logits, _) = head_forward(&h, &params, ForwardMode::Eval).unwrap();

        let mut mean = Array1::<f64>::zeros(4);
        let draws = 10_000;
        let mut drop_rng = crate::rng::derive(49, "head-dropout");
        for _ in 0..draws {
            let (logits, _) =
                head_forward(&h, &params, ForwardMode::Train(&mut drop_rng)).unwrap();
            mean += &logits;
        }
        mean.mapv_inplace(|v| v / draws as f64);
        let num = (&mean - &eval_logits).mapv(|v| v * v).sum().sqrt();
        let den = eval_logits.mapv(|v| v * v).sum().sqrt();
        assert!(num / den < 0.02, "relative gap {}", num / den);
    }
}
