//! Layer kinds and their forward/backward kernels.
//!
//! Convolution is lowered to im2col + GEMM so the dense training path and the
//! block-sparse inference path in [`crate::sparse`] share one data layout: the
//! column matrix has one K²-row block per input channel, and a conv weight
//! matrix row is the concatenation of that filter's K×K slices.

use crate::scalar::{gemm_nn, gemm_nt, gemm_tn, Scalar};
use crate::tensor::Tensor4;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.k) / self.stride + 1,
            (w + 2 * self.padding - self.k) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub c: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            eps: T::from_f64(1e-5),
            momentum: T::from_f64(0.1),
        }
    }
}

/// One network layer. Conv and dense weights are not stored here; they are
/// decoded from latents and passed in per call.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(ConvSpec),
    Dense { c_in: usize, c_out: usize, bias: Vec<T> },
    BatchNorm(BatchNorm<T>),
    Relu,
    GlobalAvgPool,
}

impl<T: Scalar> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv2d",
            Layer::Dense { .. } => "dense",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::GlobalAvgPool => "avgpool",
        }
    }
}

/// Per-layer saved state from a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv {
        in_shape: (usize, usize, usize, usize),
        out_hw: (usize, usize),
        /// Concatenated per-sample column matrices, each (c_in·k²)×(h_out·w_out).
        cols: Vec<T>,
    },
    Dense {
        input: Tensor4<T>,
    },
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        shape: (usize, usize, usize, usize),
    },
    Relu {
        mask: Vec<bool>,
    },
    GlobalAvgPool {
        in_shape: (usize, usize, usize, usize),
    },
    None,
}

/// Fill the columns of one sample into a (c_in·k²) × row_stride matrix at
/// column offset `col_off`. Row r covers input channel r/(k²) and kernel tap
/// r%(k²); with `row_stride = h_out·w_out` and `col_off = 0` this is the
/// plain per-sample im2col.
pub fn im2col<T: Scalar>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    cols: &mut [T],
    row_stride: usize,
    col_off: usize,
) {
    let (h_out, w_out) = spec.out_hw(h, w);
    let k = spec.k;
    for ic in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                let row = (ic * k + kh) * k + kw;
                let dst = &mut cols[row * row_stride + col_off..];
                for ho in 0..h_out {
                    let hi = (ho * spec.stride + kh) as isize - spec.padding as isize;
                    if hi < 0 || hi >= h as isize {
                        for v in &mut dst[ho * w_out..(ho + 1) * w_out] {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &x[(ic * h + hi as usize) * w..(ic * h + hi as usize + 1) * w];
                    let dst_row = &mut dst[ho * w_out..(ho + 1) * w_out];
                    if spec.padding == 0 && spec.stride == 1 {
                        dst_row.copy_from_slice(&src_row[kw..kw + w_out]);
                        continue;
                    }
                    for (wo, d) in dst_row.iter_mut().enumerate() {
                        let wi = (wo * spec.stride + kw) as isize - spec.padding as isize;
                        *d = if wi < 0 || wi >= w as isize {
                            T::zero()
                        } else {
                            src_row[wi as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add one sample's column gradients back
/// into its input gradient.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Scalar>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    x_grad: &mut [T],
    row_stride: usize,
    col_off: usize,
) {
    let (h_out, w_out) = spec.out_hw(h, w);
    let k = spec.k;
    for ic in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                let row = (ic * k + kh) * k + kw;
                let src = &cols[row * row_stride + col_off..];
                for ho in 0..h_out {
                    let hi = (ho * spec.stride + kh) as isize - spec.padding as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let grad_row = &mut x_grad[(ic * h + hi as usize) * w..];
                    let src_row = &src[ho * w_out..(ho + 1) * w_out];
                    for (wo, s) in src_row.iter().enumerate() {
                        let wi = (wo * spec.stride + kw) as isize - spec.padding as isize;
                        if wi < 0 || wi >= w as isize {
                            continue;
                        }
                        grad_row[wi as usize] = grad_row[wi as usize] + *s;
                    }
                }
            }
        }
    }
}

pub fn conv_forward<T: Scalar>(
    layer_idx: usize,
    spec: &ConvSpec,
    weight: &[T],
    input: &Tensor4<T>,
) -> Result<(Tensor4<T>, LayerCache<T>)> {
    if input.c != spec.c_in {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            detail: format!("conv expects {} input channels, got {}", spec.c_in, input.c),
        });
    }
    if weight.len() != spec.weight_len() {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            detail: format!("conv weight length {} != {}", weight.len(), spec.weight_len()),
        });
    }
    if input.h + 2 * spec.padding < spec.k || input.w + 2 * spec.padding < spec.k {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            detail: format!("input {}x{} too small for k={}", input.h, input.w, spec.k),
        });
    }
    let (h_out, w_out) = spec.out_hw(input.h, input.w);
    let m = h_out * w_out;
    let nm = input.n * m;
    let ck2 = spec.c_in * spec.k * spec.k;
    // one batched GEMM over all samples: columns of sample i sit at offset i·m
    let mut cols = vec![T::zero(); ck2 * nm];
    for i in 0..input.n {
        im2col(input.sample(i), spec.c_in, input.h, input.w, spec, &mut cols, nm, i * m);
    }
    let mut out_all = vec![T::zero(); spec.c_out * nm];
    gemm_nn(spec.c_out, ck2, nm, weight, &cols, T::zero(), &mut out_all);
    let mut out = Tensor4::zeros(input.n, spec.c_out, h_out, w_out);
    for i in 0..input.n {
        let dst = out.sample_mut(i);
        for oc in 0..spec.c_out {
            dst[oc * m..(oc + 1) * m].copy_from_slice(&out_all[oc * nm + i * m..oc * nm + (i + 1) * m]);
        }
    }
    let cache = LayerCache::Conv { in_shape: input.shape(), out_hw: (h_out, w_out), cols };
    Ok((out, cache))
}

/// Returns (grad_input, grad_weight).
pub fn conv_backward<T: Scalar>(
    spec: &ConvSpec,
    weight: &[T],
    cache: &LayerCache<T>,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>) {
    let (in_shape, out_hw, cols) = match cache {
        LayerCache::Conv { in_shape, out_hw, cols } => (*in_shape, *out_hw, cols),
        _ => panic!("conv backward with mismatched cache"),
    };
    let (n, c_in, h, w) = in_shape;
    let m = out_hw.0 * out_hw.1;
    let nm = n * m;
    let ck2 = spec.c_in * spec.k * spec.k;
    debug_assert_eq!(grad_out.shape(), (n, spec.c_out, out_hw.0, out_hw.1));

    // gather dOut into the batched (c_out × n·m) layout
    let mut dout_all = vec![T::zero(); spec.c_out * nm];
    for i in 0..n {
        let src = grad_out.sample(i);
        for oc in 0..spec.c_out {
            dout_all[oc * nm + i * m..oc * nm + (i + 1) * m]
                .copy_from_slice(&src[oc * m..(oc + 1) * m]);
        }
    }
    // dW = dOut · colsᵀ
    let mut grad_w = vec![T::zero(); spec.weight_len()];
    gemm_nt(spec.c_out, nm, ck2, &dout_all, cols, T::zero(), &mut grad_w);
    // dCols = Wᵀ · dOut
    let mut grad_cols = vec![T::zero(); ck2 * nm];
    gemm_tn(ck2, spec.c_out, nm, weight, &dout_all, T::zero(), &mut grad_cols);
    let mut grad_in = Tensor4::zeros(n, c_in, h, w);
    for i in 0..n {
        col2im_add(&grad_cols, c_in, h, w, spec, grad_in.sample_mut(i), nm, i * m);
    }
    (grad_in, grad_w)
}

pub fn dense_forward<T: Scalar>(
    layer_idx: usize,
    c_in: usize,
    c_out: usize,
    weight: &[T],
    bias: &[T],
    input: &Tensor4<T>,
) -> Result<(Tensor4<T>, LayerCache<T>)> {
    let features = input.c * input.h * input.w;
    if features != c_in {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            detail: format!("dense expects {c_in} features, got {features}"),
        });
    }
    if weight.len() != c_in * c_out {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            detail: format!("dense weight length {} != {}", weight.len(), c_in * c_out),
        });
    }
    let mut out = Tensor4::zeros(input.n, c_out, 1, 1);
    // y = x · Wᵀ, W is (c_out × c_in)
    gemm_nt(input.n, c_in, c_out, &input.data, weight, T::zero(), &mut out.data);
    for n in 0..input.n {
        for (o, b) in bias.iter().enumerate() {
            out.data[n * c_out + o] = out.data[n * c_out + o] + *b;
        }
    }
    Ok((out, LayerCache::Dense { input: input.clone() }))
}

/// Returns (grad_input, grad_weight, grad_bias).
pub fn dense_backward<T: Scalar>(
    c_in: usize,
    c_out: usize,
    weight: &[T],
    cache: &LayerCache<T>,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let input = match cache {
        LayerCache::Dense { input } => input,
        _ => panic!("dense backward with mismatched cache"),
    };
    let n = input.n;
    let mut grad_w = vec![T::zero(); c_out * c_in];
    // dW = dyᵀ · x
    gemm_tn(c_out, n, c_in, &grad_out.data, &input.data, T::zero(), &mut grad_w);
    let mut grad_b = vec![T::zero(); c_out];
    for i in 0..n {
        for o in 0..c_out {
            grad_b[o] = grad_b[o] + grad_out.data[i * c_out + o];
        }
    }
    let mut grad_in = Tensor4::zeros(input.n, input.c, input.h, input.w);
    // dx = dy · W
    gemm_nn(n, c_out, c_in, &grad_out.data, weight, T::zero(), &mut grad_in.data);
    (grad_in, grad_w, grad_b)
}

pub fn batchnorm_forward<T: Scalar>(
    layer_idx: usize,
    bn: &mut BatchNorm<T>,
    input: &Tensor4<T>,
    train: bool,
) -> Result<(Tensor4<T>, LayerCache<T>)> {
    if input.c != bn.c {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            detail: format!("batchnorm expects {} channels, got {}", bn.c, input.c),
        });
    }
    let (n, c, h, w) = input.shape();
    let plane = h * w;
    let cnt = T::from_f64((n * plane) as f64);
    let mut out = Tensor4::zeros(n, c, h, w);
    let mut xhat = vec![T::zero(); input.len()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let (mean, var) = if train {
            let mut sum = T::zero();
            let mut sum_sq = T::zero();
            for i in 0..n {
                let at = (i * c + ch) * plane;
                for &v in &input.data[at..at + plane] {
                    sum = sum + v;
                    sum_sq = sum_sq + v * v;
                }
            }
            let mean = sum / cnt;
            // biased variance, used consistently for normalization and the
            // running estimate so that eval matches train when stats agree
            let var = (sum_sq / cnt - mean * mean).max(T::zero());
            bn.running_mean[ch] =
                (T::one() - bn.momentum) * bn.running_mean[ch] + bn.momentum * mean;
            bn.running_var[ch] = (T::one() - bn.momentum) * bn.running_var[ch] + bn.momentum * var;
            (mean, var)
        } else {
            (bn.running_mean[ch], bn.running_var[ch])
        };
        let istd = T::one() / (var + bn.eps).sqrt();
        inv_std[ch] = istd;
        let g = bn.gamma[ch];
        let b = bn.beta[ch];
        for i in 0..n {
            let at = (i * c + ch) * plane;
            let src = &input.data[at..at + plane];
            let xh_dst = &mut xhat[at..at + plane];
            let out_dst = &mut out.data[at..at + plane];
            for j in 0..plane {
                let xh = (src[j] - mean) * istd;
                xh_dst[j] = xh;
                out_dst[j] = g * xh + b;
            }
        }
    }
    Ok((out, LayerCache::BatchNorm { xhat, inv_std, shape: input.shape() }))
}

/// Returns (grad_input, grad_gamma, grad_beta). Assumes train-mode forward.
pub fn batchnorm_backward<T: Scalar>(
    bn: &BatchNorm<T>,
    cache: &LayerCache<T>,
    grad_out: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let (xhat, inv_std, shape) = match cache {
        LayerCache::BatchNorm { xhat, inv_std, shape } => (xhat, inv_std, *shape),
        _ => panic!("batchnorm backward with mismatched cache"),
    };
    let (n, c, h, w) = shape;
    let plane = h * w;
    let cnt = T::from_f64((n * plane) as f64);
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    let mut grad_in = Tensor4::zeros(n, c, h, w);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let at = (i * c + ch) * plane;
            let dy_src = &grad_out.data[at..at + plane];
            let xh_src = &xhat[at..at + plane];
            for j in 0..plane {
                sum_dy = sum_dy + dy_src[j];
                sum_dy_xhat = sum_dy_xhat + dy_src[j] * xh_src[j];
            }
        }
        grad_beta[ch] = sum_dy;
        grad_gamma[ch] = sum_dy_xhat;
        let scale = bn.gamma[ch] * inv_std[ch];
        for i in 0..n {
            let at = (i * c + ch) * plane;
            let dy_src = &grad_out.data[at..at + plane];
            let xh_src = &xhat[at..at + plane];
            let dst = &mut grad_in.data[at..at + plane];
            for j in 0..plane {
                dst[j] = scale * (dy_src[j] - (sum_dy + xh_src[j] * sum_dy_xhat) / cnt);
            }
        }
    }
    (grad_in, grad_gamma, grad_beta)
}

pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> (Tensor4<T>, LayerCache<T>) {
    let mut out = input.clone();
    let mut mask = vec![false; input.len()];
    for (i, v) in out.data.iter_mut().enumerate() {
        if *v > T::zero() {
            mask[i] = true;
        } else {
            *v = T::zero();
        }
    }
    (out, LayerCache::Relu { mask })
}

pub fn relu_backward<T: Scalar>(cache: &LayerCache<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mask = match cache {
        LayerCache::Relu { mask } => mask,
        _ => panic!("relu backward with mismatched cache"),
    };
    let mut g = grad_out.clone();
    for (i, v) in g.data.iter_mut().enumerate() {
        if !mask[i] {
            *v = T::zero();
        }
    }
    g
}

pub fn global_avgpool_forward<T: Scalar>(input: &Tensor4<T>) -> (Tensor4<T>, LayerCache<T>) {
    let (n, c, h, w) = input.shape();
    let cnt = T::from_f64((h * w) as f64);
    let mut out = Tensor4::zeros(n, c, 1, 1);
    for i in 0..n {
        for ch in 0..c {
            let mut s = T::zero();
            for hh in 0..h {
                for ww in 0..w {
                    s = s + input.at(i, ch, hh, ww);
                }
            }
            out.data[i * c + ch] = s / cnt;
        }
    }
    (out, LayerCache::GlobalAvgPool { in_shape: input.shape() })
}

pub fn global_avgpool_backward<T: Scalar>(
    cache: &LayerCache<T>,
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    let (n, c, h, w) = match cache {
        LayerCache::GlobalAvgPool { in_shape } => *in_shape,
        _ => panic!("avgpool backward with mismatched cache"),
    };
    let cnt = T::from_f64((h * w) as f64);
    let mut grad_in = Tensor4::zeros(n, c, h, w);
    for i in 0..n {
        for ch in 0..c {
            let g = grad_out.data[i * c + ch] / cnt;
            for hh in 0..h {
                for ww in 0..w {
                    *grad_in.at_mut(i, ch, hh, ww) = g;
                }
            }
        }
    }
    grad_in
}
