//! Network topology: a list of layers arranged into plain chains and basic
//! residual blocks with option-A (zero-padded, subsampled) shortcuts.

use crate::layers::{
    batchnorm_backward, batchnorm_forward, conv_backward, conv_forward, dense_backward,
    dense_forward, global_avgpool_backward, global_avgpool_forward, relu_backward, relu_forward,
    Layer, LayerCache,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::{Error, Result};

/// Topology element over layer indices.
#[derive(Debug, Clone)]
pub enum Block {
    Plain(Vec<usize>),
    /// conv1 → bn1 → relu1 → conv2 → bn2, plus option-A shortcut, then relu2.
    ResBasic {
        conv1: usize,
        bn1: usize,
        relu1: usize,
        conv2: usize,
        bn2: usize,
        relu2: usize,
    },
}

/// Decoded weights for every conv/dense layer, indexed by layer id.
pub type WeightSet<T> = Vec<Option<Vec<T>>>;

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct NetGrads<T> {
    pub weight: Vec<Option<Vec<T>>>,
    pub bias: Vec<Option<Vec<T>>>,
    /// (gamma, beta) per batchnorm layer.
    pub bn: Vec<Option<(Vec<T>, Vec<T>)>>,
    pub input: Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct NetCache<T> {
    layer: Vec<LayerCache<T>>,
    /// Shortcut input shapes per residual block index, for the add-join.
    res_in_shape: Vec<Option<(usize, usize, usize, usize)>>,
    batch: usize,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    pub blocks: Vec<Block>,
    pub num_classes: usize,
    pub input_shape: (usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl<T: Scalar> Network<T> {
    /// Forward pass. `Train` mode uses batch statistics in batchnorm layers
    /// and updates their running estimates.
    pub fn forward(
        &mut self,
        weights: &WeightSet<T>,
        batch: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, NetCache<T>)> {
        let mut cache = NetCache {
            layer: vec![LayerCache::None; self.layers.len()],
            res_in_shape: vec![None; self.blocks.len()],
            batch: batch.n,
        };
        let mut x = batch.clone();
        let blocks = self.blocks.clone();
        for (bi, block) in blocks.iter().enumerate() {
            match block {
                Block::Plain(ids) => {
                    for &id in ids {
                        x = self.layer_forward(id, weights, &x, mode, &mut cache)?;
                    }
                }
                Block::ResBasic { conv1, bn1, relu1, conv2, bn2, relu2 } => {
                    cache.res_in_shape[bi] = Some(x.shape());
                    let stride = match &self.layers[*conv1] {
                        Layer::Conv(s) => s.stride,
                        _ => 1,
                    };
                    let shortcut_src = x.clone();
                    let mut y = self.layer_forward(*conv1, weights, &x, mode, &mut cache)?;
                    y = self.layer_forward(*bn1, weights, &y, mode, &mut cache)?;
                    y = self.layer_forward(*relu1, weights, &y, mode, &mut cache)?;
                    y = self.layer_forward(*conv2, weights, &y, mode, &mut cache)?;
                    y = self.layer_forward(*bn2, weights, &y, mode, &mut cache)?;
                    add_shortcut_a(&shortcut_src, &mut y, stride, *conv1)?;
                    x = self.layer_forward(*relu2, weights, &y, mode, &mut cache)?;
                }
            }
        }
        if x.c * x.h * x.w != self.num_classes {
            return Err(Error::ShapeMismatch {
                layer: self.layers.len(),
                detail: format!(
                    "head produced {} values per sample, expected {} classes",
                    x.c * x.h * x.w,
                    self.num_classes
                ),
            });
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("network logits".into()));
        }
        Ok((x, cache))
    }

    fn layer_forward(
        &mut self,
        id: usize,
        weights: &WeightSet<T>,
        x: &Tensor4<T>,
        mode: Mode,
        cache: &mut NetCache<T>,
    ) -> Result<Tensor4<T>> {
        let (out, lc) = match &mut self.layers[id] {
            Layer::Conv(spec) => {
                let w = weights[id].as_ref().ok_or_else(|| Error::ShapeMismatch {
                    layer: id,
                    detail: "missing decoded conv weight".into(),
                })?;
                conv_forward(id, spec, w, x)?
            }
            Layer::Dense { c_in, c_out, bias } => {
                let w = weights[id].as_ref().ok_or_else(|| Error::ShapeMismatch {
                    layer: id,
                    detail: "missing decoded dense weight".into(),
                })?;
                dense_forward(id, *c_in, *c_out, w, bias, x)?
            }
            Layer::BatchNorm(bn) => batchnorm_forward(id, bn, x, mode == Mode::Train)?,
            Layer::Relu => relu_forward(x),
            Layer::GlobalAvgPool => global_avgpool_forward(x),
        };
        cache.layer[id] = lc;
        Ok(out)
    }

    /// Backward pass through the whole network. The cache must come from a
    /// train-mode forward over the same batch and weights.
    pub fn backward(
        &self,
        weights: &WeightSet<T>,
        cache: &NetCache<T>,
        grad_logits: &Tensor4<T>,
    ) -> Result<NetGrads<T>> {
        if grad_logits.n != cache.batch {
            return Err(Error::Training("stale cache: batch size mismatch".into()));
        }
        let mut grads = NetGrads {
            weight: vec![None; self.layers.len()],
            bias: vec![None; self.layers.len()],
            bn: vec![None; self.layers.len()],
            input: Tensor4::zeros(0, 0, 0, 0),
        };
        let mut g = grad_logits.clone();
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            match block {
                Block::Plain(ids) => {
                    for &id in ids.iter().rev() {
                        g = self.layer_backward(id, weights, cache, g, &mut grads)?;
                    }
                }
                Block::ResBasic { conv1, bn1, relu1, conv2, bn2, relu2 } => {
                    g = self.layer_backward(*relu2, weights, cache, g, &mut grads)?;
                    // gradient splits between the body and the shortcut
                    let g_join = g.clone();
                    g = self.layer_backward(*bn2, weights, cache, g, &mut grads)?;
                    g = self.layer_backward(*conv2, weights, cache, g, &mut grads)?;
                    g = self.layer_backward(*relu1, weights, cache, g, &mut grads)?;
                    g = self.layer_backward(*bn1, weights, cache, g, &mut grads)?;
                    g = self.layer_backward(*conv1, weights, cache, g, &mut grads)?;
                    let in_shape = cache.res_in_shape[bi]
                        .ok_or_else(|| Error::Training("stale cache: missing block input".into()))?;
                    let spec = match &self.layers[*conv1] {
                        Layer::Conv(s) => *s,
                        _ => unreachable!(),
                    };
                    add_shortcut_a_backward(&g_join, &mut g, in_shape, spec.stride);
                }
            }
        }
        grads.input = g;
        Ok(grads)
    }

    fn layer_backward(
        &self,
        id: usize,
        weights: &WeightSet<T>,
        cache: &NetCache<T>,
        grad_out: Tensor4<T>,
        grads: &mut NetGrads<T>,
    ) -> Result<Tensor4<T>> {
        if matches!(cache.layer[id], LayerCache::None) {
            return Err(Error::Training(format!("stale cache: layer {id} was not run forward")));
        }
        let g_in = match &self.layers[id] {
            Layer::Conv(spec) => {
                let w = weights[id].as_ref().expect("conv weight");
                let (gi, gw) = conv_backward(spec, w, &cache.layer[id], &grad_out);
                grads.weight[id] = Some(gw);
                gi
            }
            Layer::Dense { c_in, c_out, .. } => {
                let w = weights[id].as_ref().expect("dense weight");
                let (gi, gw, gb) = dense_backward(*c_in, *c_out, w, &cache.layer[id], &grad_out);
                grads.weight[id] = Some(gw);
                grads.bias[id] = Some(gb);
                gi
            }
            Layer::BatchNorm(bn) => {
                let (gi, gg, gb) = batchnorm_backward(bn, &cache.layer[id], &grad_out);
                grads.bn[id] = Some((gg, gb));
                gi
            }
            Layer::Relu => relu_backward(&cache.layer[id], &grad_out),
            Layer::GlobalAvgPool => global_avgpool_backward(&cache.layer[id], &grad_out),
        };
        Ok(g_in)
    }

    /// Walk the graph with a symbolic shape to validate composition.
    pub fn check_shapes(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        let mut shape = (c, h, w);
        for block in &self.blocks {
            match block {
                Block::Plain(ids) => {
                    for &id in ids {
                        shape = self.layer_out_shape(id, shape)?;
                    }
                }
                Block::ResBasic { conv1, bn1, relu1, conv2, bn2, relu2 } => {
                    let input = shape;
                    for &id in &[*conv1, *bn1, *relu1, *conv2, *bn2] {
                        shape = self.layer_out_shape(id, shape)?;
                    }
                    let spec = match &self.layers[*conv1] {
                        Layer::Conv(s) => *s,
                        other => {
                            return Err(Error::ShapeMismatch {
                                layer: *conv1,
                                detail: format!(
                                    "residual block body must start with conv, got {}",
                                    other.kind_name()
                                ),
                            })
                        }
                    };
                    let short_h = (input.1 + spec.stride - 1) / spec.stride;
                    let short_w = (input.2 + spec.stride - 1) / spec.stride;
                    if (short_h, short_w) != (shape.1, shape.2) || input.0 > shape.0 {
                        return Err(Error::ShapeMismatch {
                            layer: *conv2,
                            detail: format!(
                                "shortcut shape {}x{}x{} incompatible with body output {}x{}x{}",
                                input.0, short_h, short_w, shape.0, shape.1, shape.2
                            ),
                        });
                    }
                    shape = self.layer_out_shape(*relu2, shape)?;
                }
            }
        }
        if shape.0 * shape.1 * shape.2 != self.num_classes {
            return Err(Error::ShapeMismatch {
                layer: self.layers.len(),
                detail: format!(
                    "network output {}x{}x{} does not match {} classes",
                    shape.0, shape.1, shape.2, self.num_classes
                ),
            });
        }
        Ok(())
    }

    fn layer_out_shape(
        &self,
        id: usize,
        (c, h, w): (usize, usize, usize),
    ) -> Result<(usize, usize, usize)> {
        match &self.layers[id] {
            Layer::Conv(spec) => {
                if c != spec.c_in {
                    return Err(Error::ShapeMismatch {
                        layer: id,
                        detail: format!("conv expects {} channels, got {c}", spec.c_in),
                    });
                }
                if h + 2 * spec.padding < spec.k || w + 2 * spec.padding < spec.k {
                    return Err(Error::ShapeMismatch {
                        layer: id,
                        detail: format!("spatial {h}x{w} too small for k={}", spec.k),
                    });
                }
                let (ho, wo) = spec.out_hw(h, w);
                Ok((spec.c_out, ho, wo))
            }
            Layer::Dense { c_in, c_out, .. } => {
                if c * h * w != *c_in {
                    return Err(Error::ShapeMismatch {
                        layer: id,
                        detail: format!("dense expects {c_in} features, got {}", c * h * w),
                    });
                }
                Ok((*c_out, 1, 1))
            }
            Layer::BatchNorm(bn) => {
                if c != bn.c {
                    return Err(Error::ShapeMismatch {
                        layer: id,
                        detail: format!("batchnorm expects {} channels, got {c}", bn.c),
                    });
                }
                Ok((c, h, w))
            }
            Layer::Relu | Layer::GlobalAvgPool => {
                if matches!(self.layers[id], Layer::GlobalAvgPool) {
                    Ok((c, 1, 1))
                } else {
                    Ok((c, h, w))
                }
            }
        }
    }
}

/// y += shortcut(x): subsample by the stride of the block's first conv and
/// zero-pad channels (ResNet option A, no parameters).
fn add_shortcut_a<T: Scalar>(
    x: &Tensor4<T>,
    y: &mut Tensor4<T>,
    stride: usize,
    layer_idx: usize,
) -> Result<()> {
    let fits = x.c <= y.c
        && (y.h == 0 || (y.h - 1) * stride < x.h)
        && (y.w == 0 || (y.w - 1) * stride < x.w);
    if !fits {
        return Err(Error::ShapeMismatch {
            layer: layer_idx,
            detail: format!(
                "shortcut cannot map {}x{}x{} onto {}x{}x{} at stride {stride}",
                x.c, x.h, x.w, y.c, y.h, y.w
            ),
        });
    }
    for n in 0..x.n {
        for c in 0..x.c {
            for ho in 0..y.h {
                for wo in 0..y.w {
                    let v = x.at(n, c, ho * stride, wo * stride);
                    *y.at_mut(n, c, ho, wo) = y.at(n, c, ho, wo) + v;
                }
            }
        }
    }
    Ok(())
}

fn add_shortcut_a_backward<T: Scalar>(
    grad_join: &Tensor4<T>,
    grad_x: &mut Tensor4<T>,
    in_shape: (usize, usize, usize, usize),
    stride: usize,
) {
    let (_, c_in, _, _) = in_shape;
    for n in 0..grad_x.n {
        for c in 0..c_in.min(grad_join.c) {
            for ho in 0..grad_join.h {
                for wo in 0..grad_join.w {
                    let v = grad_join.at(n, c, ho, wo);
                    let (hi, wi) = (ho * stride, wo * stride);
                    *grad_x.at_mut(n, c, hi, wi) = grad_x.at(n, c, hi, wi) + v;
                }
            }
        }
    }
}
