//! Slice-sparsity analysis, MAC accounting, block-sparse convolution, and
//! structured pruning with wall-clock speedup measurement.
//!
//! MAC conventions: only conv and dense layers are counted; one MAC is one
//! multiply-accumulate (2 FLOPs where paper-style FLOP numbers are wanted).
//! Slice MACs skip zero K×K slices; structured MACs drop entirely-zero
//! output filters and input channels at the tensor level, with channel
//! removal propagated through plain conv chains. Residual joins keep the
//! union of channels.

use crate::layers::{ConvSpec, Layer};
use crate::net::{Block, Mode, Network, WeightSet};
use crate::reparam::{decode, LatentTensor};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::{Error, Result};
use serde::Serialize;
use std::time::Instant;

/// Per-layer zero-row flags: true means the latent row (hence the decoded
/// weight slice) is exactly zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceMask {
    pub zero: Vec<bool>,
    pub rows: usize,
    pub l: usize,
}

impl SliceMask {
    pub fn sparsity(&self) -> f64 {
        if self.zero.is_empty() {
            return 0.0;
        }
        self.zero.iter().filter(|z| **z).count() as f64 / self.zero.len() as f64
    }
}

/// Exact zero test on the rounded view of each latent row.
pub fn slice_mask<T: Scalar>(latent: &LatentTensor<T>) -> Result<SliceMask> {
    let quantized = latent.quantized()?;
    let zero = (0..latent.rows)
        .map(|j| quantized[j * latent.l..(j + 1) * latent.l].iter().all(|v| *v == T::zero()))
        .collect();
    Ok(SliceMask { zero, rows: latent.rows, l: latent.l })
}

/// Fraction of individual latent elements that round to zero.
pub fn unstructured_sparsity<T: Scalar>(latent: &LatentTensor<T>) -> Result<f64> {
    let quantized = latent.quantized()?;
    if quantized.is_empty() {
        return Ok(0.0);
    }
    Ok(quantized.iter().filter(|v| **v == T::zero()).count() as f64 / quantized.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MacCounts {
    pub dense: u64,
    pub slice: u64,
    pub structured: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerSparsity {
    pub layer_id: usize,
    pub kind: String,
    pub rows: usize,
    pub l: usize,
    pub slice_sparsity: f64,
    pub unstructured_sparsity: f64,
    pub macs: MacCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
    pub global_slice_sparsity: f64,
    pub global_unstructured_sparsity: f64,
    pub total_macs: MacCounts,
    /// slice MACs / dense MACs.
    pub sflops_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<SpeedupReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupReport {
    pub dense_ms: f64,
    pub pruned_ms: f64,
    pub speedup: f64,
    pub threads: usize,
    pub batch: usize,
    pub samples: usize,
}

/// Alive input-channel/output-filter flags of one weight tensor under a mask.
fn alive_channels(mask: &SliceMask, c_out: usize, c_in: usize) -> (Vec<bool>, Vec<bool>) {
    let mut out_alive = vec![false; c_out];
    let mut in_alive = vec![false; c_in];
    for o in 0..c_out {
        for i in 0..c_in {
            if !mask.zero[o * c_in + i] {
                out_alive[o] = true;
                in_alive[i] = true;
            }
        }
    }
    (out_alive, in_alive)
}

fn count_one_layer<T: Scalar>(
    id: usize,
    layer: &Layer<T>,
    masks: &[Option<SliceMask>],
    upstream: &mut Vec<bool>,
    shape: &mut (usize, usize, usize),
) -> Result<Option<MacCounts>> {
    match layer {
        Layer::Conv(spec) => {
            let (ho, wo) = spec.out_hw(shape.1, shape.2);
            let positions = (ho * wo) as u64;
            let k2 = (spec.k * spec.k) as u64;
            let dense = (spec.c_out * spec.c_in) as u64 * k2 * positions;
            let mask = masks[id]
                .as_ref()
                .ok_or_else(|| Error::Config(format!("layer {id}: conv requires a slice mask")))?;
            if mask.rows != spec.c_out * spec.c_in {
                return Err(Error::Config(format!("layer {id}: stale mask shape")));
            }
            let nonzero = mask.zero.iter().filter(|z| !**z).count() as u64;
            let slice = nonzero * k2 * positions;
            let (out_alive, mut in_alive) = alive_channels(mask, spec.c_out, spec.c_in);
            for (a, up) in in_alive.iter_mut().zip(upstream.iter()) {
                *a = *a && *up;
            }
            let structured = out_alive.iter().filter(|a| **a).count() as u64
                * in_alive.iter().filter(|a| **a).count() as u64
                * k2
                * positions;
            *upstream = out_alive;
            *shape = (spec.c_out, ho, wo);
            Ok(Some(MacCounts { dense, slice, structured }))
        }
        Layer::Dense { c_in, c_out, .. } => {
            let dense = (c_in * c_out) as u64;
            let mask = masks[id]
                .as_ref()
                .ok_or_else(|| Error::Config(format!("layer {id}: dense requires a slice mask")))?;
            let nonzero = mask.zero.iter().filter(|z| !**z).count() as u64;
            let (out_alive, mut in_alive) = alive_channels(mask, *c_out, *c_in);
            // feature f belongs to channel f / (h·w) of the incoming tensor
            let spatial = (shape.1 * shape.2).max(1);
            for (f, a) in in_alive.iter_mut().enumerate() {
                let ch = f / spatial;
                if ch < upstream.len() {
                    *a = *a && upstream[ch];
                }
            }
            let structured = out_alive.iter().filter(|a| **a).count() as u64
                * in_alive.iter().filter(|a| **a).count() as u64;
            *upstream = out_alive;
            *shape = (*c_out, 1, 1);
            Ok(Some(MacCounts { dense, slice: nonzero, structured }))
        }
        Layer::BatchNorm(_) | Layer::Relu => Ok(None),
        Layer::GlobalAvgPool => {
            *shape = (shape.0, 1, 1);
            Ok(None)
        }
    }
}

/// Count dense / slice / structured MACs per compressible layer and in total.
/// `masks` is indexed by layer id.
pub fn count_flops<T: Scalar>(
    net: &Network<T>,
    masks: &[Option<SliceMask>],
) -> Result<(Vec<(usize, MacCounts)>, MacCounts)> {
    let (c0, h0, w0) = net.input_shape;
    let mut per_layer = Vec::new();
    let mut total = MacCounts::default();
    let mut upstream = vec![true; c0];
    let mut shape = (c0, h0, w0);
    for block in &net.blocks {
        match block {
            Block::Plain(ids) => {
                for &id in ids {
                    if let Some(c) =
                        count_one_layer(id, &net.layers[id], masks, &mut upstream, &mut shape)?
                    {
                        total.dense += c.dense;
                        total.slice += c.slice;
                        total.structured += c.structured;
                        per_layer.push((id, c));
                    }
                }
            }
            Block::ResBasic { conv1, conv2, .. } => {
                let shortcut_in = upstream.clone();
                for &id in &[*conv1, *conv2] {
                    if let Some(c) =
                        count_one_layer(id, &net.layers[id], masks, &mut upstream, &mut shape)?
                    {
                        total.dense += c.dense;
                        total.slice += c.slice;
                        total.structured += c.structured;
                        per_layer.push((id, c));
                    }
                }
                // the residual join keeps the union of body and shortcut channels
                for ch in 0..shortcut_in.len().min(upstream.len()) {
                    upstream[ch] = upstream[ch] || shortcut_in[ch];
                }
            }
        }
    }
    Ok((per_layer, total))
}

/// Full sparsity report over a model's latents.
pub fn sparsity_report<T: Scalar>(
    net: &Network<T>,
    latents: &[Option<LatentTensor<T>>],
) -> Result<SparsityReport> {
    let mut masks: Vec<Option<SliceMask>> = vec![None; net.layers.len()];
    for (id, latent) in latents.iter().enumerate() {
        if let Some(latent) = latent {
            masks[id] = Some(slice_mask(latent)?);
        }
    }
    let (per_layer, total) = count_flops(net, &masks)?;
    let mut layers = Vec::new();
    let mut zero_rows = 0usize;
    let mut rows = 0usize;
    let mut zero_elems = 0usize;
    let mut elems = 0usize;
    for (id, macs) in per_layer {
        let latent = latents[id].as_ref().unwrap();
        let mask = masks[id].as_ref().unwrap();
        let quantized = latent.quantized()?;
        let zeros = quantized.iter().filter(|v| **v == T::zero()).count();
        zero_rows += mask.zero.iter().filter(|z| **z).count();
        rows += mask.rows;
        zero_elems += zeros;
        elems += quantized.len();
        layers.push(LayerSparsity {
            layer_id: id,
            kind: net.layers[id].kind_name().to_string(),
            rows: latent.rows,
            l: latent.l,
            slice_sparsity: mask.sparsity(),
            unstructured_sparsity: zeros as f64 / quantized.len().max(1) as f64,
            macs,
        });
    }
    Ok(SparsityReport {
        layers,
        global_slice_sparsity: zero_rows as f64 / rows.max(1) as f64,
        global_unstructured_sparsity: zero_elems as f64 / elems.max(1) as f64,
        total_macs: total,
        sflops_fraction: total.slice as f64 / total.dense.max(1) as f64,
        timing: None,
    })
}

/// Convolution that skips masked K²-blocks of the im2col product. Output
/// matches the dense path on the decoded weights.
pub fn block_sparse_conv<T: Scalar>(
    input: &Tensor4<T>,
    latent: &LatentTensor<T>,
    psi: &[T],
    mask: &SliceMask,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let fresh = slice_mask(latent)?;
    if fresh != *mask {
        return Err(Error::Config("stale slice mask".into()));
    }
    if input.c != spec.c_in || latent.rows != spec.c_out * spec.c_in {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: "block-sparse conv: latent/input shapes disagree".into(),
        });
    }
    let quantized = latent.quantized()?;
    let weight = decode(&quantized, latent.rows, latent.l, psi)?;
    let (h_out, w_out) = spec.out_hw(input.h, input.w);
    let m = h_out * w_out;
    let k2 = spec.k * spec.k;
    let ck2 = spec.c_in * k2;
    let mut out = Tensor4::zeros(input.n, spec.c_out, h_out, w_out);
    let mut cols = vec![T::zero(); ck2 * m];
    for n in 0..input.n {
        crate::layers::im2col(input.sample(n), spec.c_in, input.h, input.w, spec, &mut cols, m, 0);
        let out_sample = out.sample_mut(n);
        for oc in 0..spec.c_out {
            let dst = &mut out_sample[oc * m..(oc + 1) * m];
            for ic in 0..spec.c_in {
                if mask.zero[oc * spec.c_in + ic] {
                    continue;
                }
                for t in 0..k2 {
                    let wv = weight[oc * ck2 + ic * k2 + t];
                    if wv == T::zero() {
                        continue;
                    }
                    let src = &cols[(ic * k2 + t) * m..(ic * k2 + t + 1) * m];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *d + wv * *s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A structurally pruned copy of a plain-chain network. An output filter is
/// removed only when its slices are all zero and the following
/// relu(batchnorm(0)) is exactly zero, so the pruned network computes the
/// same function; input channels that lost their source are removed too.
/// Networks with residual blocks are returned unchanged.
pub fn prune_structured<T: Scalar>(
    net: &Network<T>,
    weights: &WeightSet<T>,
    masks: &[Option<SliceMask>],
) -> Result<(Network<T>, WeightSet<T>)> {
    if net.blocks.iter().any(|b| matches!(b, Block::ResBasic { .. })) {
        return Ok((net.clone(), weights.clone()));
    }
    let mut pruned = net.clone();
    let mut pruned_weights = weights.clone();
    let (c0, h0, w0) = net.input_shape;
    // indices of retained channels of the tensor flowing between layers
    let mut keep: Vec<usize> = (0..c0).collect();
    let mut spatial = (h0, w0);

    let order: Vec<usize> = net
        .blocks
        .iter()
        .flat_map(|b| match b {
            Block::Plain(ids) => ids.clone(),
            Block::ResBasic { .. } => unreachable!(),
        })
        .collect();

    for (pos, &id) in order.iter().enumerate() {
        match &net.layers[id] {
            Layer::Conv(spec) => {
                let mask = masks[id]
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("layer {id}: missing mask")))?;
                let (out_alive, _) = alive_channels(mask, spec.c_out, spec.c_in);
                let keep_out: Vec<usize> = (0..spec.c_out)
                    .filter(|&o| out_alive[o] || !relu_of_bn_zero_is_zero(net, &order, pos, o))
                    .collect();
                let w = weights[id].as_ref().expect("conv weight");
                let k2 = spec.k * spec.k;
                let mut new_w = Vec::with_capacity(keep_out.len() * keep.len() * k2);
                for &o in &keep_out {
                    for &i in &keep {
                        let at = (o * spec.c_in + i) * k2;
                        new_w.extend_from_slice(&w[at..at + k2]);
                    }
                }
                let new_spec = ConvSpec { c_in: keep.len(), c_out: keep_out.len(), ..*spec };
                spatial = new_spec.out_hw(spatial.0, spatial.1);
                pruned.layers[id] = Layer::Conv(new_spec);
                pruned_weights[id] = Some(new_w);
                keep = keep_out;
            }
            Layer::BatchNorm(bn) => {
                let mut nb = bn.clone();
                nb.c = keep.len();
                nb.gamma = keep.iter().map(|&c| bn.gamma[c]).collect();
                nb.beta = keep.iter().map(|&c| bn.beta[c]).collect();
                nb.running_mean = keep.iter().map(|&c| bn.running_mean[c]).collect();
                nb.running_var = keep.iter().map(|&c| bn.running_var[c]).collect();
                pruned.layers[id] = Layer::BatchNorm(nb);
            }
            Layer::Dense { c_in, c_out, bias } => {
                let per_ch = (spatial.0 * spatial.1).max(1);
                let w = weights[id].as_ref().expect("dense weight");
                let mut new_w = Vec::with_capacity(keep.len() * per_ch * c_out);
                for o in 0..*c_out {
                    for &ch in &keep {
                        for s in 0..per_ch {
                            new_w.push(w[o * c_in + ch * per_ch + s]);
                        }
                    }
                }
                pruned.layers[id] =
                    Layer::Dense { c_in: keep.len() * per_ch, c_out: *c_out, bias: bias.clone() };
                pruned_weights[id] = Some(new_w);
                keep = (0..*c_out).collect();
                spatial = (1, 1);
            }
            Layer::Relu => {}
            Layer::GlobalAvgPool => {
                spatial = (1, 1);
            }
        }
    }
    Ok((pruned, pruned_weights))
}

/// True when channel `o` of the conv at `order[pos]` is followed by
/// batchnorm then relu and the constant relu(batchnorm(0)) is exactly zero,
/// making filter removal an identity transformation.
fn relu_of_bn_zero_is_zero<T: Scalar>(
    net: &Network<T>,
    order: &[usize],
    pos: usize,
    o: usize,
) -> bool {
    match order.get(pos + 1).map(|&id| &net.layers[id]) {
        Some(Layer::BatchNorm(bn)) => {
            let c = (T::zero() - bn.running_mean[o]) / (bn.running_var[o] + bn.eps).sqrt()
                * bn.gamma[o]
                + bn.beta[o];
            matches!(order.get(pos + 2).map(|&id| &net.layers[id]), Some(Layer::Relu))
                && c <= T::zero()
        }
        _ => false,
    }
}

/// Median-of-5 wall-clock comparison of dense vs pruned eval forward over
/// the same batch stream, after 3 warmup passes each. Single-threaded.
pub fn bench_speedup<T: Scalar>(
    dense_net: &mut Network<T>,
    dense_weights: &WeightSet<T>,
    pruned_net: &mut Network<T>,
    pruned_weights: &WeightSet<T>,
    batches: &[Tensor4<T>],
) -> Result<SpeedupReport> {
    let samples: usize = batches.iter().map(|b| b.n).sum();
    let batch = batches.first().map(|b| b.n).unwrap_or(0);
    let time_net = |net: &mut Network<T>, weights: &WeightSet<T>| -> Result<f64> {
        for _ in 0..3 {
            if let Some(b) = batches.first() {
                net.forward(weights, b, Mode::Eval)?;
            }
        }
        let mut runs = Vec::with_capacity(5);
        for _ in 0..5 {
            let start = Instant::now();
            for b in batches {
                net.forward(weights, b, Mode::Eval)?;
            }
            runs.push(start.elapsed().as_secs_f64() * 1e3);
        }
        runs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(runs[2])
    };
    let dense_ms = time_net(dense_net, dense_weights)?;
    let pruned_ms = time_net(pruned_net, pruned_weights)?;
    Ok(SpeedupReport {
        dense_ms,
        pruned_ms,
        speedup: dense_ms / pruned_ms,
        threads: 1,
        batch,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::BatchNorm;
    use crate::reparam::WeightShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn latent_with_zero_rows(
        c_out: usize,
        c_in: usize,
        k: usize,
        zero_rows: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> LatentTensor<f64> {
        let shape = WeightShape::Conv { c_out, c_in, k };
        let l = k * k;
        let mut surrogate = vec![0.0; c_out * c_in * l];
        for j in 0..c_out * c_in {
            if zero_rows.contains(&j) {
                continue;
            }
            for t in 0..l {
                surrogate[j * l + t] =
                    rng.gen_range(1..4) as f64 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
        LatentTensor::new(shape, surrogate)
    }

    #[test]
    fn all_zero_latent_full_mask() {
        let latent = LatentTensor::<f64>::zeros(WeightShape::Conv { c_out: 2, c_in: 2, k: 3 });
        let mask = slice_mask(&latent).unwrap();
        assert!(mask.zero.iter().all(|z| *z));
        assert_eq!(mask.sparsity(), 1.0);
    }

    #[test]
    fn single_nonzero_element_unmasks_row() {
        let mut latent = LatentTensor::<f64>::zeros(WeightShape::Conv { c_out: 2, c_in: 2, k: 2 });
        latent.surrogate[4 + 3] = 0.7; // rounds to 1
        let mask = slice_mask(&latent).unwrap();
        assert!(!mask.zero[1]);
        assert!(mask.zero[0] && mask.zero[2] && mask.zero[3]);
        assert_eq!(mask.sparsity(), 0.75);
    }

    #[test]
    fn sub_half_surrogates_count_as_zero_rows() {
        // rows {0, 0, nz, nz} -> sparsity 0.5
        let mut latent = LatentTensor::<f64>::zeros(WeightShape::Conv { c_out: 2, c_in: 2, k: 2 });
        for t in 0..4 {
            latent.surrogate[t] = 0.4; // rounds to zero
            latent.surrogate[2 * 4 + t] = 1.2;
            latent.surrogate[3 * 4 + t] = -0.8;
        }
        let mask = slice_mask(&latent).unwrap();
        assert_eq!(mask.zero, vec![true, true, false, false]);
        assert_eq!(mask.sparsity(), 0.5);
    }

    fn conv_only_net(spec: ConvSpec, hw: usize) -> Network<f64> {
        Network {
            layers: vec![Layer::Conv(spec)],
            blocks: vec![Block::Plain(vec![0])],
            num_classes: spec.c_out * hw * hw,
            input_shape: (spec.c_in, hw, hw),
        }
    }

    #[test]
    fn no_sparsity_counts_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ConvSpec { c_in: 2, c_out: 3, k: 3, stride: 1, padding: 1 };
        let net = conv_only_net(spec, 6);
        let latent = latent_with_zero_rows(3, 2, 3, &[], &mut rng);
        let masks = vec![Some(slice_mask(&latent).unwrap())];
        let (_, total) = count_flops(&net, &masks).unwrap();
        assert_eq!(total.dense, total.slice);
        assert_eq!(total.dense, total.structured);
        assert_eq!(total.dense, (3 * 2 * 9 * 36) as u64);
    }

    #[test]
    fn dead_input_channel_halves_both_counts() {
        // slices (input 0, ·) zero across both filters: channel removable
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ConvSpec { c_in: 2, c_out: 2, k: 3, stride: 1, padding: 1 };
        let net = conv_only_net(spec, 6);
        // rows are o*c_in + i; kill i == 0 for both o
        let latent = latent_with_zero_rows(2, 2, 3, &[0, 2], &mut rng);
        let masks = vec![Some(slice_mask(&latent).unwrap())];
        let (_, total) = count_flops(&net, &masks).unwrap();
        assert_eq!(total.slice, total.dense / 2);
        assert_eq!(total.structured, total.dense / 2);
    }

    #[test]
    fn slice_macs_scale_exactly_with_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec { c_in: 4, c_out: 4, k: 3, stride: 1, padding: 1 };
        let net = conv_only_net(spec, 6);
        let zero_rows: Vec<usize> = (0..16).filter(|j| j % 3 == 0).collect();
        let latent = latent_with_zero_rows(4, 4, 3, &zero_rows, &mut rng);
        let masks = vec![Some(slice_mask(&latent).unwrap())];
        let (_, total) = count_flops(&net, &masks).unwrap();
        let nonzero = 16 - zero_rows.len() as u64;
        assert_eq!(total.slice, nonzero * 9 * 36);
        // order: slice <= structured <= dense
        assert!(total.slice <= total.structured);
        assert!(total.structured <= total.dense);
    }

    #[test]
    fn block_sparse_matches_dense_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let spec = ConvSpec { c_in: 4, c_out: 6, k: 3, stride: 1, padding: 1 };
            let shape = WeightShape::Conv { c_out: 6, c_in: 4, k: 3 };
            let mut surrogate = vec![0.0f64; 24 * 9];
            for j in 0..24 {
                if rng.gen_bool(0.2) {
                    for t in 0..9 {
                        surrogate[j * 9 + t] = rng.gen_range(-3i32..=3) as f64;
                    }
                }
            }
            let latent = LatentTensor::new(shape, surrogate);
            let psi: Vec<f64> = (0..81).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let mask = slice_mask(&latent).unwrap();
            let input = Tensor4::from_vec(
                2,
                4,
                8,
                8,
                (0..2 * 4 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let sparse_out = block_sparse_conv(&input, &latent, &psi, &mask, &spec).unwrap();
            let weight = decode(&latent.quantized().unwrap(), 24, 9, &psi).unwrap();
            let (dense_out, _) = crate::layers::conv_forward(0, &spec, &weight, &input).unwrap();
            let max_diff = sparse_out
                .data
                .iter()
                .zip(&dense_out.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_diff < 1e-5, "max diff {max_diff}");
        }
    }

    #[test]
    fn all_true_mask_zero_output() {
        let spec = ConvSpec { c_in: 2, c_out: 2, k: 3, stride: 1, padding: 1 };
        let latent = LatentTensor::<f64>::zeros(WeightShape::Conv { c_out: 2, c_in: 2, k: 3 });
        let psi: Vec<f64> = (0..81).map(|i| (i as f64 * 0.37).sin()).collect();
        let mask = slice_mask(&latent).unwrap();
        let input = Tensor4::from_vec(1, 2, 5, 5, (0..50).map(|i| i as f64 * 0.1).collect());
        let out = block_sparse_conv(&input, &latent, &psi, &mask, &spec).unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_mask_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = ConvSpec { c_in: 2, c_out: 2, k: 3, stride: 1, padding: 1 };
        let latent = latent_with_zero_rows(2, 2, 3, &[0], &mut rng);
        let mut mask = slice_mask(&latent).unwrap();
        mask.zero[0] = false;
        let psi = vec![0.0; 81];
        let input = Tensor4::zeros(1, 2, 5, 5);
        assert!(block_sparse_conv(&input, &latent, &psi, &mask, &spec).is_err());
    }

    #[test]
    fn pruned_network_is_exact_when_bn_kills_dead_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec1 = ConvSpec { c_in: 2, c_out: 4, k: 3, stride: 1, padding: 1 };
        let spec2 = ConvSpec { c_in: 4, c_out: 3, k: 3, stride: 1, padding: 1 };
        let mut bn1 = BatchNorm::<f64>::new(4);
        for c in 0..4 {
            bn1.beta[c] = -0.1; // relu(bn(0)) == 0 on every channel
        }
        let bn2 = BatchNorm::<f64>::new(3);
        let net = Network {
            layers: vec![
                Layer::Conv(spec1),
                Layer::BatchNorm(bn1),
                Layer::Relu,
                Layer::Conv(spec2),
                Layer::BatchNorm(bn2),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense { c_in: 3, c_out: 2, bias: vec![0.05, -0.3] },
            ],
            blocks: vec![Block::Plain((0..8).collect())],
            num_classes: 2,
            input_shape: (2, 6, 6),
        };
        // integer-valued weights; filters 1 and 3 of conv1 are dead
        let mut w1 = vec![0.0f64; spec1.weight_len()];
        for o in [0usize, 2] {
            for t in 0..spec1.c_in * 9 {
                w1[o * spec1.c_in * 9 + t] = rng.gen_range(-3i32..=3) as f64;
            }
        }
        let w2: Vec<f64> = (0..spec2.weight_len()).map(|_| rng.gen_range(-3i32..=3) as f64).collect();
        let wd: Vec<f64> = (0..6).map(|_| rng.gen_range(-3i32..=3) as f64).collect();
        let mut weights: WeightSet<f64> = vec![None; 8];
        weights[0] = Some(w1.clone());
        weights[3] = Some(w2.clone());
        weights[7] = Some(wd.clone());
        let mut masks: Vec<Option<SliceMask>> = vec![None; 8];
        masks[0] = Some(
            slice_mask(&LatentTensor::new(WeightShape::Conv { c_out: 4, c_in: 2, k: 3 }, w1))
                .unwrap(),
        );
        masks[3] = Some(
            slice_mask(&LatentTensor::new(WeightShape::Conv { c_out: 3, c_in: 4, k: 3 }, w2))
                .unwrap(),
        );
        masks[7] = Some(
            slice_mask(&LatentTensor::new(WeightShape::Dense { c_out: 2, c_in: 3 }, wd)).unwrap(),
        );

        let (mut pruned, pruned_weights) = prune_structured(&net, &weights, &masks).unwrap();
        match &pruned.layers[0] {
            Layer::Conv(s) => assert_eq!(s.c_out, 2, "dead filters should be removed"),
            _ => unreachable!(),
        }
        let mut dense_net = net.clone();
        let batch =
            Tensor4::from_vec(2, 2, 6, 6, (0..144).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (dense_out, _) = dense_net.forward(&weights, &batch, Mode::Eval).unwrap();
        let (pruned_out, _) = pruned.forward(&pruned_weights, &batch, Mode::Eval).unwrap();
        let max_diff = dense_out
            .data
            .iter()
            .zip(&pruned_out.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "pruned forward diverged: {max_diff}");
    }
}
