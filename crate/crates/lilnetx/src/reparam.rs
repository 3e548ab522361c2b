//! Latent-space weight reparameterization.
//!
//! Every compressible layer keeps a continuous surrogate matrix Ŵ with one
//! row per weight slice (a K×K plane for conv, a single element for dense).
//! The integer view W̃ = round(Ŵ) is recomputed on demand and decoded into
//! layer weights through a per-group square transform Ψ with no shift term,
//! so an all-zero latent row always decodes to an all-zero weight slice.
//! Rounding is bypassed by a straight-through estimator in backward.

use crate::layers::Layer;
use crate::net::Network;
use crate::scalar::{gemm_nn, gemm_nt, gemm_tn, Scalar};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Target shape a latent tensor decodes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightShape {
    Conv { c_out: usize, c_in: usize, k: usize },
    Dense { c_out: usize, c_in: usize },
}

impl WeightShape {
    pub fn rows(&self) -> usize {
        match self {
            WeightShape::Conv { c_out, c_in, .. } => c_out * c_in,
            WeightShape::Dense { c_out, c_in } => c_out * c_in,
        }
    }

    pub fn slice_len(&self) -> usize {
        match self {
            WeightShape::Conv { k, .. } => k * k,
            WeightShape::Dense { .. } => 1,
        }
    }

    /// Channel count used by the variance-matching initialization: the larger
    /// of fan-in and fan-out.
    pub fn fan(&self) -> usize {
        match self {
            WeightShape::Conv { c_out, c_in, .. } | WeightShape::Dense { c_out, c_in } => {
                (*c_out).max(*c_in)
            }
        }
    }
}

/// Continuous surrogate Ŵ for one layer, stored row-major (rows × l).
/// Row j corresponds to weight slice j in (c_out-major, c_in-minor) order,
/// matching the flat (c_out, c_in, k, k) weight layout.
#[derive(Debug, Clone)]
pub struct LatentTensor<T> {
    pub surrogate: Vec<T>,
    pub rows: usize,
    pub l: usize,
    pub shape: WeightShape,
}

impl<T: Scalar> LatentTensor<T> {
    pub fn new(shape: WeightShape, surrogate: Vec<T>) -> Self {
        let rows = shape.rows();
        let l = shape.slice_len();
        assert_eq!(surrogate.len(), rows * l, "latent size mismatch");
        Self { surrogate, rows, l, shape }
    }

    pub fn zeros(shape: WeightShape) -> Self {
        let n = shape.rows() * shape.slice_len();
        Self::new(shape, vec![T::zero(); n])
    }

    /// W̃ = round(Ŵ), elementwise nearest integer with halves away from zero.
    pub fn quantized(&self) -> Result<Vec<T>> {
        quantize(&self.surrogate)
    }

    /// Integer symbols of W̃ for the codec.
    pub fn quantized_i32(&self) -> Result<Vec<i32>> {
        self.surrogate
            .iter()
            .map(|v| {
                if !v.is_finite() {
                    return Err(Error::NonFinite("latent surrogate".into()));
                }
                let r = v.round().as_f64();
                if r.abs() > i32::MAX as f64 {
                    return Err(Error::NonFinite(format!("latent magnitude {r} overflows i32")));
                }
                Ok(r as i32)
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> LatentTensor<U> {
        LatentTensor {
            surrogate: self.surrogate.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            rows: self.rows,
            l: self.l,
            shape: self.shape,
        }
    }
}

/// Elementwise nearest-integer rounding; halves round away from zero.
pub fn quantize<T: Scalar>(surrogate: &[T]) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(surrogate.len());
    for v in surrogate {
        if !v.is_finite() {
            return Err(Error::NonFinite("latent surrogate".into()));
        }
        out.push(v.round());
    }
    Ok(out)
}

/// W = reshape(W̃ Ψ). `quantized` is the rows×l integer view, `psi` is l×l.
/// The result is the flat layer weight in (c_out, c_in, k, k) order.
pub fn decode<T: Scalar>(
    quantized: &[T],
    rows: usize,
    l: usize,
    psi: &[T],
) -> Result<Vec<T>> {
    if quantized.len() != rows * l || psi.len() != l * l {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: format!(
                "decode: latent {}x{l} with psi of {} entries",
                rows,
                psi.len()
            ),
        });
    }
    let mut out = vec![T::zero(); rows * l];
    if l == 1 {
        for (o, q) in out.iter_mut().zip(quantized) {
            *o = *q * psi[0];
        }
    } else {
        gemm_nn(rows, l, l, quantized, psi, T::zero(), &mut out);
    }
    Ok(out)
}

/// Straight-through gradients for the decode path: rounding is treated as
/// identity, so grad_Ŵ = grad_W · Ψᵀ and grad_Ψ = W̃ᵀ · grad_W.
pub fn ste_backward<T: Scalar>(
    grad_w: &[T],
    quantized: &[T],
    rows: usize,
    l: usize,
    psi: &[T],
) -> (Vec<T>, Vec<T>) {
    debug_assert_eq!(grad_w.len(), rows * l);
    debug_assert_eq!(psi.len(), l * l);
    let mut grad_surrogate = vec![T::zero(); rows * l];
    let mut grad_psi = vec![T::zero(); l * l];
    if l == 1 {
        for i in 0..rows {
            grad_surrogate[i] = grad_w[i] * psi[0];
            grad_psi[0] = grad_psi[0] + quantized[i] * grad_w[i];
        }
    } else {
        gemm_nt(rows, l, l, grad_w, psi, T::zero(), &mut grad_surrogate);
        gemm_tn(l, rows, l, quantized, grad_w, T::zero(), &mut grad_psi);
    }
    (grad_surrogate, grad_psi)
}

/// A set of layers sharing one decoder Ψ and one entropy model.
#[derive(Debug, Clone)]
pub struct ParameterGroup<T> {
    pub name: String,
    /// Layer ids of the members, in network order.
    pub members: Vec<usize>,
    pub l: usize,
    pub psi: Vec<T>,
}

/// Group compressible layers by (kind, K): all K×K convolutions share one
/// group, all dense layers share another. Biases and batchnorm parameters
/// stay outside every group and are stored raw.
pub fn partition_model<T: Scalar>(net: &Network<T>) -> Result<Vec<ParameterGroup<T>>> {
    let mut groups: Vec<(String, usize, Vec<usize>)> = Vec::new();
    for (id, layer) in net.layers.iter().enumerate() {
        let (key, l) = match layer {
            Layer::Conv(spec) => {
                if spec.k < 1 || spec.c_in < 1 || spec.c_out < 1 {
                    return Err(Error::Config(format!(
                        "layer {id}: conv with degenerate shape cannot be compressed"
                    )));
                }
                (format!("conv{0}x{0}", spec.k), spec.k * spec.k)
            }
            Layer::Dense { .. } => ("dense".to_string(), 1),
            Layer::BatchNorm(_) | Layer::Relu | Layer::GlobalAvgPool => continue,
        };
        match groups.iter_mut().find(|(name, _, _)| *name == key) {
            Some((_, gl, members)) => {
                debug_assert_eq!(*gl, l);
                members.push(id);
            }
            None => groups.push((key, l, vec![id])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(name, l, members)| ParameterGroup {
            name,
            members,
            l,
            // identity until init_group assigns the variance-matched transform
            psi: identity_psi(l),
        })
        .collect())
}

fn identity_psi<T: Scalar>(l: usize) -> Vec<T> {
    let mut psi = vec![T::zero(); l * l];
    for i in 0..l {
        psi[i * l + i] = T::one();
    }
    psi
}

/// Variance of Ψ entries for a group: v = 24 / (l · f_max · ((2·b_min+1)² − 1)).
pub fn psi_variance(l: usize, f_max: usize, b_min: f64) -> f64 {
    24.0 / (l as f64 * f_max as f64 * ((2.0 * b_min + 1.0).powi(2) - 1.0))
}

/// Surrogate init half-width for a layer with fan `f` inside a group whose
/// largest fan is `f_max`: b = (√(f_max/f · ((2·b_min+1)²−1) + 1) − 1) / 2.
/// The layer with the largest fan gets exactly b_min.
pub fn surrogate_bound(f: usize, f_max: usize, b_min: f64) -> f64 {
    let spread = (2.0 * b_min + 1.0).powi(2) - 1.0;
    ((f_max as f64 / f as f64 * spread + 1.0).sqrt() - 1.0) / 2.0
}

/// Initialize the group's Ψ and one surrogate tensor per member layer so the
/// decoded weights come out with approximately He variance 2/f.
pub fn init_group<T: Scalar, R: Rng>(
    group: &mut ParameterGroup<T>,
    shapes: &[WeightShape],
    b_min: f64,
    rng: &mut R,
) -> Result<Vec<LatentTensor<T>>> {
    if b_min <= 0.5 {
        return Err(Error::Config(format!(
            "b_min must exceed 0.5 to leave nonzero weights after rounding, got {b_min}"
        )));
    }
    if shapes.len() != group.members.len() {
        return Err(Error::Config("one weight shape per group member required".into()));
    }
    let f_max = shapes.iter().map(WeightShape::fan).max().unwrap_or(1);
    let v = psi_variance(group.l, f_max, b_min);
    let normal = Normal::new(0.0, v.sqrt()).expect("valid stddev");
    group.psi = (0..group.l * group.l)
        .map(|_| T::from_f64(normal.sample(rng)))
        .collect();
    let mut latents = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let b = surrogate_bound(shape.fan(), f_max, b_min);
        let n = shape.rows() * shape.slice_len();
        let surrogate = (0..n).map(|_| T::from_f64(rng.gen_range(-b..=b))).collect();
        latents.push(LatentTensor::new(*shape, surrogate));
    }
    Ok(latents)
}

/// Weight shape of a compressible layer.
pub fn layer_weight_shape<T: Scalar>(layer: &Layer<T>) -> Option<WeightShape> {
    match layer {
        Layer::Conv(spec) => {
            Some(WeightShape::Conv { c_out: spec.c_out, c_in: spec.c_in, k: spec.k })
        }
        Layer::Dense { c_in, c_out, .. } => {
            Some(WeightShape::Dense { c_out: *c_out, c_in: *c_in })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantize_halves_round_away_from_zero() {
        let q = quantize(&[0.49f64, -0.49, 0.5, -1.5, 3.0, -2.0]).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 1.0, -2.0, 3.0, -2.0]);
    }

    #[test]
    fn quantize_is_idempotent() {
        let q1 = quantize(&[0.7f32, -1.2, 2.5, -0.5]).unwrap();
        let q2 = quantize(&q1).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn quantize_rejects_non_finite() {
        assert!(quantize(&[f32::NAN]).is_err());
        assert!(quantize(&[f32::INFINITY]).is_err());
    }

    #[test]
    fn decode_identity_psi_is_reshape() {
        let latent = vec![1.0f64, -2.0, 0.0, 3.0, 4.0, -5.0, 6.0, 7.0];
        let psi = vec![
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ];
        let w = decode(&latent, 2, 4, &psi).unwrap();
        assert_eq!(w, latent);
    }

    #[test]
    fn decode_zero_row_gives_zero_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let l = 4;
            let psi: Vec<f64> = (0..l * l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let latent = vec![0.0, 0.0, 0.0, 0.0, 1.0, -3.0, 2.0, 5.0];
            let w = decode(&latent, 2, l, &psi).unwrap();
            assert!(w[..l].iter().all(|v| *v == 0.0));
            assert!(w[l..].iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn decode_basis_row_selects_psi_row() {
        let psi = vec![
            0.1f64, 0.2, 0.3, 0.4, //
            1.0, 2.0, 3.0, 4.0, //
            5.0, 6.0, 7.0, 8.0, //
            9.0, 10.0, 11.0, 12.0,
        ];
        let latent = vec![1.0, 0.0, 0.0, 0.0];
        let w = decode(&latent, 1, 4, &psi).unwrap();
        assert_eq!(w, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn decode_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = 3;
        let rows = 5;
        let psi: Vec<f64> = (0..l * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..rows * l).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..rows * l).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (ca, cb) = (2.5, -1.25);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| ca * x + cb * y).collect();
        let da = decode(&a, rows, l, &psi).unwrap();
        let db = decode(&b, rows, l, &psi).unwrap();
        let dmix = decode(&mix, rows, l, &psi).unwrap();
        for i in 0..rows * l {
            assert!((dmix[i] - (ca * da[i] + cb * db[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn ste_identity_psi_passes_gradient_through() {
        let grad_w = vec![1.0f64, 2.0, 3.0, 4.0];
        let quantized = vec![1.0, 0.0, -1.0, 2.0];
        let psi = vec![1.0, 0.0, 0.0, 1.0];
        let (gs, _) = ste_backward(&grad_w, &quantized, 2, 2, &psi);
        assert_eq!(gs, grad_w);
    }

    #[test]
    fn ste_zero_gradient_yields_zero() {
        let grad_w = vec![0.0f64; 6];
        let quantized = vec![1.0, -2.0, 0.0, 3.0, 1.0, 1.0];
        let psi = vec![0.3, -0.7, 1.1, 0.2, 0.5, -0.4, 0.9, 0.0, 0.6];
        let (gs, gp) = ste_backward(&grad_w, &quantized, 2, 3, &psi);
        assert!(gs.iter().all(|v| *v == 0.0));
        assert!(gp.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ste_adjoint_identity() {
        // ⟨grad_W, decode(ΔW̃, Ψ)⟩ == ⟨grad_Ŵ, ΔW̃⟩ for any perturbation
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let l = rng.gen_range(1..5usize);
            let rows = rng.gen_range(1..7usize);
            let psi: Vec<f64> = (0..l * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let quantized: Vec<f64> =
                (0..rows * l).map(|_| rng.gen_range(-3i32..4i32) as f64).collect();
            let grad_w: Vec<f64> = (0..rows * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let delta: Vec<f64> = (0..rows * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (grad_s, _) = ste_backward(&grad_w, &quantized, rows, l, &psi);
            let dec_delta = decode(&delta, rows, l, &psi).unwrap();
            let lhs: f64 = grad_w.iter().zip(&dec_delta).map(|(a, b)| a * b).sum();
            let rhs: f64 = grad_s.iter().zip(&delta).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn partition_groups_by_kind_and_k() {
        use crate::layers::{BatchNorm, ConvSpec};
        use crate::net::Block;
        // 7x7 stem, 3x3 body, dense head -> 3 groups
        let layers: Vec<Layer<f32>> = vec![
            Layer::Conv(ConvSpec { c_in: 3, c_out: 8, k: 7, stride: 2, padding: 3 }),
            Layer::BatchNorm(BatchNorm::new(8)),
            Layer::Relu,
            Layer::Conv(ConvSpec { c_in: 8, c_out: 8, k: 3, stride: 1, padding: 1 }),
            Layer::Conv(ConvSpec { c_in: 8, c_out: 8, k: 3, stride: 1, padding: 1 }),
            Layer::GlobalAvgPool,
            Layer::Dense { c_in: 8, c_out: 10, bias: vec![0.0; 10] },
        ];
        let net = Network {
            layers,
            blocks: vec![Block::Plain((0..7).collect())],
            num_classes: 10,
            input_shape: (3, 32, 32),
        };
        let groups = partition_model(&net).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0].name, "conv7x7");
        assert_eq!(groups[0].l, 49);
        assert_eq!(groups[1].name, "conv3x3");
        assert_eq!(groups[1].members, vec![3, 4]);
        assert_eq!(groups[2].name, "dense");
        assert_eq!(groups[2].l, 1);
    }

    #[test]
    fn init_bound_equals_bmin_at_max_fan() {
        let b = surrogate_bound(64, 64, 2.0);
        assert!((b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn psi_variance_matches_hand_computation() {
        // l=9, f_max=64, b_min=0.5: v = 24/(9·64·3)
        let v = psi_variance(9, 64, 0.5);
        assert!((v - 0.013888888888888888).abs() < 1e-15);
    }

    #[test]
    fn init_rejects_small_bmin() {
        let mut g = ParameterGroup::<f64> {
            name: "dense".into(),
            members: vec![0],
            l: 1,
            psi: vec![1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shapes = [WeightShape::Dense { c_out: 10, c_in: 4 }];
        assert!(init_group(&mut g, &shapes, 0.5, &mut rng).is_err());
        assert!(init_group(&mut g, &shapes, 0.6, &mut rng).is_ok());
    }
}
