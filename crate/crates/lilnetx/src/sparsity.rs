//! Sparsity priors applied to the continuous surrogates: a zero-mean
//! unstructured penalty and a group (slice) penalty over latent rows.

use crate::reparam::LatentTensor;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightNorm {
    L2,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupNorm {
    L2,
    LInf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SparsityConfig {
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub weight_norm: WeightNorm,
    pub group_norm: GroupNorm,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self { lambda_u: 0.0, lambda_s: 0.0, weight_norm: WeightNorm::L2, group_norm: GroupNorm::L2 }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !self.lambda_u.is_finite() || self.lambda_u < 0.0 {
            return Err(crate::Error::Config(format!("lambda_u must be >= 0, got {}", self.lambda_u)));
        }
        if !self.lambda_s.is_finite() || self.lambda_s < 0.0 {
            return Err(crate::Error::Config(format!("lambda_s must be >= 0, got {}", self.lambda_s)));
        }
        Ok(())
    }
}

/// Zero-mean prior on the surrogates. l2: λ_U·Σŵ² with gradient 2λ_U·ŵ;
/// l1: λ_U·Σ|ŵ| with subgradient 0 at exactly zero. Gradient accumulates
/// into `grad`.
pub fn unstructured_penalty<T: Scalar>(
    surrogate: &[T],
    lambda_u: f64,
    norm: WeightNorm,
    grad: &mut [T],
) -> T {
    let lam = T::from_f64(lambda_u);
    let two = T::from_f64(2.0);
    let mut value = T::zero();
    match norm {
        WeightNorm::L2 => {
            for (g, &w) in grad.iter_mut().zip(surrogate) {
                value = value + w * w;
                *g = *g + two * lam * w;
            }
        }
        WeightNorm::L1 => {
            for (g, &w) in grad.iter_mut().zip(surrogate) {
                value = value + w.abs();
                *g = *g + lam * w.signum() * if w == T::zero() { T::zero() } else { T::one() };
            }
        }
    }
    lam * value
}

/// Group (slice) penalty over latent rows: λ_S·Σ_j √ρ_j·‖Ŵ_j‖ with the row
/// norm chosen by `norm`. Zero rows take the zero subgradient so pruned
/// slices stay pruned; for l∞ the subgradient splits equally across
/// max-magnitude ties. Gradient accumulates into `grad`.
pub fn group_penalty<T: Scalar>(
    surrogate: &[T],
    rows: usize,
    l: usize,
    rho: &[T],
    lambda_s: f64,
    norm: GroupNorm,
    grad: &mut [T],
) -> T {
    debug_assert_eq!(surrogate.len(), rows * l);
    debug_assert_eq!(rho.len(), rows);
    let lam = T::from_f64(lambda_s);
    let mut value = T::zero();
    for j in 0..rows {
        let row = &surrogate[j * l..(j + 1) * l];
        let sqrt_rho = rho[j].sqrt();
        match norm {
            GroupNorm::L2 => {
                let mut sq = T::zero();
                for &w in row {
                    sq = sq + w * w;
                }
                let nrm = sq.sqrt();
                value = value + sqrt_rho * nrm;
                if nrm > T::zero() {
                    let scale = lam * sqrt_rho / nrm;
                    for (i, &w) in row.iter().enumerate() {
                        grad[j * l + i] = grad[j * l + i] + scale * w;
                    }
                }
            }
            GroupNorm::LInf => {
                let mut maxabs = T::zero();
                for &w in row {
                    maxabs = maxabs.max(w.abs());
                }
                value = value + sqrt_rho * maxabs;
                if maxabs > T::zero() {
                    let ties = row.iter().filter(|w| w.abs() == maxabs).count();
                    let share = lam * sqrt_rho / T::from_f64(ties as f64);
                    for (i, &w) in row.iter().enumerate() {
                        if w.abs() == maxabs {
                            grad[j * l + i] = grad[j * l + i] + share * w.signum();
                        }
                    }
                }
            }
        }
    }
    lam * value
}

/// Full computation term over all compressible tensors: the sum of both
/// penalties, with ρ_j fixed to the slice element count l. Gradients
/// accumulate into the matching entries of `grads`.
pub fn compute_loss<T: Scalar>(
    latents: &[&LatentTensor<T>],
    cfg: &SparsityConfig,
    grads: &mut [Vec<T>],
) -> T {
    debug_assert_eq!(latents.len(), grads.len());
    let mut total = T::zero();
    for (latent, grad) in latents.iter().zip(grads.iter_mut()) {
        debug_assert_eq!(grad.len(), latent.surrogate.len());
        if cfg.lambda_u > 0.0 {
            total = total
                + unstructured_penalty(&latent.surrogate, cfg.lambda_u, cfg.weight_norm, grad);
        }
        if cfg.lambda_s > 0.0 {
            let rho = vec![T::from_f64(latent.l as f64); latent.rows];
            total = total
                + group_penalty(
                    &latent.surrogate,
                    latent.rows,
                    latent.l,
                    &rho,
                    cfg.lambda_s,
                    cfg.group_norm,
                    grad,
                );
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reparam::WeightShape;

    #[test]
    fn zero_surrogate_zero_penalty() {
        let mut grad = vec![0.0f64; 4];
        let v = unstructured_penalty(&[0.0; 4], 0.3, WeightNorm::L2, &mut grad);
        assert_eq!(v, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
        let mut grad = vec![0.0f64; 4];
        let v = group_penalty(&[0.0; 4], 2, 2, &[2.0, 2.0], 0.5, GroupNorm::L2, &mut grad);
        assert_eq!(v, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn unstructured_hand_values() {
        // Ŵ = [[3,4]], λ_U=0.1: l2 -> 0.1·(9+16) = 2.5, l1 -> 0.1·(3+4) = 0.7
        let mut grad = vec![0.0f64; 2];
        let v2 = unstructured_penalty(&[3.0, 4.0], 0.1, WeightNorm::L2, &mut grad);
        assert!((v2 - 2.5).abs() < 1e-12);
        assert!((grad[0] - 0.6).abs() < 1e-12);
        assert!((grad[1] - 0.8).abs() < 1e-12);
        let mut grad = vec![0.0f64; 2];
        let v1 = unstructured_penalty(&[3.0, 4.0], 0.1, WeightNorm::L1, &mut grad);
        assert!((v1 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn group_hand_values() {
        // row (3,4), ρ=2, λ_S=1: l2 -> √2·5, l∞ -> √2·4
        let mut grad = vec![0.0f64; 2];
        let v = group_penalty(&[3.0, 4.0], 1, 2, &[2.0], 1.0, GroupNorm::L2, &mut grad);
        assert!((v - 2.0f64.sqrt() * 5.0).abs() < 1e-12);
        let mut grad = vec![0.0f64; 2];
        let v = group_penalty(&[3.0, 4.0], 1, 2, &[2.0], 1.0, GroupNorm::LInf, &mut grad);
        assert!((v - 2.0f64.sqrt() * 4.0).abs() < 1e-12);
        assert_eq!(grad[0], 0.0);
        assert!((grad[1] - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn linf_splits_ties_equally() {
        let mut grad = vec![0.0f64; 3];
        let v = group_penalty(&[2.0, -2.0, 1.0], 1, 3, &[1.0], 1.0, GroupNorm::LInf, &mut grad);
        assert!((v - 2.0).abs() < 1e-12);
        assert!((grad[0] - 0.5).abs() < 1e-12);
        assert!((grad[1] + 0.5).abs() < 1e-12);
        assert_eq!(grad[2], 0.0);
    }

    #[test]
    fn combined_terms_hand_value() {
        // Ŵ = [[0,0],[3,4]], λ_U=0.1, λ_S=0.01, ρ=2: 2.5 + 0.01·√2·5 = 2.570711
        let surrogate = [0.0f64, 0.0, 3.0, 4.0];
        let mut grad = vec![0.0f64; 4];
        let v = unstructured_penalty(&surrogate, 0.1, WeightNorm::L2, &mut grad)
            + group_penalty(&surrogate, 2, 2, &[2.0, 2.0], 0.01, GroupNorm::L2, &mut grad);
        assert!((v - 2.570710678).abs() < 1e-8, "got {v}");
        // zero row keeps zero group gradient; unstructured gradient is zero there too
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn zero_lambdas_zero_loss() {
        let latent =
            LatentTensor::new(WeightShape::Dense { c_out: 2, c_in: 2 }, vec![1.0f64, -2.0, 3.0, 0.5]);
        let cfg = SparsityConfig::default();
        let mut grads = vec![vec![0.0f64; 4]];
        let v = compute_loss(&[&latent], &cfg, &mut grads);
        assert_eq!(v, 0.0);
        assert!(grads[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences_away_from_zero_rows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let cfg = SparsityConfig {
            lambda_u: 0.07,
            lambda_s: 0.2,
            weight_norm: WeightNorm::L2,
            group_norm: GroupNorm::L2,
        };
        let shape = WeightShape::Conv { c_out: 3, c_in: 2, k: 2 };
        // keep rows away from zero so the l2 group norm is differentiable
        let surrogate: Vec<f64> = (0..24)
            .map(|_| {
                let v: f64 = rng.gen_range(0.5..2.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let latent = LatentTensor::new(shape, surrogate.clone());
        let mut grads = vec![vec![0.0f64; 24]];
        let _ = compute_loss(&[&latent], &cfg, &mut grads);
        let h = 1e-6;
        for i in 0..24 {
            let eval = |v: f64| {
                let mut s = surrogate.clone();
                s[i] = v;
                let lt = LatentTensor::new(shape, s);
                let mut g = vec![vec![0.0f64; 24]];
                compute_loss(&[&lt], &cfg, &mut g)
            };
            let fd = (eval(surrogate[i] + h) - eval(surrogate[i] - h)) / (2.0 * h);
            let rel = (grads[0][i] - fd).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-4, "elem {i}: analytic {} vs fd {fd}", grads[0][i]);
        }
    }

    #[test]
    fn scale_covariance() {
        let w = [0.5f64, -1.5, 2.0, 0.25];
        let c = 3.0;
        let scaled: Vec<f64> = w.iter().map(|v| c * v).collect();
        let mut g = vec![0.0; 4];
        let base = unstructured_penalty(&w, 1.0, WeightNorm::L2, &mut g);
        let mut g = vec![0.0; 4];
        let big = unstructured_penalty(&scaled, 1.0, WeightNorm::L2, &mut g);
        assert!((big - c * c * base).abs() < 1e-9);
        let mut g = vec![0.0; 4];
        let gbase = group_penalty(&w, 2, 2, &[2.0, 2.0], 1.0, GroupNorm::L2, &mut g);
        let mut g = vec![0.0; 4];
        let gbig = group_penalty(&scaled, 2, 2, &[2.0, 2.0], 1.0, GroupNorm::L2, &mut g);
        assert!((gbig - c.abs() * gbase).abs() < 1e-9);
    }

    #[test]
    fn row_permutation_invariance() {
        let rows = [[1.0f64, -2.0], [0.0, 0.5], [3.0, 3.0]];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let permuted: Vec<f64> = [rows[2], rows[0], rows[1]].iter().flatten().copied().collect();
        let rho = [2.0; 3];
        let mut g = vec![0.0; 6];
        let a = group_penalty(&flat, 3, 2, &rho, 1.0, GroupNorm::L2, &mut g);
        let mut g = vec![0.0; 6];
        let b = group_penalty(&permuted, 3, 2, &rho, 1.0, GroupNorm::L2, &mut g);
        assert!((a - b).abs() < 1e-12);
    }
}
