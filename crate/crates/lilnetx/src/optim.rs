//! Adam with bias correction and the cosine learning-rate schedule.

use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    /// One (m, v) moment pair per registered parameter tensor.
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr: T::from_f64(lr),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            step: 0,
            moments: sizes.iter().map(|&s| (vec![T::zero(); s], vec![T::zero(); s])).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.moments.len()
    }

    /// One Adam step over every registered parameter tensor. `params` and
    /// `grads` must be passed in registration order; the step counter
    /// advances once per call.
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut [T]>,
        grads: impl Iterator<Item = &'a [T]>,
        names: impl Fn(usize) -> String,
    ) -> Result<()> {
        self.step += 1;
        let t = T::from_f64(self.step as f64);
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);
        let mut count = 0;
        for (idx, (param, grad)) in params.zip(grads).enumerate() {
            let (m, v) = &mut self.moments[idx];
            assert_eq!(param.len(), m.len(), "parameter {idx} size changed");
            assert_eq!(grad.len(), m.len(), "gradient {idx} size mismatch");
            for i in 0..param.len() {
                let g = grad[i];
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", names(idx))));
                }
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] = param[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            count += 1;
        }
        assert_eq!(count, self.moments.len(), "missing parameter tensors in step");
        Ok(())
    }
}

/// lr0 · ½ (1 + cos(π · step / total)). Steps past the schedule end clamp
/// to zero with a warning.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    if step > total_steps {
        log::warn!("cosine_lr: step {step} past schedule end {total_steps}, clamping to 0");
        return 0.0;
    }
    let frac = step as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::<f64>::new(0.01, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        for _ in 0..10 {
            adam.step([p.as_mut_slice()].into_iter(), [[0.0; 3].as_slice()].into_iter(), |_| {
                "p".into()
            })
            .unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn single_step_unit_gradient_moves_by_lr() {
        // one step with g=1: m̂=1, v̂=1, so Δ = −lr·1/(1+ε) ≈ −lr
        let mut adam = AdamState::<f64>::new(0.01, &[1]);
        let mut p = vec![0.0];
        adam.step([p.as_mut_slice()].into_iter(), [[1.0].as_slice()].into_iter(), |_| "p".into())
            .unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9, "got {}", p[0]);
    }

    #[test]
    fn disjoint_optimizers_do_not_interact() {
        let mut a = AdamState::<f64>::new(0.1, &[2]);
        let mut b = AdamState::<f64>::new(0.001, &[2]);
        let mut pa = vec![1.0, 1.0];
        let mut pb = vec![1.0, 1.0];
        a.step([pa.as_mut_slice()].into_iter(), [[1.0, -1.0].as_slice()].into_iter(), |_| {
            "a".into()
        })
        .unwrap();
        let pb_before = pb.clone();
        assert_eq!(pb, pb_before);
        b.step([pb.as_mut_slice()].into_iter(), [[1.0, -1.0].as_slice()].into_iter(), |_| {
            "b".into()
        })
        .unwrap();
        assert_eq!(a.step, 1);
        assert_eq!(b.step, 1);
        assert!((pa[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((pb[0] - (1.0 - 0.001)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut adam = AdamState::<f64>::new(0.01, &[1]);
        let mut p = vec![0.0];
        let err = adam
            .step(
                [p.as_mut_slice()].into_iter(),
                [[f64::NAN].as_slice()].into_iter(),
                |_| "psi[conv3x3]".into(),
            )
            .unwrap_err();
        assert!(err.to_string().contains("psi[conv3x3]"));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.5), 0.5);
        assert!((cosine_lr(50, 100, 0.5) - 0.25).abs() < 1e-12);
        assert!(cosine_lr(100, 100, 0.5).abs() < 1e-16);
        assert_eq!(cosine_lr(101, 100, 0.5), 0.0);
    }
}
