//! Cross-entropy classification loss over logits.

use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::{Error, Result};

/// Mean over the batch of −log softmax(logits)[label]. Returns the scalar
/// loss and the gradient with respect to the logits,
/// (softmax − onehot) / batch.
pub fn xent_loss<T: Scalar>(logits: &Tensor4<T>, labels: &[u8]) -> Result<(T, Tensor4<T>)> {
    let n = logits.n;
    let classes = logits.c * logits.h * logits.w;
    if labels.len() != n {
        return Err(Error::Training(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let batch = T::from_f64(n as f64);
    let mut grad = Tensor4::zeros(logits.n, logits.c, logits.h, logits.w);
    let mut loss = T::zero();
    for i in 0..n {
        let label = labels[i] as usize;
        if label >= classes {
            return Err(Error::Training(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = &logits.data[i * classes..(i + 1) * classes];
        // log-sum-exp with max subtraction for stability
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &v in row {
            sum = sum + (v - max).exp();
        }
        let log_sum = sum.ln() + max;
        loss = loss + (log_sum - row[label]);
        for (j, &v) in row.iter().enumerate() {
            let softmax = (v - log_sum).exp();
            let onehot = if j == label { T::one() } else { T::zero() };
            grad.data[i * classes + j] = (softmax - onehot) / batch;
        }
    }
    loss = loss / batch;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}

/// Top-1 accuracy of logits against labels.
pub fn top1_count<T: Scalar>(logits: &Tensor4<T>, labels: &[u8]) -> usize {
    let classes = logits.c * logits.h * logits.w;
    let mut correct = 0;
    for i in 0..logits.n {
        let row = &logits.data[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for j in 1..classes {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == labels[i] as usize {
            correct += 1;
        }
    }
    correct
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        for classes in [2usize, 5, 10] {
            let logits = Tensor4::from_vec(1, classes, 1, 1, vec![0.37f64; classes]);
            let (loss, _) = xent_loss(&logits, &[0]).unwrap();
            assert!((loss - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logit_loss() {
        // logits (10, −10), label 0: loss = ln(1 + e^{-20}) ≈ 2.0612e-9
        let logits = Tensor4::from_vec(1, 2, 1, 1, vec![10.0f64, -10.0]);
        let (loss, _) = xent_loss(&logits, &[0]).unwrap();
        let expect = (1.0 + (-20.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-15);
        assert!((loss - 2.061e-9).abs() < 1e-11);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = vec![0.3f64, -1.2, 0.8, 0.1, 2.0, -0.5];
        let labels = [2u8, 0];
        let logits = Tensor4::from_vec(2, 3, 1, 1, base.clone());
        let (_, grad) = xent_loss(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let (lp, _) = xent_loss(&Tensor4::from_vec(2, 3, 1, 1, plus), &labels).unwrap();
            let (lm, _) = xent_loss(&Tensor4::from_vec(2, 3, 1, 1, minus), &labels).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad.data[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "component {i}: analytic {} vs fd {fd}", grad.data[i]);
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Tensor4::from_vec(1, 3, 1, 1, vec![0.0f32; 3]);
        assert!(xent_loss(&logits, &[3]).is_err());
    }
}
