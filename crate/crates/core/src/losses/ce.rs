use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax, Matrix};

use super::LossBundle;

/// Loss value with gradients with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBundle {
    pub value: f64,
    pub logit_grads: Matrix,
}

/// Combined objective: value plus gradients for both the logits and the features.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalBundle {
    pub value: f64,
    pub logit_grads: Matrix,
    pub feature_grads: Matrix,
}

/// Mean cross-entropy of `logits` (M×K) against 1-based `labels`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<LogitBundle> {
    let (m, k) = (logits.rows(), logits.cols());
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != m {
        return Err(Error::DimMismatch { expected: m, got: labels.len() });
    }
    let inv_m = 1.0 / m as f64;
    let mut value = 0.0;
    let mut grads = Matrix::zeros(m, k);
    for (i, &y) in labels.iter().enumerate() {
        if y == 0 || y > k {
            return Err(Error::LabelOutOfRange { label: y, k });
        }
        let row = logits.row(i);
        value += (log_sum_exp(row) - row[y - 1]) * inv_m;
        let p = softmax(row)?;
        for (c, (g, pc)) in grads.row_mut(i).iter_mut().zip(p).enumerate() {
            let onehot = if c == y - 1 { 1.0 } else { 0.0 };
            *g = (pc - onehot) * inv_m;
        }
    }
    Ok(LogitBundle { value, logit_grads: grads })
}

/// `ce + λ·hybrid`, with the gradients weighted the same way.
pub fn total_loss(ce: &LogitBundle, hyb: &LossBundle, lambda_hyb: f64) -> TotalBundle {
    let mut feature_grads = hyb.feature_grads.clone();
    feature_grads.as_mut_slice().iter_mut().for_each(|g| *g *= lambda_hyb);
    TotalBundle {
        value: ce.value + lambda_hyb * hyb.value,
        logit_grads: ce.logit_grads.clone(),
        feature_grads,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        let l = cross_entropy_loss(&Matrix::zeros(4, 3), &[1, 2, 3, 1]).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
        assert!((l.value - 1.098612).abs() < 1e-6);
    }

    #[test]
    fn saturated_margin() {
        let logits = Matrix::from_vec(1, 3, vec![50.0, 0.0, 0.0]).unwrap();
        let l = cross_entropy_loss(&logits, &[1]).unwrap();
        assert!(l.value <= 1e-20, "{}", l.value);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy_loss(&Matrix::zeros(1, 3), &[4]),
            Err(Error::LabelOutOfRange { label: 4, k: 3 })
        ));
        assert!(cross_entropy_loss(&Matrix::zeros(1, 3), &[0]).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for _ in 0..50 {
            let logits = Matrix::from_fn(5, 3, |_, _| rng.random_range(-3.0..3.0));
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(1..=3)).collect();
            let l = cross_entropy_loss(&logits, &labels).unwrap();
            for i in 0..5 {
                assert!(l.logit_grads.row(i).iter().sum::<f64>().abs() <= 1e-12);
                for c in 0..3 {
                    let mut p = logits.clone();
                    p.set(i, c, p.get(i, c) + h);
                    let mut q = logits.clone();
                    q.set(i, c, q.get(i, c) - h);
                    let fd = (cross_entropy_loss(&p, &labels).unwrap().value
                        - cross_entropy_loss(&q, &labels).unwrap().value)
                        / (2.0 * h);
                    let a = l.logit_grads.get(i, c);
                    assert!((a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1e-3));
                }
            }
        }
    }

    #[test]
    fn small_step_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let mut logits = Matrix::from_fn(4, 3, |_, _| rng.random_range(-3.0..3.0));
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(1..=3)).collect();
            let l = cross_entropy_loss(&logits, &labels).unwrap();
            for (x, g) in logits.as_mut_slice().iter_mut().zip(l.logit_grads.as_slice()) {
                *x -= 1e-3 * g;
            }
            assert!(cross_entropy_loss(&logits, &labels).unwrap().value < l.value);
        }
    }

    #[test]
    fn total_loss_is_affine_in_lambda() {
        let ce = LogitBundle { value: 1.5, logit_grads: Matrix::from_vec(1, 2, vec![0.25, -0.25]).unwrap() };
        let hyb = LossBundle { value: 2.0, feature_grads: Matrix::from_vec(1, 2, vec![1.0, -3.0]).unwrap() };
        let t0 = total_loss(&ce, &hyb, 0.0);
        assert_eq!(t0.value, ce.value);
        assert_eq!(t0.logit_grads, ce.logit_grads);
        assert!(t0.feature_grads.as_slice().iter().all(|&g| g == 0.0));
        let t1 = total_loss(&ce, &hyb, 1.0);
        assert_eq!(t1.value, 3.5);
        assert_eq!(t1.feature_grads, hyb.feature_grads);
        let th = total_loss(&ce, &hyb, 0.5);
        assert_eq!(th.value, 0.5 * (t0.value + t1.value));
    }
}
