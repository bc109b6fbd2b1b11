use super::spec::LossKind;
use super::tensor::Tensor;
use super::{NnError, Real};

/// Row-wise softmax of (N, K, 1, 1) logits, max-shifted.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Vec<Vec<T>> {
    let k = logits.channels();
    logits
        .data
        .chunks(k)
        .map(|row| {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: T = e.iter().copied().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Mean loss over the batch and its gradient with respect to the logits.
///
/// `SoftmaxMse` averages the squared error over all N·K entries.
/// `SoftmaxCrossEntropy` averages −log pᵧ over the N rows.
pub fn loss_and_grad<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
    kind: LossKind,
) -> Result<(T, Tensor<T>), NnError> {
    let [n, k, h, w] = logits.shape();
    if (h, w) != (1, 1) || n != labels.len() {
        return Err(NnError::ShapeMismatch(format!(
            "logits {:?} for {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::ShapeMismatch(format!(
            "label {bad} outside {k} classes"
        )));
    }
    let probs = softmax(logits);
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = T::zero();
    match kind {
        LossKind::SoftmaxMse => {
            let scale = T::one() / T::of((n * k) as f64);
            let two = T::of(2.0);
            for (r, (p, &y)) in probs.iter().zip(labels).enumerate() {
                let dp: Vec<T> = (0..k)
                    .map(|j| {
                        let t = if j == y { T::one() } else { T::zero() };
                        loss += (p[j] - t) * (p[j] - t) * scale;
                        two * (p[j] - t) * scale
                    })
                    .collect();
                let dot: T = dp.iter().zip(p).map(|(&a, &b)| a * b).sum();
                for j in 0..k {
                    grad.data[r * k + j] = p[j] * (dp[j] - dot);
                }
            }
        }
        LossKind::SoftmaxCrossEntropy => {
            let scale = T::one() / T::of(n as f64);
            let tiny = T::of(1e-300_f64.max(f32::MIN_POSITIVE as f64));
            for (r, (p, &y)) in probs.iter().zip(labels).enumerate() {
                loss -= p[y].max(tiny).ln() * scale;
                for j in 0..k {
                    let t = if j == y { T::one() } else { T::zero() };
                    grad.data[r * k + j] = (p[j] - t) * scale;
                }
            }
        }
    }
    Ok((loss, grad))
}
