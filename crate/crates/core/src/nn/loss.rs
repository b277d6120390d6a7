use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / n`. Logits are `(n, classes, ·, ·)` flattened per item.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let s = logits.shape();
    let classes = s.item();
    if labels.len() != s.n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    let mut dlogits = Tensor4::zeros(s)?;
    let mut total = 0.0;
    let inv_n = 1.0 / s.n as f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = logits.item(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        total += log_denom - (row[label] - max);
        let grad = dlogits.item_mut(i);
        for (g, v) in grad.iter_mut().zip(row) {
            *g = (v - max).exp() / denom * inv_n;
        }
        grad[label] -= inv_n;
    }
    Ok((total * inv_n, dlogits))
}
