use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / N`. Uses max subtraction, so saturated logits do
/// not overflow.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let [n, classes] = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::dim("softmax_cross_entropy", logits.shape(), &[labels.len()]));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Label {
            index,
            label,
            classes,
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * classes);
    let inv_n = 1.0 / n as f64;
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[label].as_f64() - max);
        for (j, e) in exps.iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push(T::of((e / z - onehot) * inv_n));
        }
    }
    Ok((loss * inv_n, Tensor::from_vec(&[n, classes], grad)?))
}
