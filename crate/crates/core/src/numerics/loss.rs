use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.dim(0) != labels.len() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits [{}, C]", labels.len()),
            format!("{:?}", logits.shape()),
        ));
    }
    let (batch, classes) = (logits.dim(0), logits.dim(1));
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let inv_batch = T::one() / T::lit(batch as f64);
    let mut grad = Tensor::zeros(vec![batch, classes]);
    let mut total = T::zero();
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(classes)
        .zip(grad.data_mut().chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp();
            denom += *gi;
        }
        total += denom.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_batch;
        }
        g[label] -= inv_batch;
    }
    Ok((total * inv_batch, grad))
}

/// Index of the largest logit in every row.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.dim(logits.rank() - 1);
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, _) = softmax_cross_entropy(&Tensor::<f64>::zeros(vec![1, 4]), &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let logits = Tensor::<f64>::new(vec![1, 2], vec![10.0, -10.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-4);
    }

    #[test]
    fn scalar_evaluation() {
        let logits = Tensor::<f64>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        // -log(e^1 / (e^1 + e^2)) = ln(1 + e)
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);
        // -log(e^2 / (e^1 + e^2)) = ln(1 + e) - 1
        let (loss1, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!((loss1 - ((1.0 + 1f64.exp()).ln() - 1.0)).abs() < 1e-12);
        // softmax minus one-hot
        let p0 = 1.0 / (1.0 + 1f64.exp());
        assert!((grad.data()[0] - (p0 - 1.0)).abs() < 1e-12);
        assert!((grad.data()[1] - (1.0 - p0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_label_out_of_range() {
        let err = softmax_cross_entropy(&Tensor::<f64>::zeros(vec![1, 3]), &[3]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, classes: 3 }));
    }

    #[test]
    fn gradient_divides_by_batch() {
        let logits = Tensor::<f64>::zeros(vec![2, 2]);
        let (_, grad) = softmax_cross_entropy(&logits, &[0, 1]).unwrap();
        assert_eq!(grad.data(), &[-0.25, 0.25, 0.25, -0.25]);
    }
}
