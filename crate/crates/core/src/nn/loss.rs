//! Softmax and cross-entropy.

use crate::{Error, Result, Tensor};

/// Row-wise softmax of a `(B, C)` logit matrix, computed in f64.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        row.iter_mut().zip(&exps).for_each(|(v, e)| *v = (e / z) as f32);
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / B`.
pub fn cross_entropy(logits: &Tensor, labels: &[u16]) -> Result<(f64, Tensor)> {
    if logits.ndim() != 2 || logits.dim(0) != labels.len() {
        return Err(Error::Shape(format!(
            "cross entropy: logits {:?} with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (b, c) = (logits.dim(0), logits.dim(1));
    if b == 0 {
        return Err(Error::Shape("cross entropy on an empty batch".into()));
    }
    let mut grad = Tensor::zeros(&[b, c]);
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= c {
            return Err(Error::Shape(format!("label {y} out of range for {c} classes")));
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + m - row[y] as f64;
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        for (j, e) in exps.iter().enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            g[j] = ((e / z - onehot) / b as f64) as f32;
        }
    }
    Ok((total / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::zeros(&[2, 4]);
        let (l, g) = cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((g.data()[0] - (0.25 - 1.0) / 2.0).abs() < 1e-7);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        for row in softmax_rows(&t).data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_label_is_rejected() {
        assert!(cross_entropy(&Tensor::zeros(&[1, 2]), &[2]).is_err());
    }
}
