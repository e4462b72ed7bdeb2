//! Batch losses on flat `[n, k]` buffers. Each returns the mean loss and its
//! gradient with respect to the inputs.

use crate::{Error, Result};

/// Softmax cross-entropy. When `subset` is given only those columns take
/// part in the softmax and the gradient is zero elsewhere; labels are still
/// absolute column indices and must belong to the subset.
pub fn softmax_cross_entropy(
    logits: &[f64],
    n: usize,
    k: usize,
    labels: &[usize],
    subset: Option<&[usize]>,
) -> Result<(f64, Vec<f64>)> {
    if labels.len() != n || logits.len() != n * k {
        return Err(Error::Shape(format!(
            "{n} rows of {k} logits need {} values and {n} labels",
            n * k
        )));
    }
    let all: Vec<usize>;
    let cols: &[usize] = match subset {
        Some(s) => s,
        None => {
            all = (0..k).collect();
            &all
        }
    };
    if cols.is_empty() {
        return Err(Error::InvalidArgument("no classes to score".into()));
    }
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k || !cols.contains(&y) {
            return Err(Error::InvalidArgument(format!(
                "label {y} is outside the scored classes"
            )));
        }
        let row = &logits[i * k..(i + 1) * k];
        let max = cols
            .iter()
            .map(|&c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = cols.iter().map(|&c| (row[c] - max).exp()).sum();
        let log_z = max + denom.ln();
        loss += log_z - row[y];
        let g = &mut grad[i * k..(i + 1) * k];
        for &c in cols {
            g[c] = (row[c] - log_z).exp() / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// `(1/n) * sum_i ||pred_i - target_i||^2`.
pub fn mse_rows(pred: &[f64], target: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            loss += e * e;
            2.0 * e * scale
        })
        .collect();
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let (l, _) = softmax_cross_entropy(&[0.0; 8], 2, 4, &[1, 3], None).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn subset_ignores_other_columns() {
        let logits = [100.0, 0.0, 0.0];
        let (l, g) = softmax_cross_entropy(&logits, 1, 3, &[1], Some(&[1, 2])).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g[0], 0.0);
        assert!(softmax_cross_entropy(&logits, 1, 3, &[0], Some(&[1, 2])).is_err());
    }

    #[test]
    fn out_of_range_label() {
        assert!(softmax_cross_entropy(&[0.0; 3], 1, 3, &[3], None).is_err());
    }
}
