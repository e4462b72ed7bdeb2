//! Distillation and fine-tuning terms. Each returns the value and the
//! gradient with respect to its first (trainable) argument.

use crate::netcore::{
    dot, norm, softmax_cross_entropy, ClassificationHead, HeadGrad, HeadMode, Tensor,
};
use crate::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean absolute difference between student and teacher old-class logits.
pub fn hkd_loss(student: &Tensor, teacher: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(student, teacher, "hkd logits")?;
    let n = student.len();
    if n == 0 {
        return Ok((0.0, student.clone()));
    }
    let mut loss = 0.0;
    let grad = student
        .data()
        .iter()
        .zip(teacher.data())
        .map(|(s, t)| {
            loss += (s - t).abs();
            let sign = if s > t {
                1.0
            } else if s < t {
                -1.0
            } else {
                0.0
            };
            sign / n as f64
        })
        .collect();
    Ok((
        loss / n as f64,
        Tensor::from_raw(student.shape().to_vec(), grad),
    ))
}

fn pair_cosines(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows();
    let norms: Vec<f64> = x.iter_rows().map(|r| norm(r).max(1e-12)).collect();
    let mut cos = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            cos[i * n + j] = dot(x.row(i), x.row(j)) / (norms[i] * norms[j]);
        }
    }
    (cos, norms)
}

/// Mean squared difference of all pairwise cosine similarities.
pub fn rkd_loss(student: &Tensor, teacher: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(student, teacher, "rkd features")?;
    let (n, d) = (student.rows(), student.row_len());
    let mut grad = vec![0.0; student.len()];
    if n < 2 {
        return Ok((0.0, Tensor::from_raw(student.shape().to_vec(), grad)));
    }
    let (cs, ns) = pair_cosines(student);
    let (ct, _) = pair_cosines(teacher);
    let pairs = (n * (n - 1) / 2) as f64;
    let mut loss = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let diff = cs[i * n + j] - ct[i * n + j];
            loss += diff * diff;
            let c = 2.0 * diff / pairs;
            let (a, b) = (student.row(i), student.row(j));
            let s = cs[i * n + j];
            for k in 0..d {
                grad[i * d + k] += c * (b[k] / (ns[i] * ns[j]) - s * a[k] / (ns[i] * ns[i]));
                grad[j * d + k] += c * (a[k] / (ns[i] * ns[j]) - s * b[k] / (ns[j] * ns[j]));
            }
        }
    }
    Ok((
        loss / pairs,
        Tensor::from_raw(student.shape().to_vec(), grad),
    ))
}

/// Cross-entropy over every column of `logits`.
pub fn ft_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.rows(), logits.row_len());
    let (v, g) = softmax_cross_entropy(logits.data(), n, k, labels, None)?;
    Ok((v, Tensor::from_raw(logits.shape().to_vec(), g)))
}

/// Mean L1 distance between corresponding anchor rows; the gradient is
/// with respect to `current`.
pub fn tkd_loss(old: &Tensor, current: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(current, old, "tkd anchors")?;
    hkd_loss(current, old)
}

/// Cross-entropy of the anchor head's cosine logits; the gradient is
/// returned for the anchors only.
pub fn tft_loss(
    head: &ClassificationHead,
    features: &Tensor,
    labels: &[usize],
) -> Result<(f64, HeadGrad)> {
    if head.mode() != HeadMode::Anchor {
        return Err(Error::UnsupportedMode {
            mode: head.mode().name(),
            what: "anchor fine-tuning loss",
        });
    }
    if features.row_len() != head.dim() {
        return Err(Error::Shape(format!(
            "features of width {} for a head of width {}",
            features.row_len(),
            head.dim()
        )));
    }
    let n = features.rows();
    let logits = head.logits_raw(features.data(), n);
    let (v, g) = softmax_cross_entropy(&logits, n, head.classes(), labels, None)?;
    let (_, hg) = head.backward_raw(features.data(), &g, n);
    Ok((v, hg))
}
