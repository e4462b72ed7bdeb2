use crate::netcore::{column_moments, LayerStats, STD_FLOOR};
use crate::{Error, Result};

/// Closed-form KL(N(mu1, std1) || N(mu2, std2)) summed over independent dimensions.
pub fn gaussian_kl(mu1: &[f64], std1: &[f64], mu2: &[f64], std2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if std1.len() != d || mu2.len() != d || std2.len() != d {
        return Err(Error::Shape(
            "gaussian_kl needs four vectors of equal length".into(),
        ));
    }
    if std1.iter().chain(std2).any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("standard deviations must be positive".into()));
    }
    Ok((0..d)
        .map(|i| kl_term(mu1[i], std1[i], mu2[i], std2[i]))
        .sum())
}

#[inline]
fn kl_term(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let gap = m1 - m2;
    (s2 / s1).ln() + (s1 * s1 + gap * gap) / (2.0 * s2 * s2) - 0.5
}

/// KL between the diagonal Gaussian fitted to a `[n, d]` batch (population
/// std, floored) and the stored stats, with its gradient w.r.t. the batch.
pub fn batch_prior_kl(
    data: &[f64],
    n: usize,
    d: usize,
    stats: &LayerStats,
) -> Result<(f64, Vec<f64>)> {
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    if stats.dim() != d || data.len() != n * d {
        return Err(Error::Shape(format!(
            "batch width {d} does not match stats width {}",
            stats.dim()
        )));
    }
    let (m1, v1) = column_moments(data, n, d);
    let s2 = stats.std();
    let m2 = stats.mean();
    let mut kl = 0.0;
    let mut dm = vec![0.0; d];
    let mut ds = vec![0.0; d];
    let mut s1 = vec![0.0; d];
    for k in 0..d {
        let raw = v1[k].sqrt();
        let s = raw.max(STD_FLOOR);
        s1[k] = s;
        kl += kl_term(m1[k], s, m2[k], s2[k]);
        dm[k] = (m1[k] - m2[k]) / (s2[k] * s2[k]);
        // Below the floor the std is constant.
        ds[k] = if raw > STD_FLOOR {
            -1.0 / s + s / (s2[k] * s2[k])
        } else {
            0.0
        };
    }
    let nf = n as f64;
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..d {
            let c = data[i * d + k] - m1[k];
            grad[i * d + k] = dm[k] / nf + ds[k] * c / (nf * s1[k]);
        }
    }
    Ok((kl, grad))
}
