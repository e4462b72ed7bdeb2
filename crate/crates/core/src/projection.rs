//! Rotations carrying one class anchor onto another, and pseudo features
//! for a new class built from an old class's features.

use crate::netcore::{dot, norm, Tensor};
use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-6;
const ANTIPODAL_TOL: f64 = 1e-6;

/// Default blend weight toward the target anchor.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct RotationMap {
    pub matrix: Tensor,
    pub source: usize,
    pub target: usize,
    pub alpha: f64,
}

fn check_unit(v: &[f64], name: &str) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument(format!(
            "{name} must be unit norm, got {n}"
        )));
    }
    Ok(())
}

/// Minimal rotation `R` with `R u = v`, acting as the identity on the
/// orthogonal complement of `span{u, v}`.
pub fn rotation_between(u: &[f64], v: &[f64]) -> Result<Tensor> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    check_unit(u, "u")?;
    check_unit(v, "v")?;
    let d = u.len();
    let c = dot(u, v).clamp(-1.0, 1.0);
    let mut e2: Vec<f64> = v.iter().zip(u).map(|(vi, ui)| vi - c * ui).collect();
    let s = norm(&e2);
    let theta = s.atan2(c);
    if std::f64::consts::PI - theta < ANTIPODAL_TOL {
        return Err(Error::AmbiguousRotation);
    }
    let mut r = vec![0.0; d * d];
    for i in 0..d {
        r[i * d + i] = 1.0;
    }
    if s == 0.0 {
        return Ok(Tensor::from_raw(vec![d, d], r));
    }
    e2.iter_mut().for_each(|x| *x /= s);
    let (sin, cos) = (s, c);
    for i in 0..d {
        for j in 0..d {
            r[i * d + j] +=
                sin * (e2[i] * u[j] - u[i] * e2[j]) + (cos - 1.0) * (u[i] * u[j] + e2[i] * e2[j]);
        }
    }
    Ok(Tensor::from_raw(vec![d, d], r))
}

impl RotationMap {
    pub fn between(source: usize, u: &[f64], target: usize, v: &[f64], alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self {
            matrix: rotation_between(u, v)?,
            source,
            target,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "rotation of width {} got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.matrix.iter_rows().map(|row| dot(row, x)).collect())
    }
}

/// `normalize((1 - alpha) R o + alpha anchor)`.
pub fn pseudo_feature(
    rot: &Tensor,
    feature: &[f64],
    anchor: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    let d = rot.rows();
    if rot.row_len() != d || feature.len() != d || anchor.len() != d {
        return Err(Error::Shape(format!(
            "rotation {:?}, feature {}, anchor {}",
            rot.shape(),
            feature.len(),
            anchor.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let blend: Vec<f64> = rot
        .iter_rows()
        .zip(anchor)
        .map(|(row, a)| (1.0 - alpha) * dot(row, feature) + alpha * a)
        .collect();
    let n = norm(&blend);
    if n < 1e-12 {
        return Err(Error::DegenerateBlend);
    }
    Ok(blend.into_iter().map(|x| x / n).collect())
}

impl RotationMap {
    pub fn pseudo_feature(&self, feature: &[f64], anchor: &[f64]) -> Result<Vec<f64>> {
        pseudo_feature(&self.matrix, feature, anchor, self.alpha)
    }
}

/// Indices of the `k` anchors most cosine-similar to `anchors[target]`,
/// excluding the target itself, most similar first.
pub fn most_similar(
    anchors: &[Vec<f64>],
    target: usize,
    candidates: &[usize],
    k: usize,
) -> Vec<usize> {
    let t = &anchors[target];
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != target)
        .map(|&c| {
            (
                dot(&anchors[c], t) / (norm(&anchors[c]) * norm(t)).max(1e-12),
                c,
            )
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, c)| c).collect()
}
