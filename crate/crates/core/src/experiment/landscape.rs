//! Loss values on a 2-D slice through input space around a point.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::inversion::{
    full_inversion_objective, layer_inversion_objective, InversionTarget, InversionWeights,
};
use crate::netcore::{dot, norm, Network, Tensor};
use crate::seed::rng_from;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeSlice {
    /// Grid offsets, shared by both axes.
    pub offsets: Vec<f64>,
    /// `loss[i * n + j]` at `x + offsets[i] d1 + offsets[j] d2`.
    pub loss: Vec<f64>,
}

impl LandscapeSlice {
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .loss
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        hi - lo
    }

    pub fn to_csv(&self) -> String {
        let n = self.offsets.len();
        let mut out = String::from("s,t,loss\n");
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!(
                    "{:.9e},{:.9e},{:.9e}\n",
                    self.offsets[i],
                    self.offsets[j],
                    self.loss[i * n + j]
                ));
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Two orthonormal random directions with `len` entries each.
pub fn random_directions(len: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if len < 2 {
        return Err(Error::InvalidArgument(
            "a slice needs at least two coordinates".into(),
        ));
    }
    let mut rng = rng_from(seed);
    let mut draw = || -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let mut d1 = draw();
    let n1 = norm(&d1);
    d1.iter_mut().for_each(|v| *v /= n1);
    loop {
        let mut d2 = draw();
        let p = dot(&d1, &d2);
        d2.iter_mut().zip(&d1).for_each(|(v, u)| *v -= p * u);
        let n2 = norm(&d2);
        if n2 > 1e-9 {
            d2.iter_mut().for_each(|v| *v /= n2);
            return Ok((d1, d2));
        }
    }
}

/// Evaluates `loss` on an `n x n` grid over `[-radius, radius]^2` spanned
/// by two random orthonormal directions through `center`.
pub fn loss_landscape_slice<F>(
    center: &Tensor,
    n: usize,
    radius: f64,
    seed: u64,
    mut loss: F,
) -> Result<LandscapeSlice>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if n < 2 {
        return Err(Error::InvalidArgument(format!("grid needs n ≥ 2, got {n}")));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument("radius must be nonnegative".into()));
    }
    let (d1, d2) = random_directions(center.len(), seed)?;
    let offsets: Vec<f64> = (0..n)
        .map(|i| {
            // exact zero at the middle of odd grids
            if 2 * i + 1 == n {
                0.0
            } else {
                -radius + 2.0 * radius * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let mut values = Vec::with_capacity(n * n);
    for &s in &offsets {
        for &t in &offsets {
            let mut x = center.clone();
            for ((v, a), b) in x.data_mut().iter_mut().zip(&d1).zip(&d2) {
                *v += s * a + t * b;
            }
            values.push(loss(&x)?);
        }
    }
    Ok(LandscapeSlice {
        offsets,
        loss: values,
    })
}

/// Slice of the full-model inversion objective.
pub fn full_slice(
    net: &Network,
    center: &Tensor,
    target: &InversionTarget,
    weights: &InversionWeights,
    n: usize,
    radius: f64,
    seed: u64,
) -> Result<LandscapeSlice> {
    loss_landscape_slice(center, n, radius, seed, |x| {
        Ok(full_inversion_objective(net, x, target, weights)?.0.total)
    })
}

/// Slice of the first unit's inversion objective against `target`, the
/// desired output of that unit.
#[allow(clippy::too_many_arguments)]
pub fn first_layer_slice(
    net: &Network,
    center: &Tensor,
    target: &Tensor,
    alpha: f64,
    beta: f64,
    n: usize,
    radius: f64,
    seed: u64,
) -> Result<LandscapeSlice> {
    let layer = &net.backbone.layers[0];
    let stats = net.require_stats(0)?;
    let flat = center.flatten_rows();
    loss_landscape_slice(&flat, n, radius, seed, |x| {
        Ok(
            layer_inversion_objective(layer, x, target, stats, alpha, beta)?
                .0
                .total,
        )
    })
}
