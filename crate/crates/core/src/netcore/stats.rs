use crate::{Error, Result};

/// Lower bound applied to every reported standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension mean and spread of one layer's inputs.
///
/// Variance is kept unfloored (population estimator) so that merging is
/// exact; `std()` applies the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

/// Population mean and variance of the columns of an `[n, d]` buffer.
pub fn column_moments(data: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for row in data.chunks(d).take(n) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for row in data.chunks(d).take(n) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let c = v - m;
            *s += c * c;
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    (mean, var)
}

impl LayerStats {
    pub fn empty(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![0.0; dim],
            count: 0,
        }
    }

    /// Stats of a flat `[n, d]` batch; `n` must be at least 2.
    pub fn from_batch(data: &[f64], n: usize, d: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::BatchTooSmall { got: n, need: 2 });
        }
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "expected {n}x{d} values, got {}",
                data.len()
            )));
        }
        let (mean, var) = column_moments(data, n, d);
        Ok(Self {
            mean,
            var,
            count: n,
        })
    }

    /// Builds stats from a stored mean/std pair (std is squared back to a variance).
    pub fn from_mean_std(mean: Vec<f64>, std: Vec<f64>, count: usize) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape("mean and std lengths differ".into()));
        }
        if std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Domain("std must be finite and nonnegative".into()));
        }
        Ok(Self {
            mean,
            var: std.iter().map(|s| s * s).collect(),
            count,
        })
    }

    pub(crate) fn from_raw(mean: Vec<f64>, var: Vec<f64>, count: usize) -> Self {
        Self { mean, var, count }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt().max(STD_FLOOR)).collect()
    }

    /// Exact count-weighted pooling of two sets of moments.
    pub fn merge(&mut self, other: &LayerStats) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "cannot merge stats of width {} into width {}",
                other.dim(),
                self.dim()
            )));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (n1, n2) = (self.count as f64, other.count as f64);
        let n = n1 + n2;
        for d in 0..self.dim() {
            let delta = other.mean[d] - self.mean[d];
            let m2 = n1 * self.var[d] + n2 * other.var[d] + delta * delta * n1 * n2 / n;
            self.mean[d] += delta * n2 / n;
            self.var[d] = m2 / n;
        }
        self.count += other.count;
        Ok(())
    }
}
