use rand::Rng;
use rand_distr::StandardNormal;

use crate::netcore::{column_moments, LayerStats, Tensor, STD_FLOOR};
use crate::{Error, Result};

/// Diagonal Gaussian over the features of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGaussian {
    pub class_id: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

/// Population mean and floored std of the rows of `features`.
pub fn fit_class_gaussian(class_id: usize, features: &Tensor) -> Result<ClassGaussian> {
    let (n, d) = (features.rows(), features.row_len());
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    let (mean, var) = column_moments(features.data(), n, d);
    let std = var.iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
    Ok(ClassGaussian {
        class_id,
        mean,
        std,
        count: n,
    })
}

impl ClassGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let mut data = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            for (m, s) in self.mean.iter().zip(&self.std) {
                let z: f64 = rng.sample(StandardNormal);
                data.push(m + s * z);
            }
        }
        Tensor::from_raw(vec![n, self.dim()], data)
    }

    pub fn to_stats(&self) -> LayerStats {
        let var = self.std.iter().map(|s| s * s).collect();
        LayerStats::from_raw(self.mean.clone(), var, self.count)
    }
}
