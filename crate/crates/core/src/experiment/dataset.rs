use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::clharness::LabeledSet;
use crate::netcore::{norm, Tensor};
use crate::seed::rng_from;
use crate::{Error, Result};

/// Gaussian blobs around unit-norm centroids, split 80/20 per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub classes: usize,
    pub train: LabeledSet,
    pub test: LabeledSet,
    /// Unit generating centroid of each class; doubles as its anchor.
    pub centroids: Vec<Vec<f64>>,
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Number of training samples out of `n` per class.
pub fn train_count(n: usize) -> usize {
    ((n as f64 * 0.8).round() as usize).clamp(1, n - 1)
}

pub fn gen_toy_dataset(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<ToyDataset> {
    if classes < 2 || dim < 2 || per_class < 4 {
        return Err(Error::InvalidArgument(format!(
            "toy data needs ≥ 2 classes, dim ≥ 2 and ≥ 4 samples per class (got {classes}, {dim}, {per_class})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread must be finite and nonnegative, got {spread}"
        )));
    }
    let mut rng = rng_from(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centroids.len() < classes {
        let v = gaussian_vec(dim, &mut rng);
        let n = norm(&v);
        if n < 1e-9 {
            continue;
        }
        let u: Vec<f64> = v.iter().map(|x| x / n).collect();
        if centroids.iter().any(|c| {
            c.iter()
                .zip(&u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                < 1e-9
        }) {
            continue;
        }
        centroids.push(u);
    }
    let n_train = train_count(per_class);
    let (mut tr, mut ytr, mut te, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (c, centroid) in centroids.iter().enumerate() {
        for i in 0..per_class {
            let noise = gaussian_vec(dim, &mut rng);
            let x = centroid.iter().zip(&noise).map(|(m, z)| m + spread * z);
            if i < n_train {
                tr.extend(x);
                ytr.push(c);
            } else {
                te.extend(x);
                yte.push(c);
            }
        }
    }
    Ok(ToyDataset {
        classes,
        train: LabeledSet::new(Tensor::new(vec![ytr.len(), dim], tr)?, ytr)?,
        test: LabeledSet::new(Tensor::new(vec![yte.len(), dim], te)?, yte)?,
        centroids,
    })
}

impl ToyDataset {
    /// CSV rows `split,class_id,x0,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.train.dim();
        let mut header = String::from("split,class_id");
        for k in 0..d {
            header.push_str(&format!(",x{k}"));
        }
        writeln!(out, "{header}")?;
        for (name, set) in [("train", &self.train), ("test", &self.test)] {
            for (row, y) in set.features.iter_rows().zip(&set.labels) {
                let mut line = format!("{name},{y}");
                for v in row {
                    line.push_str(&format!(",{v:.9e}"));
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}
