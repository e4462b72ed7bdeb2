//! Greedy contrastive feature selection and feature-set export.

use std::io::Write;

use super::contrastive::{mapped_contrastive_loss, ContrastiveModel};
use super::gaussian::ClassGaussian;
use crate::netcore::Tensor;
use crate::seed::rng_from;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Sampled,
    Selected,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Sampled => "sampled",
            Provenance::Selected => "selected",
        }
    }
}

/// Ordered features of one class with how each entered the set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub class_id: usize,
    pub features: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.features)
    }

    pub fn truncate(&mut self, len: usize) {
        self.features.truncate(len);
        self.provenance.truncate(len);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CfsConfig {
    /// Initial set size; `None` uses the per-step keep count.
    pub init_size: Option<usize>,
    pub steps: usize,
    pub candidates: usize,
    pub keep_ratio: f64,
    pub temperature: f64,
}

impl Default for CfsConfig {
    fn default() -> Self {
        Self {
            init_size: None,
            steps: 8,
            candidates: 8,
            keep_ratio: 0.5,
            temperature: 1.0,
        }
    }
}

/// Number of candidates admitted per step, `ceil(r * m)`.
pub fn keep_count(candidates: usize, keep_ratio: f64) -> usize {
    let raw = keep_ratio * candidates as f64;
    // guard against 0.5 * 8 landing a hair above 4
    ((raw - 1e-9).ceil() as usize).clamp(1, candidates)
}

impl CfsConfig {
    pub fn keep(&self) -> usize {
        keep_count(self.candidates, self.keep_ratio)
    }

    pub fn initial(&self) -> usize {
        self.init_size.unwrap_or_else(|| self.keep())
    }

    pub fn final_size(&self) -> usize {
        self.initial() + self.steps * self.keep()
    }

    fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.init_size == Some(0) {
            return Err(Error::InvalidArgument("CFS needs k0 ≥ 1 and m ≥ 1".into()));
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep ratio must lie in (0, 1], got {}",
                self.keep_ratio
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Greedy selection: start from `k0` Gaussian samples, then repeatedly draw
/// `m` candidates and admit the `ceil(r * m)` whose contrastive loss
/// against the current set is lowest (ties by candidate index).
pub fn cfs_select(
    gauss: &ClassGaussian,
    model: &ContrastiveModel,
    cfg: &CfsConfig,
    seed: u64,
) -> Result<FeatureSet> {
    cfg.validate()?;
    if model.in_dim() != gauss.dim() {
        return Err(Error::Shape(format!(
            "contrastive model expects width {}, class features have {}",
            model.in_dim(),
            gauss.dim()
        )));
    }
    let mut rng = rng_from(seed);
    let init = gauss.sample(cfg.initial(), &mut rng);
    let mut mapped: Vec<Vec<f64>> = model.map(&init)?.iter_rows().map(<[f64]>::to_vec).collect();
    let mut set = FeatureSet {
        class_id: gauss.class_id,
        features: init.iter_rows().map(<[f64]>::to_vec).collect(),
        provenance: vec![Provenance::Sampled; init.rows()],
    };
    let keep = cfg.keep();
    for _ in 0..cfg.steps {
        let cand = gauss.sample(cfg.candidates, &mut rng);
        let zc = model.map(&cand)?;
        let negs: Vec<&[f64]> = mapped.iter().map(Vec::as_slice).collect();
        let mut scored = Vec::with_capacity(cfg.candidates);
        for i in 0..cfg.candidates {
            scored.push((
                mapped_contrastive_loss(zc.row(i), &negs, cfg.temperature)?,
                i,
            ));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in scored.iter().take(keep) {
            set.features.push(cand.row(i).to_vec());
            set.provenance.push(Provenance::Selected);
            mapped.push(zc.row(i).to_vec());
        }
    }
    Ok(set)
}

/// Writes feature sets as CSV: `class_id,provenance,f0,f1,...`.
pub fn write_feature_csv<W: Write>(mut out: W, sets: &[FeatureSet]) -> Result<()> {
    let dim = sets
        .iter()
        .find_map(|s| s.features.first().map(Vec::len))
        .unwrap_or(0);
    let mut header = String::from("class_id,provenance");
    for k in 0..dim {
        header.push_str(&format!(",f{k}"));
    }
    writeln!(out, "{header}")?;
    for set in sets {
        for (f, p) in set.features.iter().zip(&set.provenance) {
            if f.len() != dim {
                return Err(Error::Shape("feature sets have mixed widths".into()));
            }
            let mut line = format!("{},{}", set.class_id, p.name());
            for v in f {
                line.push_str(&format!(",{v:.9e}"));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
