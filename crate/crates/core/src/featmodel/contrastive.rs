//! Two-layer mapping trained with the negative contrastive loss.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::netcore::{dot, norm, Activation, Dense, Layer, OptimizerState, Tensor};
use crate::seed::rng_from;
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveModel {
    pub first: Layer,
    pub second: Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub hidden: usize,
    /// Output width; `None` uses `hidden`.
    pub output: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub temperature: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            output: None,
            epochs: 30,
            lr: 0.01,
            batch_size: 32,
            temperature: 1.0,
        }
    }
}

impl ContrastiveModel {
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            first: Layer::dense(Dense::random(in_dim, hidden, rng), Activation::LeakyRelu),
            second: Layer::dense(Dense::random(hidden, output, rng), Activation::None),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.first.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim()
    }

    pub fn map(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.first.forward(features)?;
        self.second.forward(&h)
    }

    fn dense_params_mut(&mut self) -> [&mut Dense; 2] {
        [
            self.first.as_dense_mut().expect("dense"),
            self.second.as_dense_mut().expect("dense"),
        ]
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a).max(NORM_EPS) * norm(b).max(NORM_EPS))
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| (x - mx).exp()).sum();
    mx + (s / v.len() as f64).ln()
}

/// `log mean_j exp(cos(z, z_j) / tau)` on already mapped vectors.
pub fn mapped_contrastive_loss(z: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::InvalidArgument("negative set is empty".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let sims: Vec<f64> = negatives.iter().map(|n| cosine(z, n) / tau).collect();
    Ok(log_mean_exp(&sims))
}

/// Contrastive loss of row `i` of `features` against the rows in `negatives`.
pub fn contrastive_loss(
    model: &ContrastiveModel,
    features: &Tensor,
    i: usize,
    negatives: &[usize],
    tau: f64,
) -> Result<f64> {
    let n = features.rows();
    if i >= n || negatives.iter().any(|&j| j >= n) {
        return Err(Error::InvalidArgument(format!(
            "feature index out of range for {n} rows"
        )));
    }
    if negatives.contains(&i) {
        return Err(Error::InvalidArgument(format!(
            "negative set contains the anchor index {i}"
        )));
    }
    let z = model.map(features)?;
    let negs: Vec<&[f64]> = negatives.iter().map(|&j| z.row(j)).collect();
    mapped_contrastive_loss(z.row(i), &negs, tau)
}

/// Mean over rows of the loss where each row's negatives are all other rows.
/// Returns the loss and its gradient with respect to the mapped rows.
fn batch_loss_grad(z: &[f64], n: usize, d: usize, tau: f64) -> (f64, Vec<f64>) {
    let rows: Vec<&[f64]> = z.chunks(d).collect();
    let norms: Vec<f64> = rows.iter().map(|r| norm(r).max(NORM_EPS)).collect();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sim[i * n + j] = dot(rows[i], rows[j]) / (norms[i] * norms[j]);
            }
        }
    }
    let mut loss = 0.0;
    // coefficient on d loss / d sim_ij
    let mut coef = vec![0.0; n * n];
    for i in 0..n {
        let s: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| sim[i * n + j] / tau)
            .collect();
        let lme = log_mean_exp(&s);
        loss += lme;
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tot: f64 = s.iter().map(|x| (x - mx).exp()).sum();
        for j in (0..n).filter(|&j| j != i) {
            let w = ((sim[i * n + j] / tau) - mx).exp() / tot;
            coef[i * n + j] += w / (tau * n as f64);
        }
    }
    loss /= n as f64;
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            let c = coef[i * n + j];
            if c == 0.0 {
                continue;
            }
            let s = sim[i * n + j];
            // d cos(a,b)/da = (b/|b| - cos a/|a|) / |a|
            for k in 0..d {
                let (a, b) = (rows[i][k], rows[j][k]);
                grad[i * d + k] += c * (b / norms[j] - s * a / norms[i]) / norms[i];
                grad[j * d + k] += c * (a / norms[i] - s * b / norms[j]) / norms[j];
            }
        }
    }
    (loss, grad)
}

/// Mean contrastive loss over all rows, each against every other row.
pub fn mean_set_loss(model: &ContrastiveModel, features: &Tensor, tau: f64) -> Result<f64> {
    if features.rows() < 2 {
        return Err(Error::BatchTooSmall {
            got: features.rows(),
            need: 2,
        });
    }
    let z = model.map(features)?;
    Ok(batch_loss_grad(z.data(), z.rows(), z.row_len(), tau).0)
}

/// Mean cosine similarity over distinct pairs of mapped rows.
pub fn mean_pairwise_cosine(model: &ContrastiveModel, features: &Tensor) -> Result<f64> {
    let z = model.map(features)?;
    let n = z.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            acc += cosine(z.row(i), z.row(j));
        }
    }
    Ok(acc / (n * (n - 1) / 2) as f64)
}

/// Trains a fresh model on `features` with within-minibatch negatives.
///
/// Returns the model with the lowest full-set loss seen (the initial one
/// included) and the full-set loss after each epoch, starting with the
/// initial loss.
pub fn train_contrastive(
    features: &Tensor,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<(ContrastiveModel, Vec<f64>)> {
    let n = features.rows();
    if n < 8 {
        return Err(Error::BatchTooSmall { got: n, need: 8 });
    }
    if cfg.batch_size < 2 || cfg.hidden == 0 || cfg.output == Some(0) {
        return Err(Error::InvalidArgument(
            "contrastive batch size must be ≥ 2 and widths positive".into(),
        ));
    }
    let tau = cfg.temperature;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let mut rng = rng_from(seed);
    let d = features.row_len();
    let mut model =
        ContrastiveModel::random(d, cfg.hidden, cfg.output.unwrap_or(cfg.hidden), &mut rng);
    let mut history = vec![mean_set_loss(&model, features, tau)?];
    let mut best = (model.clone(), history[0]);
    let mut states: Vec<OptimizerState> = (0..4).map(|_| OptimizerState::adam(cfg.lr)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let x = features.select_rows(chunk);
            let b = chunk.len();
            let (z1, h) = model.first.forward_raw(x.data(), b);
            let (z2, out) = model.second.forward_raw(&h, b);
            let (_, g_out) = batch_loss_grad(&out, b, model.out_dim(), tau);
            let (g_h, p2) = model.second.backward_raw(&h, &z2, &g_out, b, true);
            let (_, p1) = model.first.backward_raw(x.data(), &z1, &g_h, b, true);
            let grads = [p1.expect("dense"), p2.expect("dense")];
            let [l1, l2] = model.dense_params_mut();
            for (k, (layer, g)) in [l1, l2].into_iter().zip(&grads).enumerate() {
                states[2 * k].step(layer.weight.data_mut(), g.weight.data())?;
                states[2 * k + 1].step(layer.bias.data_mut(), g.bias.data())?;
            }
        }
        let loss = mean_set_loss(&model, features, tau)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("contrastive training loss".into()));
        }
        history.push(loss);
        if loss < best.1 {
            best = (model.clone(), loss);
        }
    }
    Ok((best.0, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradient_matches_differences() {
        let mut rng = rng_from(3);
        let (n, d) = (5, 4);
        let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = batch_loss_grad(&z, n, d, 0.7);
        for k in 0..z.len() {
            let mut p = z.clone();
            p[k] += 1e-6;
            let mut m = z.clone();
            m[k] -= 1e-6;
            let fd = (batch_loss_grad(&p, n, d, 0.7).0 - batch_loss_grad(&m, n, d, 0.7).0) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn set_loss_matches_per_row_definition() {
        let mut rng = rng_from(4);
        let model = ContrastiveModel::random(3, 6, 6, &mut rng);
        let x = Tensor::from_raw(
            vec![4, 3],
            (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let mean: f64 = (0..4)
            .map(|i| {
                let neg: Vec<usize> = (0..4).filter(|&j| j != i).collect();
                contrastive_loss(&model, &x, i, &neg, 1.0).unwrap()
            })
            .sum::<f64>()
            / 4.0;
        assert!((mean - mean_set_loss(&model, &x, 1.0).unwrap()).abs() < 1e-12);
    }
}
