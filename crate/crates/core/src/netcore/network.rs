use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layer::{Backbone, DenseGrad, ForwardCache};
use super::loss::{mse_rows, softmax_cross_entropy};
use super::stats::LayerStats;
use super::tensor::{dot, matmul_nn, matmul_nt, matmul_tn, norm, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// Affine map over all seen classes.
    Linear,
    /// Scaled cosine similarity against one unit anchor per class.
    Anchor,
}

impl HeadMode {
    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Linear => "linear",
            HeadMode::Anchor => "anchor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HeadMode::Linear),
            "anchor" => Ok(HeadMode::Anchor),
            other => Err(Error::InvalidArgument(format!(
                "unknown head mode `{other}`"
            ))),
        }
    }
}

/// Classification head over backbone features. In anchor mode `weight`
/// holds the unit anchors and `bias` is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationHead {
    mode: HeadMode,
    dim: usize,
    classes: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros(head: &ClassificationHead) -> Self {
        Self {
            weight: vec![0.0; head.weight.len()],
            bias: vec![0.0; head.bias.len()],
        }
    }
}

impl ClassificationHead {
    pub fn linear(dim: usize) -> Self {
        Self {
            mode: HeadMode::Linear,
            dim,
            classes: 0,
            weight: Vec::new(),
            bias: Vec::new(),
            scale: 1.0,
        }
    }

    pub fn anchor(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(
                "anchor logit scale must be positive".into(),
            ));
        }
        Ok(Self {
            mode: HeadMode::Anchor,
            dim,
            classes: 0,
            weight: Vec::new(),
            bias: Vec::new(),
            scale,
        })
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        (&mut self.weight, &mut self.bias)
    }

    pub(crate) fn from_parts(
        mode: HeadMode,
        dim: usize,
        classes: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        scale: f64,
    ) -> Result<Self> {
        if weight.len() != classes * dim || bias.len() != classes {
            return Err(Error::Shape(
                "head parameter sizes do not match class count".into(),
            ));
        }
        Ok(Self {
            mode,
            dim,
            classes,
            weight,
            bias,
            scale,
        })
    }

    /// Anchor vector of class `c` (anchor mode) or its weight row (linear mode).
    pub fn class_row(&self, c: usize) -> &[f64] {
        &self.weight[c * self.dim..(c + 1) * self.dim]
    }

    /// Appends `count` randomly initialized rows (linear mode).
    pub fn add_linear_classes<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) -> Result<()> {
        if self.mode != HeadMode::Linear {
            return Err(Error::UnsupportedMode {
                mode: self.mode.name(),
                what: "random class rows",
            });
        }
        let sd = (1.0 / self.dim as f64).sqrt();
        let dist = Normal::new(0.0, sd).expect("positive std");
        for _ in 0..count * self.dim {
            self.weight.push(dist.sample(rng));
        }
        self.bias.extend(std::iter::repeat_n(0.0, count));
        self.classes += count;
        Ok(())
    }

    /// Appends anchors (anchor mode); each is normalized to unit length.
    pub fn add_anchor_classes(&mut self, anchors: &[Vec<f64>]) -> Result<()> {
        if self.mode != HeadMode::Anchor {
            return Err(Error::UnsupportedMode {
                mode: self.mode.name(),
                what: "anchor vectors",
            });
        }
        for a in anchors {
            if a.len() != self.dim {
                return Err(Error::Shape(format!(
                    "anchor has width {}, head expects {}",
                    a.len(),
                    self.dim
                )));
            }
            let n = norm(a);
            if !(n > 1e-12) {
                return Err(Error::Domain("anchor vector has zero norm".into()));
            }
            self.weight.extend(a.iter().map(|v| v / n));
            self.bias.push(0.0);
            self.classes += 1;
        }
        Ok(())
    }

    pub fn renormalize_anchors(&mut self) {
        if self.mode != HeadMode::Anchor {
            return;
        }
        for row in self.weight.chunks_mut(self.dim) {
            let n = norm(row);
            if n > 1e-12 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub(crate) fn logits_raw(&self, feats: &[f64], n: usize) -> Vec<f64> {
        let (d, k) = (self.dim, self.classes);
        match self.mode {
            HeadMode::Linear => {
                let mut out = matmul_nt(feats, &self.weight, n, d, k);
                for row in out.chunks_mut(k.max(1)) {
                    for (o, b) in row.iter_mut().zip(&self.bias) {
                        *o += b;
                    }
                }
                out
            }
            HeadMode::Anchor => {
                let mut out = vec![0.0; n * k];
                for i in 0..n {
                    let f = &feats[i * d..(i + 1) * d];
                    let fn_ = norm(f);
                    if fn_ < 1e-12 {
                        continue;
                    }
                    for c in 0..k {
                        out[i * k + c] = self.scale * dot(f, self.class_row(c)) / fn_;
                    }
                }
                out
            }
        }
    }

    /// Gradient with respect to features and head parameters.
    pub(crate) fn backward_raw(
        &self,
        feats: &[f64],
        glogits: &[f64],
        n: usize,
    ) -> (Vec<f64>, HeadGrad) {
        let (d, k) = (self.dim, self.classes);
        match self.mode {
            HeadMode::Linear => {
                let gf = matmul_nn(glogits, &self.weight, n, k, d);
                let gw = matmul_tn(glogits, feats, n, k, d);
                let mut gb = vec![0.0; k];
                for row in glogits.chunks(k.max(1)) {
                    for (b, g) in gb.iter_mut().zip(row) {
                        *b += g;
                    }
                }
                (
                    gf,
                    HeadGrad {
                        weight: gw,
                        bias: gb,
                    },
                )
            }
            HeadMode::Anchor => {
                let mut gf = vec![0.0; n * d];
                let mut ga = vec![0.0; k * d];
                for i in 0..n {
                    let f = &feats[i * d..(i + 1) * d];
                    let fn_ = norm(f);
                    if fn_ < 1e-12 {
                        continue;
                    }
                    let u: Vec<f64> = f.iter().map(|v| v / fn_).collect();
                    let mut gu = vec![0.0; d];
                    for c in 0..k {
                        let g = self.scale * glogits[i * k + c];
                        if g == 0.0 {
                            continue;
                        }
                        for ((a, ga_), (uu, guu)) in self
                            .class_row(c)
                            .iter()
                            .zip(&mut ga[c * d..(c + 1) * d])
                            .zip(u.iter().zip(gu.iter_mut()))
                        {
                            *ga_ += g * uu;
                            *guu += g * a;
                        }
                    }
                    let proj = dot(&gu, &u);
                    for j in 0..d {
                        gf[i * d + j] = (gu[j] - proj * u[j]) / fn_;
                    }
                }
                (
                    gf,
                    HeadGrad {
                        weight: ga,
                        bias: vec![0.0; k],
                    },
                )
            }
        }
    }
}

/// Gradients for every trainable tensor of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Option<DenseGrad>>,
    pub head: HeadGrad,
}

impl ParamGrads {
    pub fn zeros(net: &Network) -> Self {
        Self {
            layers: net
                .backbone
                .layers
                .iter()
                .map(|l| {
                    l.as_dense().map(|d| DenseGrad {
                        weight: Tensor::zeros(d.weight.shape().to_vec()),
                        bias: Tensor::zeros(d.bias.shape().to_vec()),
                    })
                })
                .collect(),
            head: HeadGrad::zeros(&net.head),
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    a.weight.add_scaled(&b.weight, s);
                    a.bias.add_scaled(&b.bias, s);
                }
                (a @ None, Some(b)) => {
                    let mut c = b.clone();
                    c.weight.scale(s);
                    c.bias.scale(s);
                    *a = Some(c);
                }
                _ => {}
            }
        }
        for (a, b) in self.head.weight.iter_mut().zip(&other.head.weight) {
            *a += s * b;
        }
        for (a, b) in self.head.bias.iter_mut().zip(&other.head.bias) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for g in self.layers.iter().flatten() {
            for v in g.weight.data().iter().chain(g.bias.data()) {
                m = m.max(v.abs());
            }
        }
        for v in self.head.weight.iter().chain(&self.head.bias) {
            m = m.max(v.abs());
        }
        m
    }
}

/// Forward pass through backbone and head.
#[derive(Clone, Debug)]
pub struct NetForward {
    pub cache: ForwardCache,
    pub logits: Vec<f64>,
}

impl NetForward {
    pub fn features(&self) -> &[f64] {
        self.cache.top()
    }
}

/// Where an upstream gradient is injected for `backprop_to_input`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradAt {
    /// Output of layer unit `l` (0 = the input itself).
    Level(usize),
    Logits,
}

/// Training loss evaluated on the logits.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    /// `(1/n) sum_i ||logits_i - target_i||^2`
    Mse(Tensor),
    CrossEntropy(Vec<usize>),
}

/// Backbone, classification head and stored per-level input statistics
/// (`stats[l]` describes level `l`, for `l = 0..=L`).
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub backbone: Backbone,
    pub head: ClassificationHead,
    stats: Vec<LayerStats>,
}

impl Network {
    pub fn new(backbone: Backbone, head: ClassificationHead) -> Result<Self> {
        if head.dim() != backbone.out_dim() {
            return Err(Error::Shape(format!(
                "head expects features of width {}, backbone produces {}",
                head.dim(),
                backbone.out_dim()
            )));
        }
        let stats = (0..=backbone.depth())
            .map(|l| LayerStats::empty(backbone.level_dim(l)))
            .collect();
        Ok(Self {
            backbone,
            head,
            stats,
        })
    }

    pub fn depth(&self) -> usize {
        self.backbone.depth()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.out_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn stats(&self) -> &[LayerStats] {
        &self.stats
    }

    pub fn set_stats(&mut self, stats: Vec<LayerStats>) -> Result<()> {
        if stats.len() != self.depth() + 1 {
            return Err(Error::Shape(format!(
                "need {} stats entries, got {}",
                self.depth() + 1,
                stats.len()
            )));
        }
        for (l, s) in stats.iter().enumerate() {
            if s.dim() != self.backbone.level_dim(l) {
                return Err(Error::Shape(format!("stats {l} have the wrong width")));
            }
        }
        self.stats = stats;
        Ok(())
    }

    pub fn reset_stats(&mut self) {
        for (l, s) in self.stats.iter_mut().enumerate() {
            *s = LayerStats::empty(self.backbone.level_dim(l));
        }
    }

    /// Stats of level `l`, or an error if nothing has been recorded there.
    pub fn require_stats(&self, l: usize) -> Result<&LayerStats> {
        match self.stats.get(l) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(Error::MissingStats(l)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<NetForward> {
        let cache = self.backbone.forward(x)?;
        let logits = self.head.logits_raw(cache.top(), x.rows());
        Ok(NetForward { cache, logits })
    }

    /// Outputs of every unit and the logits.
    pub fn forward_collect(&self, x: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        if self.classes() == 0 {
            return Err(Error::InvalidArgument("head has no classes yet".into()));
        }
        let fwd = self.forward(x)?;
        let n = x.rows();
        let outputs = (1..=self.depth())
            .map(|l| {
                Tensor::from_raw(
                    vec![n, self.backbone.level_dim(l)],
                    fwd.cache.level(l).to_vec(),
                )
            })
            .collect();
        let logits = Tensor::from_raw(vec![n, self.classes()], fwd.logits);
        Ok((outputs, logits))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_collect(x)?.1)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let fwd = self.forward(x)?;
        let k = self.classes();
        Ok(fwd
            .logits
            .chunks(k.max(1))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Reverse pass with optional gradients at the logits and at the
    /// backbone output. Returns the input gradient and parameter gradients.
    pub fn backward(
        &self,
        fwd: &NetForward,
        logits_grad: Option<&[f64]>,
        feature_grad: Option<&[f64]>,
        want_params: bool,
    ) -> (Vec<f64>, ParamGrads) {
        let n = fwd.cache.rows;
        let d = self.feature_dim();
        let mut top = vec![0.0; n * d];
        let mut head = HeadGrad::zeros(&self.head);
        if let Some(g) = logits_grad {
            let (gf, hg) = self.head.backward_raw(fwd.features(), g, n);
            top = gf;
            head = hg;
        }
        if let Some(g) = feature_grad {
            for (a, b) in top.iter_mut().zip(g) {
                *a += b;
            }
        }
        let mut level_grads = vec![None; self.depth() + 1];
        level_grads[self.depth()] = Some(top);
        let (gx, layers) = self
            .backbone
            .backward(&fwd.cache, &level_grads, want_params);
        (gx, ParamGrads { layers, head })
    }

    /// Gradient of the head parameters only; nothing reaches the backbone.
    pub fn head_only_grad(&self, fwd: &NetForward, logits_grad: &[f64]) -> ParamGrads {
        let (_, head) = self
            .head
            .backward_raw(fwd.features(), logits_grad, fwd.cache.rows);
        let mut g = ParamGrads::zeros(self);
        g.head = head;
        g
    }

    /// dLoss/dx for an upstream gradient given at a unit output or at the logits.
    pub fn backprop_to_input(&self, x: &Tensor, at: GradAt, upstream: &Tensor) -> Result<Tensor> {
        let fwd = self.forward(x)?;
        let n = x.rows();
        let gx = match at {
            GradAt::Logits => {
                if upstream.len() != fwd.logits.len() {
                    return Err(Error::Shape(
                        "upstream gradient does not match logits".into(),
                    ));
                }
                self.backward(&fwd, Some(upstream.data()), None, false).0
            }
            GradAt::Level(l) => {
                if l > self.depth() {
                    return Err(Error::InvalidArgument(format!("no level {l}")));
                }
                if upstream.len() != n * self.backbone.level_dim(l) {
                    return Err(Error::Shape(format!(
                        "upstream gradient does not match level {l}"
                    )));
                }
                let mut lg = vec![None; self.depth() + 1];
                lg[l] = Some(upstream.data().to_vec());
                let cache = self.backbone.forward_range(0, l, x)?;
                self.backbone.backward(&cache, &lg[..=l], false).0
            }
        };
        Ok(Tensor::from_raw(x.shape().to_vec(), gx))
    }

    /// Loss value and gradients of every trainable tensor.
    pub fn backprop_to_params(&self, x: &Tensor, loss: &LossSpec) -> Result<(f64, ParamGrads)> {
        let fwd = self.forward(x)?;
        let (n, k) = (x.rows(), self.classes());
        let (value, g) = match loss {
            LossSpec::Mse(t) => {
                if t.len() != n * k {
                    return Err(Error::Shape("MSE targets do not match logits".into()));
                }
                mse_rows(&fwd.logits, t.data(), n)?
            }
            LossSpec::CrossEntropy(labels) => {
                softmax_cross_entropy(&fwd.logits, n, k, labels, None)?
            }
        };
        let (_, grads) = self.backward(&fwd, Some(&g), None, true);
        Ok((value, grads))
    }

    /// Merges per-level moments of `batch` into the stored statistics.
    pub fn update_layer_stats(&mut self, batch: &Tensor) -> Result<()> {
        let n = batch.rows();
        if n < 2 {
            return Err(Error::BatchTooSmall { got: n, need: 2 });
        }
        let cache = self.backbone.forward(batch)?;
        for l in 0..=self.depth() {
            let d = self.backbone.level_dim(l);
            let s = LayerStats::from_batch(cache.level(l), n, d)?;
            self.stats[l].merge(&s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::layer::{Activation, Dense, Layer};

    fn identity_net(dim: usize) -> Network {
        let bb = Backbone::new(vec![Layer::identity(dim)]).unwrap();
        let mut head = ClassificationHead::linear(dim);
        head.add_linear_classes(3, &mut rand::rng()).unwrap();
        Network::new(bb, head).unwrap()
    }

    #[test]
    fn identity_forward_and_backward() {
        let net = identity_net(2);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let (outs, logits) = net.forward_collect(&x).unwrap();
        assert_eq!(outs[0].data(), &[1.0, 2.0]);
        let expect = net.head.logits_raw(&[1.0, 2.0], 1);
        assert_eq!(logits.data(), expect.as_slice());
        let g = Tensor::matrix(1, 2, vec![0.5, -3.0]).unwrap();
        let gx = net.backprop_to_input(&x, GradAt::Level(1), &g).unwrap();
        assert_eq!(gx.data(), g.data());
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let net = identity_net(2);
        let x = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            net.forward(&x),
            Err(Error::LayerShape { layer: 1, .. })
        ));
    }

    #[test]
    fn perfect_mse_gives_zero_gradients() {
        let net = identity_net(2);
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let target = net.logits(&x).unwrap();
        let (l, g) = net.backprop_to_params(&x, &LossSpec::Mse(target)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_dense_mse_closed_form() {
        // Identity backbone + linear head: d/dW (1/N)||Wx + b - t||^2 = 2/N e^T x
        let net = identity_net(2);
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let t = Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
        let pred = net.logits(&x).unwrap();
        let (_, g) = net
            .backprop_to_params(&x, &LossSpec::Mse(t.clone()))
            .unwrap();
        for j in 0..3 {
            for k in 0..2 {
                let e: f64 = (0..2)
                    .map(|i| 2.0 / 2.0 * (pred.row(i)[j] - t.row(i)[j]) * x.row(i)[k])
                    .sum();
                assert!((g.head.weight[j * 2 + k] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_layer_chain_by_hand() {
        // x=[1,-1]; W1=[[1,2],[0,1]], b1=[0.5,0] relu -> z=[-0.5,-1] -> [0,0]... use leaky
        let w1 = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        let b1 = Tensor::vector(vec![0.5, 0.0]).unwrap();
        let w2 = Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap();
        let b2 = Tensor::vector(vec![1.0]).unwrap();
        let bb = Backbone::new(vec![
            Layer::dense(Dense::new(w1, b1).unwrap(), Activation::LeakyRelu),
            Layer::dense(Dense::new(w2, b2).unwrap(), Activation::Tanh),
        ])
        .unwrap();
        let mut head = ClassificationHead::linear(1);
        head.add_linear_classes(1, &mut rand::rng()).unwrap();
        let net = Network::new(bb, head).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
        let (outs, _) = net.forward_collect(&x).unwrap();
        // z1 = [1-2+0.5, -1] = [-0.5, -1] -> leaky = [-0.005, -0.01]
        assert!((outs[0].data()[0] + 0.005).abs() < 1e-15);
        assert!((outs[0].data()[1] + 0.01).abs() < 1e-15);
        // z2 = 2*(-0.005) - (-0.01) + 1 = 1.0 -> tanh(1)
        assert!((outs[1].data()[0] - 1f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn anchor_head_normalizes_and_scores_cosine() {
        let bb = Backbone::new(vec![Layer::identity(2)]).unwrap();
        let mut head = ClassificationHead::anchor(2, 10.0).unwrap();
        head.add_anchor_classes(&[vec![3.0, 0.0], vec![0.0, -2.0]])
            .unwrap();
        assert_eq!(head.class_row(0), &[1.0, 0.0]);
        let net = Network::new(bb, head).unwrap();
        let logits = net
            .logits(&Tensor::matrix(1, 2, vec![5.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(logits.data(), &[10.0, 0.0]);
    }

    #[test]
    fn stats_update_requires_two_samples() {
        let mut net = identity_net(2);
        let one = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(net.update_layer_stats(&one).is_err());
        let two = Tensor::matrix(2, 2, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        net.update_layer_stats(&two).unwrap();
        assert_eq!(net.stats()[0].mean(), &[1.0, 1.0]);
        assert_eq!(net.stats()[1].std(), vec![1.0, 1.0]);
    }
}
