//! Layer units and the plain feed-forward backbone built from them.
//!
//! A layer unit is an optional dense map followed by an element-wise
//! activation. Inversion treats one unit as one layer.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::None => z,
        }
    }

    /// Derivative at `z`. ReLU at exactly 0 takes the subgradient 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::None => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leaky" => Ok(Activation::LeakyRelu),
            "tanh" => Ok(Activation::Tanh),
            "none" | "linear" => Ok(Activation::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

/// Affine map with weight `(out_dim, in_dim)` and bias `(out_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::Shape("dense weight must be 2D".into()));
        }
        if bias.len() != weight.shape()[0] {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weight.shape()[0]
            )));
        }
        Ok(Self { weight, bias })
    }

    /// Uniform init with limit `sqrt(6 / in_dim)`, zero bias.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let dist = Uniform::new(-limit, limit).expect("finite positive limit");
        let w = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::from_raw(vec![out_dim, in_dim], w),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Dense(Dense),
    /// Pass-through of the given width (optionally followed by an activation).
    Identity {
        dim: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
}

/// Gradient of one dense layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn dense(dense: Dense, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense(dense),
            activation,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            kind: LayerKind::Identity { dim },
            activation: Activation::None,
        }
    }

    pub fn activation_only(dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Identity { dim },
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Dense(d) => d.in_dim(),
            LayerKind::Identity { dim } => *dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Dense(d) => d.out_dim(),
            LayerKind::Identity { dim } => *dim,
        }
    }

    pub fn as_dense(&self) -> Option<&Dense> {
        match &self.kind {
            LayerKind::Dense(d) => Some(d),
            LayerKind::Identity { .. } => None,
        }
    }

    pub fn as_dense_mut(&mut self) -> Option<&mut Dense> {
        match &mut self.kind {
            LayerKind::Dense(d) => Some(d),
            LayerKind::Identity { .. } => None,
        }
    }

    /// Returns `(pre_activation, output)` for a flat batch of `n` rows.
    pub(crate) fn forward_raw(&self, x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let z = match &self.kind {
            LayerKind::Dense(d) => {
                let (k, m) = (d.in_dim(), d.out_dim());
                let mut z = matmul_nt(x, d.weight.data(), n, k, m);
                for row in z.chunks_mut(m) {
                    for (v, b) in row.iter_mut().zip(d.bias.data()) {
                        *v += b;
                    }
                }
                z
            }
            LayerKind::Identity { .. } => x.to_vec(),
        };
        let y = z.iter().map(|&v| self.activation.apply(v)).collect();
        (z, y)
    }

    /// Applies the unit to a batch, checking the input width.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.row_len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects width {}, got {}",
                self.in_dim(),
                x.row_len()
            )));
        }
        let (_, y) = self.forward_raw(x.data(), x.rows());
        Ok(Tensor::from_raw(vec![x.rows(), self.out_dim()], y))
    }

    /// Backward through the unit given the cached input `x` and
    /// pre-activation `z`. Returns the input gradient and, when requested,
    /// the parameter gradient.
    pub(crate) fn backward_raw(
        &self,
        x: &[f64],
        z: &[f64],
        grad_out: &[f64],
        n: usize,
        want_params: bool,
    ) -> (Vec<f64>, Option<DenseGrad>) {
        let gz: Vec<f64> = match self.activation {
            Activation::None => grad_out.to_vec(),
            act => grad_out
                .iter()
                .zip(z)
                .map(|(g, &zv)| g * act.derivative(zv))
                .collect(),
        };
        match &self.kind {
            LayerKind::Dense(d) => {
                let (k, m) = (d.in_dim(), d.out_dim());
                let gx = matmul_nn(&gz, d.weight.data(), n, m, k);
                let pg = want_params.then(|| {
                    let gw = matmul_tn(&gz, x, n, m, k);
                    let mut gb = vec![0.0; m];
                    for row in gz.chunks(m) {
                        for (b, g) in gb.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                    DenseGrad {
                        weight: Tensor::from_raw(vec![m, k], gw),
                        bias: Tensor::from_raw(vec![m], gb),
                    }
                });
                (gx, pg)
            }
            LayerKind::Identity { .. } => (gz, None),
        }
    }
}

/// Cached activations of a backbone pass starting at level `start`.
///
/// Level 0 is the network input, level `l` the output of unit `l`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub start: usize,
    pub rows: usize,
    levels: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn level(&self, l: usize) -> &[f64] {
        &self.levels[l - self.start]
    }

    pub fn top(&self) -> &[f64] {
        self.levels
            .last()
            .expect("cache has at least the input level")
    }

    pub fn end(&self) -> usize {
        self.start + self.levels.len() - 1
    }
}

/// Ordered stack of layer units.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub layers: Vec<Layer>,
}

impl Backbone {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "backbone needs at least one layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::LayerShape {
                    layer: i + 2,
                    expected: pair[1].in_dim(),
                    got: pair[0].out_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Dense MLP with the given widths and one activation per unit.
    pub fn mlp<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| Layer::dense(Dense::random(w[0], w[1], rng), a))
            .collect();
        Self::new(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Width of level `l` (0 = input).
    pub fn level_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.in_dim()
        } else {
            self.layers[l - 1].out_dim()
        }
    }

    /// Runs units `start+1..=end` on `x`, which must have the width of level `start`.
    pub fn forward_range(&self, start: usize, end: usize, x: &Tensor) -> Result<ForwardCache> {
        if start > end || end > self.depth() {
            return Err(Error::InvalidArgument(format!(
                "invalid level range {start}..{end} for depth {}",
                self.depth()
            )));
        }
        let expected = self.level_dim(start);
        if x.row_len() != expected {
            return Err(Error::LayerShape {
                layer: start + 1,
                expected,
                got: x.row_len(),
            });
        }
        let n = x.rows();
        let mut levels = Vec::with_capacity(end - start + 1);
        let mut pre = Vec::with_capacity(end - start);
        levels.push(x.data().to_vec());
        for layer in &self.layers[start..end] {
            let (z, y) = layer.forward_raw(levels.last().unwrap(), n);
            pre.push(z);
            levels.push(y);
        }
        Ok(ForwardCache {
            start,
            rows: n,
            levels,
            pre,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardCache> {
        self.forward_range(0, self.depth(), x)
    }

    /// Output of the top unit as a `[n, out_dim]` tensor.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let cache = self.forward(x)?;
        Ok(Tensor::from_raw(
            vec![x.rows(), self.out_dim()],
            cache.top().to_vec(),
        ))
    }

    /// Reverse pass. `level_grads[l - cache.start]` is an optional gradient
    /// injected at level `l`; the one at `cache.end()` seeds the pass.
    /// Returns the gradient at `cache.start` and per-unit parameter grads
    /// (indexed by absolute unit, `None` for units outside the range or
    /// without parameters).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        level_grads: &[Option<Vec<f64>>],
        want_params: bool,
    ) -> (Vec<f64>, Vec<Option<DenseGrad>>) {
        let n = cache.rows;
        let (start, end) = (cache.start, cache.end());
        debug_assert_eq!(level_grads.len(), end - start + 1);
        let mut param_grads: Vec<Option<DenseGrad>> = vec![None; self.depth()];
        let mut g = level_grads[end - start]
            .clone()
            .unwrap_or_else(|| vec![0.0; n * self.level_dim(end)]);
        for l in (start + 1..=end).rev() {
            let layer = &self.layers[l - 1];
            let (gx, pg) = layer.backward_raw(
                cache.level(l - 1),
                &cache.pre[l - 1 - start],
                &g,
                n,
                want_params,
            );
            param_grads[l - 1] = pg;
            g = gx;
            if let Some(extra) = &level_grads[l - 1 - start] {
                for (a, b) in g.iter_mut().zip(extra) {
                    *a += b;
                }
            }
        }
        (g, param_grads)
    }
}
