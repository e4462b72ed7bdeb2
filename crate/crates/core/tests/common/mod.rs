#![allow(dead_code)]

use invercl::netcore::{Activation, Backbone, ClassificationHead, Dense, Layer, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Random MLP with a linear head and stats recorded from random inputs.
pub fn random_net(dims: &[usize], acts: &[Activation], classes: usize, seed: u64) -> Network {
    let mut r = rng(seed);
    let bb = Backbone::mlp(dims, acts, &mut r).unwrap();
    let mut head = ClassificationHead::linear(*dims.last().unwrap());
    head.add_linear_classes(classes, &mut r).unwrap();
    let mut net = Network::new(bb, head).unwrap();
    let x = random_tensor(&mut r, 64, dims[0], 1.0);
    net.update_layer_stats(&x).unwrap();
    net
}

pub fn random_anchor_net(
    dims: &[usize],
    acts: &[Activation],
    classes: usize,
    seed: u64,
) -> Network {
    let mut r = rng(seed);
    let bb = Backbone::mlp(dims, acts, &mut r).unwrap();
    let d = *dims.last().unwrap();
    let mut head = ClassificationHead::anchor(d, 5.0).unwrap();
    let anchors: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    head.add_anchor_classes(&anchors).unwrap();
    let mut net = Network::new(bb, head).unwrap();
    let x = random_tensor(&mut r, 64, dims[0], 1.0);
    net.update_layer_stats(&x).unwrap();
    net
}

/// Linear single-unit dense layer from explicit weights.
pub fn dense_layer(rows: usize, cols: usize, w: Vec<f64>, act: Activation) -> Layer {
    let d = Dense::new(
        Tensor::matrix(rows, cols, w).unwrap(),
        Tensor::zeros(vec![rows]),
    )
    .unwrap();
    Layer::dense(d, act)
}

/// Relative error with the denominator floored at `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite differences of `f` at `x`.
pub fn finite_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Random orthogonal `d x d` matrix (QR of a Gaussian matrix).
pub fn random_orthogonal(d: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let m = nalgebra::DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    let q = m.qr().q();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(q[(i, j)]);
        }
    }
    out
}

/// Cross-entropy of `net` on `(x, labels)`.
pub fn ce_loss(net: &Network, x: &Tensor, labels: &[usize]) -> f64 {
    let logits = net.logits(x).unwrap();
    invercl::netcore::softmax_cross_entropy(logits.data(), x.rows(), net.classes(), labels, None)
        .unwrap()
        .0
}

/// Worst relative error between the analytic cross-entropy gradients
/// (input, every dense weight and bias, head weights or anchors, linear
/// bias) and central differences with step `h`.
pub fn worst_gradient_error(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    h: f64,
    floor: f64,
) -> f64 {
    use invercl::netcore::{GradAt, HeadMode, LossSpec};
    let mut worst: f64 = 0.0;
    let mut track = |analytic: &[f64], numeric: &[f64]| {
        assert_eq!(analytic.len(), numeric.len());
        for (a, f) in analytic.iter().zip(numeric) {
            worst = worst.max(rel_err(*a, *f, floor));
        }
    };

    let (_, grads) = net
        .backprop_to_params(x, &LossSpec::CrossEntropy(labels.to_vec()))
        .unwrap();
    let logits = net.logits(x).unwrap();
    let (_, g) = invercl::netcore::softmax_cross_entropy(
        logits.data(),
        x.rows(),
        net.classes(),
        labels,
        None,
    )
    .unwrap();
    let upstream = Tensor::new(logits.shape().to_vec(), g).unwrap();
    let gx = net.backprop_to_input(x, GradAt::Logits, &upstream).unwrap();
    let fx = finite_diff(x.data(), h, |v| {
        ce_loss(
            net,
            &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap(),
            labels,
        )
    });
    track(gx.data(), &fx);

    for (l, lg) in grads.layers.iter().enumerate() {
        let Some(lg) = lg else { continue };
        let d = net.backbone.layers[l].as_dense().unwrap();
        let fw = finite_diff(d.weight.data(), h, |v| {
            let mut m = net.clone();
            m.backbone.layers[l]
                .as_dense_mut()
                .unwrap()
                .weight
                .data_mut()
                .copy_from_slice(v);
            ce_loss(&m, x, labels)
        });
        track(lg.weight.data(), &fw);
        let fb = finite_diff(d.bias.data(), h, |v| {
            let mut m = net.clone();
            m.backbone.layers[l]
                .as_dense_mut()
                .unwrap()
                .bias
                .data_mut()
                .copy_from_slice(v);
            ce_loss(&m, x, labels)
        });
        track(lg.bias.data(), &fb);
    }

    let fh = finite_diff(net.head.weight(), h, |v| {
        let mut m = net.clone();
        m.head.weight_mut().copy_from_slice(v);
        ce_loss(&m, x, labels)
    });
    track(&grads.head.weight, &fh);
    if net.head.mode() == HeadMode::Linear {
        let fb = finite_diff(net.head.bias(), h, |v| {
            let mut m = net.clone();
            m.head.bias_mut().copy_from_slice(v);
            ce_loss(&m, x, labels)
        });
        track(&grads.head.bias, &fb);
    }
    worst
}
