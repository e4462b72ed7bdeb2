use invercl::netcore::{
    load_network, save_network, Activation, Backbone, ClassificationHead, GradAt, HeadMode,
    LossSpec, NetOptimizer, Network, Tensor,
};
use invercl::Error;
use rand::Rng;

mod common;
use common::*;

#[test]
fn linear_head_gradients_match_finite_differences() {
    let acts = [Activation::Tanh, Activation::LeakyRelu, Activation::None];
    let net = random_net(&[5, 7, 6, 4], &acts, 3, 11);
    let x = random_tensor(&mut rng(2), 4, 5, 1.0);
    let err = worst_gradient_error(&net, &x, &[0, 2, 1, 2], 1e-5, 1e-4);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn anchor_head_gradients_match_finite_differences() {
    let acts = [Activation::LeakyRelu, Activation::Tanh];
    let net = random_anchor_net(&[4, 6, 5], &acts, 4, 12);
    let x = random_tensor(&mut rng(3), 3, 4, 1.0);
    let err = worst_gradient_error(&net, &x, &[3, 0, 1], 1e-5, 1e-4);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn level_gradient_matches_finite_differences() {
    let net = random_net(&[3, 5, 4], &[Activation::Tanh, Activation::Tanh], 2, 4);
    let x = random_tensor(&mut rng(5), 2, 3, 1.0);
    let w = random_tensor(&mut rng(6), 2, 5, 1.0);
    // L(x) = <w, level-1 output>
    let loss = |v: &[f64]| {
        let (outs, _) = net
            .forward_collect(&Tensor::matrix(2, 3, v.to_vec()).unwrap())
            .unwrap();
        outs[0]
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let g = net.backprop_to_input(&x, GradAt::Level(1), &w).unwrap();
    let fd = finite_diff(x.data(), 1e-6, loss);
    for (a, f) in g.data().iter().zip(&fd) {
        assert!(rel_err(*a, *f, 1e-6) < 1e-6, "{a} vs {f}");
    }
}

#[test]
fn forward_matches_manual_matmul() {
    let net = random_net(&[3, 4], &[Activation::None], 2, 8);
    let x = random_tensor(&mut rng(9), 2, 3, 1.0);
    let d = net.backbone.layers[0].as_dense().unwrap();
    let feats = net.backbone.features(&x).unwrap();
    for i in 0..2 {
        for j in 0..4 {
            let want: f64 = (0..3)
                .map(|k| d.weight.data()[j * 3 + k] * x.row(i)[k])
                .sum::<f64>()
                + d.bias.data()[j];
            assert!((feats.row(i)[j] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for net in [
        random_net(&[3, 5, 2], &[Activation::LeakyRelu, Activation::Tanh], 3, 1),
        random_anchor_net(&[3, 4], &[Activation::Relu], 2, 2),
    ] {
        let path = dir.path().join("n.ckpt");
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back, net);
        let x = random_tensor(&mut rng(4), 3, 3, 1.0);
        assert_eq!(back.logits(&x).unwrap(), net.logits(&x).unwrap());
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, "not a checkpoint\n").unwrap();
    assert!(load_network(&path).is_err());
    let net = random_net(&[2, 2], &[Activation::None], 2, 0);
    let text = net.to_checkpoint();
    let cut = &text[..text.len() / 2];
    assert!(Network::from_checkpoint(cut).is_err());
}

#[test]
fn stats_match_column_moments() {
    let mut net = random_net(&[3, 4], &[Activation::Tanh], 2, 3);
    net.reset_stats();
    let x = random_tensor(&mut rng(1), 50, 3, 2.0);
    net.update_layer_stats(&x).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = (0..50).map(|i| x.row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert!((net.stats()[0].mean()[j] - mean).abs() < 1e-12);
        assert!((net.stats()[0].std()[j] - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn pooled_stats_equal_one_big_batch() {
    let mut a = random_net(&[3, 4], &[Activation::Tanh], 2, 3);
    let mut b = a.clone();
    a.reset_stats();
    b.reset_stats();
    let x = random_tensor(&mut rng(1), 30, 3, 1.0);
    let y = random_tensor(&mut rng(2), 20, 3, 1.0);
    a.update_layer_stats(&x).unwrap();
    a.update_layer_stats(&y).unwrap();
    b.update_layer_stats(&Tensor::concat_rows(&[&x, &y]).unwrap())
        .unwrap();
    for (sa, sb) in a.stats().iter().zip(b.stats()) {
        for (p, q) in sa.mean().iter().zip(sb.mean()) {
            assert!((p - q).abs() < 1e-12);
        }
        for (p, q) in sa.std().iter().zip(sb.std()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn missing_stats_are_reported() {
    let mut net = random_net(&[2, 3], &[Activation::Tanh], 2, 0);
    net.reset_stats();
    assert!(matches!(net.require_stats(1), Err(Error::MissingStats(1))));
}

#[test]
fn training_step_lowers_the_loss() {
    let mut net = random_net(
        &[4, 8, 3],
        &[Activation::LeakyRelu, Activation::None],
        3,
        21,
    );
    let x = random_tensor(&mut rng(1), 12, 4, 1.0);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let before = ce_loss(&net, &x, &labels);
    let mut opt = NetOptimizer::new(&net, 0.01);
    for _ in 0..50 {
        let (_, g) = net
            .backprop_to_params(&x, &LossSpec::CrossEntropy(labels.clone()))
            .unwrap();
        opt.step(&mut net, &g).unwrap();
    }
    assert!(ce_loss(&net, &x, &labels) < before * 0.5);
}

#[test]
fn anchors_stay_unit_after_steps() {
    let mut net = random_anchor_net(&[3, 4], &[Activation::Tanh], 3, 5);
    let x = random_tensor(&mut rng(1), 6, 3, 1.0);
    let mut opt = NetOptimizer::new(&net, 0.1);
    for _ in 0..5 {
        let (_, g) = net
            .backprop_to_params(&x, &LossSpec::CrossEntropy(vec![0, 1, 2, 0, 1, 2]))
            .unwrap();
        opt.step(&mut net, &g).unwrap();
    }
    for c in 0..3 {
        let n: f64 = net
            .head
            .class_row(c)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn head_grows_by_appending_classes() {
    let mut r = rng(0);
    let bb = Backbone::mlp(&[2, 3], &[Activation::Tanh], &mut r).unwrap();
    let mut head = ClassificationHead::linear(3);
    head.add_linear_classes(2, &mut r).unwrap();
    let first: Vec<f64> = head.weight().to_vec();
    head.add_linear_classes(3, &mut r).unwrap();
    assert_eq!(head.classes(), 5);
    assert_eq!(&head.weight()[..6], first.as_slice());
    let net = Network::new(bb, head).unwrap();
    assert_eq!(net.head.mode(), HeadMode::Linear);
    let x = Tensor::matrix(1, 2, vec![r.random(), r.random()]).unwrap();
    assert_eq!(net.logits(&x).unwrap().len(), 5);
}

#[test]
fn head_width_must_match_backbone() {
    let bb = Backbone::mlp(&[2, 3], &[Activation::Tanh], &mut rng(0)).unwrap();
    assert!(Network::new(bb, ClassificationHead::linear(4)).is_err());
}
