mod common;

use common::*;
use invercl::featmodel::*;
use invercl::netcore::{Activation, Tensor};
use invercl::seed::rng_from;
use rand_distr::{Distribution, Normal};

fn identity_model(d: usize) -> ContrastiveModel {
    let eye: Vec<f64> = (0..d * d)
        .map(|k| if k / d == k % d { 1.0 } else { 0.0 })
        .collect();
    ContrastiveModel {
        first: dense_layer(d, d, eye.clone(), Activation::LeakyRelu),
        second: dense_layer(d, d, eye, Activation::None),
    }
}

fn gauss(dim: usize, class_id: usize) -> ClassGaussian {
    ClassGaussian {
        class_id,
        mean: vec![0.5; dim],
        std: vec![1.0; dim],
        count: 100,
    }
}

#[test]
fn gaussian_two_points() {
    let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
    let g = fit_class_gaussian(3, &x).unwrap();
    assert_eq!(g.mean, vec![1.0, 1.0]);
    assert_eq!(g.std, vec![1.0, 1.0]);
    assert_eq!((g.class_id, g.count), (3, 2));
}

#[test]
fn gaussian_constant_set_floors_std() {
    let x = Tensor::from_rows(&vec![vec![4.0, -1.0]; 5]).unwrap();
    let g = fit_class_gaussian(0, &x).unwrap();
    assert_eq!(g.std, vec![1e-6, 1e-6]);
}

#[test]
fn gaussian_needs_two_features() {
    let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    assert!(fit_class_gaussian(0, &x).is_err());
}

#[test]
fn gaussian_recovers_sampling_parameters() {
    let mut r = rng(5);
    let dist = Normal::new(3.0, 2.0).unwrap();
    let data: Vec<f64> = (0..100).map(|_| dist.sample(&mut r)).collect();
    let g = fit_class_gaussian(0, &Tensor::matrix(100, 1, data).unwrap()).unwrap();
    assert!((g.mean[0] - 3.0).abs() < 0.6, "{}", g.mean[0]);
    assert!((g.std[0] - 2.0).abs() < 0.6, "{}", g.std[0]);
}

#[test]
fn contrastive_loss_closed_forms() {
    let m = identity_model(2);
    let x = Tensor::from_rows(&[
        vec![1.0, 0.0],
        vec![2.0, 0.0],
        vec![0.0, 3.0],
        vec![-1.0, 0.0],
    ])
    .unwrap();
    assert!((contrastive_loss(&m, &x, 0, &[1], 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(contrastive_loss(&m, &x, 0, &[2], 1.0).unwrap().abs() < 1e-12);
    let both = contrastive_loss(&m, &x, 0, &[1, 3], 1.0).unwrap();
    let expected = ((1f64.exp() + (-1f64).exp()) / 2.0).ln();
    assert!((both - expected).abs() < 1e-12);
    assert!((both - 0.4338).abs() < 1e-4);
}

#[test]
fn contrastive_loss_rejects_bad_negative_sets() {
    let m = identity_model(2);
    let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(contrastive_loss(&m, &x, 0, &[], 1.0).is_err());
    assert!(contrastive_loss(&m, &x, 0, &[0, 1], 1.0).is_err());
    assert!(contrastive_loss(&m, &x, 0, &[1], 0.0).is_err());
}

#[test]
fn contrastive_loss_is_scale_free() {
    let mut r = rng(7);
    let m = ContrastiveModel::random(4, 8, 8, &mut r);
    let x = random_tensor(&mut r, 6, 4, 1.0);
    let base = contrastive_loss(&m, &x, 2, &[0, 1, 4, 5], 0.5).unwrap();
    let mut scaled = m.clone();
    let d = scaled.second.as_dense_mut().unwrap();
    d.weight.scale(7.0);
    d.bias.scale(7.0);
    let s = contrastive_loss(&scaled, &x, 2, &[0, 1, 4, 5], 0.5).unwrap();
    assert!((base - s).abs() < 1e-10);
}

#[test]
fn training_lowers_loss_on_random_features() {
    let x = random_tensor(&mut rng(11), 64, 8, 1.0);
    let cfg = ContrastiveConfig {
        hidden: 16,
        epochs: 40,
        ..ContrastiveConfig::default()
    };
    let (model, hist) = train_contrastive(&x, &cfg, 12).unwrap();
    let last = mean_set_loss(&model, &x, 1.0).unwrap();
    assert!(last <= 0.95 * hist[0], "{last} vs {}", hist[0]);
    assert!(hist.iter().all(|h| last <= *h + 1e-12));
}

#[test]
fn training_separates_antipodal_features() {
    let mut rows = Vec::new();
    for k in 0..8 {
        let s = if k % 2 == 0 { 1.0 } else { -1.0 };
        rows.push(vec![s * 1.0, s * 0.5, -s * 0.3]);
    }
    let x = Tensor::from_rows(&rows).unwrap();
    let cfg = ContrastiveConfig {
        hidden: 8,
        epochs: 60,
        batch_size: 8,
        ..ContrastiveConfig::default()
    };
    let (model, _) = train_contrastive(&x, &cfg, 13).unwrap();
    let z = model.map(&x).unwrap();
    let (a, b) = (z.row(0), z.row(1));
    let cos = a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>()
        / (a.iter().map(|v| v * v).sum::<f64>().sqrt()
            * b.iter().map(|v| v * v).sum::<f64>().sqrt());
    assert!(cos <= 0.0, "{cos}");
}

#[test]
fn zero_epochs_returns_initial_model() {
    let x = random_tensor(&mut rng(14), 16, 4, 1.0);
    let cfg = ContrastiveConfig {
        epochs: 0,
        ..ContrastiveConfig::default()
    };
    let (model, hist) = train_contrastive(&x, &cfg, 15).unwrap();
    assert_eq!(hist.len(), 1);
    assert_eq!(mean_set_loss(&model, &x, 1.0).unwrap(), hist[0]);
    assert_eq!(model.out_dim(), 64);
    assert!(train_contrastive(&random_tensor(&mut rng(1), 7, 4, 1.0), &cfg, 0).is_err());
}

#[test]
fn cfs_without_steps_returns_initial_samples() {
    let g = gauss(3, 2);
    let cfg = CfsConfig {
        init_size: Some(5),
        steps: 0,
        ..CfsConfig::default()
    };
    let set = cfs_select(&g, &identity_model(3), &cfg, 21).unwrap();
    let expect = g.sample(5, &mut rng_from(21));
    assert_eq!(set.to_tensor().unwrap(), expect);
    assert!(set.provenance.iter().all(|p| *p == Provenance::Sampled));
    assert_eq!(set.class_id, 2);
}

#[test]
fn cfs_keep_all_admits_every_candidate() {
    let g = gauss(3, 0);
    let cfg = CfsConfig {
        init_size: Some(2),
        steps: 3,
        candidates: 4,
        keep_ratio: 1.0,
        temperature: 1.0,
    };
    let set = cfs_select(&g, &identity_model(3), &cfg, 22).unwrap();
    let expect = g.sample(2 + 12, &mut rng_from(22));
    assert_eq!(set.len(), 14);
    // admitted in score order, so compare each step as a set
    for block in 0..4 {
        let range = if block == 0 {
            0..2
        } else {
            2 + 4 * (block - 1)..2 + 4 * block
        };
        for i in range.clone() {
            assert!(range.clone().any(|j| set.features[j] == expect.row(i)));
        }
    }
}

#[test]
fn cfs_picks_lowest_loss_candidate() {
    let g = gauss(4, 0);
    let model = ContrastiveModel::random(4, 8, 8, &mut rng(30));
    let cfg = CfsConfig {
        init_size: Some(3),
        steps: 1,
        candidates: 6,
        keep_ratio: 1.0 / 6.0,
        temperature: 1.0,
    };
    let set = cfs_select(&g, &model, &cfg, 31).unwrap();
    assert_eq!(set.len(), 4);
    let mut r = rng_from(31);
    let init = g.sample(3, &mut r);
    let cand = g.sample(6, &mut r);
    let zi = model.map(&init).unwrap();
    let zc = model.map(&cand).unwrap();
    let negs: Vec<&[f64]> = zi.iter_rows().collect();
    let losses: Vec<f64> = (0..6)
        .map(|i| mapped_contrastive_loss(zc.row(i), &negs, 1.0).unwrap())
        .collect();
    let best = (0..6)
        .min_by(|&a, &b| losses[a].total_cmp(&losses[b]))
        .unwrap();
    assert_eq!(set.features[3], cand.row(best).to_vec());
    assert_eq!(set.provenance[3], Provenance::Selected);
}

#[test]
fn duplicate_candidate_scores_above_orthogonal_one() {
    let member = [1.0, 0.0, 0.0];
    let dup = mapped_contrastive_loss(&[2.0, 0.0, 0.0], &[&member], 1.0).unwrap();
    let orth = mapped_contrastive_loss(&[0.0, 1.0, 0.0], &[&member], 1.0).unwrap();
    assert!(orth < dup);
}

#[test]
fn cfs_size_and_determinism() {
    let g = gauss(6, 1);
    let model = ContrastiveModel::random(6, 8, 8, &mut rng(40));
    let cfg = CfsConfig {
        init_size: None,
        steps: 5,
        candidates: 7,
        keep_ratio: 0.5,
        temperature: 1.0,
    };
    assert_eq!(keep_count(7, 0.5), 4);
    assert_eq!(keep_count(8, 0.5), 4);
    let a = cfs_select(&g, &model, &cfg, 41).unwrap();
    let b = cfs_select(&g, &model, &cfg, 41).unwrap();
    assert_eq!(a.len(), 4 + 5 * 4);
    assert_eq!(a, b);
    assert_ne!(a, cfs_select(&g, &model, &cfg, 42).unwrap());
}

#[test]
fn cfs_rejects_bad_parameters() {
    let g = gauss(2, 0);
    let m = identity_model(2);
    for cfg in [
        CfsConfig {
            candidates: 0,
            ..CfsConfig::default()
        },
        CfsConfig {
            init_size: Some(0),
            ..CfsConfig::default()
        },
        CfsConfig {
            keep_ratio: 0.0,
            ..CfsConfig::default()
        },
        CfsConfig {
            keep_ratio: 1.5,
            ..CfsConfig::default()
        },
    ] {
        assert!(cfs_select(&g, &m, &cfg, 0).is_err());
    }
    assert!(cfs_select(&gauss(3, 0), &m, &CfsConfig::default(), 0).is_err());
}

#[test]
fn selected_sets_are_more_spread_than_random_ones() {
    let mut wins = 0;
    for seed in 0..6u64 {
        let mut r = rng(100 + seed);
        let g = ClassGaussian {
            class_id: 0,
            mean: (0..16).map(|_| 0.3).collect(),
            std: vec![0.5; 16],
            count: 200,
        };
        let train = g.sample(128, &mut r);
        let cfg = ContrastiveConfig {
            hidden: 32,
            epochs: 20,
            ..ContrastiveConfig::default()
        };
        let (model, _) = train_contrastive(&train, &cfg, seed).unwrap();
        let sel = cfs_select(&g, &model, &CfsConfig::default(), seed).unwrap();
        let rand = g.sample(sel.len(), &mut r);
        let a = mean_pairwise_cosine(&model, &sel.to_tensor().unwrap()).unwrap();
        let b = mean_pairwise_cosine(&model, &rand).unwrap();
        wins += usize::from(a < b);
    }
    assert!(wins >= 5, "{wins}/6");
}

#[test]
fn feature_csv_has_class_column() {
    let set = FeatureSet {
        class_id: 4,
        features: vec![vec![1.0, 2.0], vec![0.5, -0.25]],
        provenance: vec![Provenance::Sampled, Provenance::Selected],
    };
    let mut buf = Vec::new();
    write_feature_csv(&mut buf, &[set]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class_id,provenance,f0,f1");
    assert!(lines[1].starts_with("4,sampled,1.0"));
    assert!(lines[2].starts_with("4,selected,5.0"));
    assert_eq!(lines.len(), 3);
    assert!(!text.contains('\r'));
}
