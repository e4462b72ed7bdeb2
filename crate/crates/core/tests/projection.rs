mod common;

use common::*;
use invercl::netcore::Tensor;
use invercl::projection::*;
use proptest::prelude::*;
use rand::Rng;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    unit((0..d).map(|_| r.random_range(-1.0..1.0)).collect())
}

fn to_mat(t: &Tensor) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(t.rows(), t.row_len(), t.data())
}

#[test]
fn same_vector_gives_identity() {
    let u = random_unit(&mut rng(1), 5);
    let r = rotation_between(&u, &u).unwrap();
    assert!((to_mat(&r) - nalgebra::DMatrix::identity(5, 5)).amax() < 1e-12);
}

#[test]
fn quarter_turn_in_three_dimensions() {
    let r = to_mat(&rotation_between(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap());
    let expect =
        nalgebra::DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    assert!((r - expect).amax() < 1e-12);
}

#[test]
fn eighth_turn_maps_and_is_orthogonal() {
    let s = 0.5f64.sqrt();
    let v = [s, s, 0.0, 0.0];
    let r = to_mat(&rotation_between(&[1.0, 0.0, 0.0, 0.0], &v).unwrap());
    let ru = &r * nalgebra::DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]);
    assert!((ru - nalgebra::DVector::from_row_slice(&v)).amax() < 1e-12);
    assert!((r.transpose() * &r - nalgebra::DMatrix::identity(4, 4)).amax() < 1e-9);
}

#[test]
fn antipodal_vectors_are_ambiguous() {
    let u = random_unit(&mut rng(2), 6);
    let v: Vec<f64> = u.iter().map(|x| -x).collect();
    assert!(matches!(
        rotation_between(&u, &v),
        Err(invercl::Error::AmbiguousRotation)
    ));
}

#[test]
fn rejects_non_unit_or_mismatched_inputs() {
    assert!(rotation_between(&[2.0, 0.0], &[0.0, 1.0]).is_err());
    assert!(rotation_between(&[1.0, 0.0], &[0.0, 0.0, 1.0]).is_err());
}

#[test]
fn random_rotations_fix_complement_and_have_unit_determinant() {
    let mut r = rng(3);
    for _ in 0..20 {
        let (u, v) = (random_unit(&mut r, 10), random_unit(&mut r, 10));
        let m = to_mat(&rotation_between(&u, &v).unwrap());
        let (uu, vv) = (
            nalgebra::DVector::from_row_slice(&u),
            nalgebra::DVector::from_row_slice(&v),
        );
        assert!((&m * &uu - &vv).amax() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-6);
        // project a random vector onto the complement of span{u, v}
        let basis = nalgebra::DMatrix::from_columns(&[uu.clone(), vv.clone()]);
        let q = basis.qr().q();
        let mut w = nalgebra::DVector::from_fn(10, |_, _| r.random_range(-1.0..1.0));
        let proj = &q * (q.transpose() * &w);
        w -= proj;
        assert!((&m * &w - &w).amax() < 1e-9);
    }
}

#[test]
fn pseudo_feature_extremes() {
    let u = [1.0, 0.0, 0.0];
    let v = [0.0, 0.6, 0.8];
    let map = RotationMap::between(0, &u, 1, &v, 1.0).unwrap();
    let o = [0.3, -0.2, 0.9];
    assert_eq!(map.pseudo_feature(&o, &v).unwrap(), v.to_vec());
    let o = unit(vec![0.3, -0.2, 0.9]);
    let map0 = RotationMap { alpha: 0.0, ..map };
    let rotated = map0.apply(&o).unwrap();
    let p = map0.pseudo_feature(&o, &v).unwrap();
    for (a, b) in p.iter().zip(&rotated) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pseudo_feature_symmetric_blend() {
    let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let p = pseudo_feature(&eye, &[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
    let s = 0.5f64.sqrt();
    assert!((p[0] - s).abs() < 1e-12 && (p[1] - s).abs() < 1e-12);
}

#[test]
fn pseudo_feature_degenerate_blend() {
    let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(matches!(
        pseudo_feature(&eye, &[-1.0, 0.0], &[1.0, 0.0], 0.5),
        Err(invercl::Error::DegenerateBlend)
    ));
    assert!(pseudo_feature(&eye, &[1.0, 0.0], &[0.0, 1.0], 1.5).is_err());
}

#[test]
fn most_similar_orders_by_cosine() {
    let anchors = vec![
        vec![1.0, 0.0],
        vec![0.9, 0.1],
        vec![0.0, 1.0],
        vec![0.7, 0.7],
    ];
    assert_eq!(most_similar(&anchors, 0, &[0, 1, 2, 3], 2), vec![1, 3]);
    assert_eq!(most_similar(&anchors, 2, &[0, 1], 5), vec![1, 0]);
}

proptest! {
    #[test]
    fn rotation_preserves_norms(seed in 0u64..10_000, d in 2usize..12) {
        let mut r = rng(seed);
        let (u, v) = (random_unit(&mut r, d), random_unit(&mut r, d));
        prop_assume!(u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() > -0.999);
        let map = RotationMap::between(0, &u, 1, &v, 0.1).unwrap();
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let rx = map.apply(&x).unwrap();
        let n0 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let n1 = rx.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() < 1e-9);
        let p = map.pseudo_feature(&x, &v).unwrap();
        prop_assert!((p.iter().map(|a| a * a).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        let back = RotationMap::between(1, &v, 0, &u, 0.1).unwrap();
        let uu = back.apply(&map.apply(&u).unwrap()).unwrap();
        for (a, b) in uu.iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
