use crate::netcore::Tensor;

/// Sum of squared horizontal and vertical neighbour differences per grid,
/// averaged over the batch. Tensors without a grid annotation give 0.
pub fn total_variation(x: &Tensor) -> f64 {
    total_variation_with_grad(x).0
}

pub(crate) fn total_variation_with_grad(x: &Tensor) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; x.len()];
    let Some((h, w)) = x.grid() else {
        return (0.0, grad);
    };
    let n = x.rows();
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for s in 0..n {
        let base = s * h * w;
        let g = &x.data()[base..base + h * w];
        for r in 0..h {
            for c in 0..w {
                let here = r * w + c;
                if c + 1 < w {
                    let d = g[here + 1] - g[here];
                    total += d * d;
                    grad[base + here + 1] += 2.0 * d * scale;
                    grad[base + here] -= 2.0 * d * scale;
                }
                if r + 1 < h {
                    let d = g[here + w] - g[here];
                    total += d * d;
                    grad[base + here + w] += 2.0 * d * scale;
                    grad[base + here] -= 2.0 * d * scale;
                }
            }
        }
    }
    (total * scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_grid_is_zero() {
        let x = Tensor::new(vec![2, 3, 3], vec![0.7; 18]).unwrap();
        assert_eq!(total_variation(&x), 0.0);
    }

    #[test]
    fn one_by_two() {
        let x = Tensor::new(vec![1, 1, 2], vec![0.25, 2.0]).unwrap();
        assert!((total_variation(&x) - 1.75f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn flat_input_is_zero() {
        let x = Tensor::matrix(2, 4, vec![1.0, -1.0, 3.0, 0.0, 2.0, 2.0, 5.0, 1.0]).unwrap();
        assert_eq!(total_variation(&x), 0.0);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![2, 4, 4], data.clone()).unwrap();
        let mut brute = 0.0;
        for s in 0..2 {
            let at = |r: usize, c: usize| data[s * 16 + r * 4 + c];
            for r in 0..4 {
                for c in 0..4 {
                    if c < 3 {
                        brute += (at(r, c + 1) - at(r, c)).powi(2);
                    }
                    if r < 3 {
                        brute += (at(r + 1, c) - at(r, c)).powi(2);
                    }
                }
            }
        }
        brute /= 2.0;
        assert!((total_variation(&x) - brute).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![2, 3, 3], data).unwrap();
        let (_, g) = total_variation_with_grad(&x);
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += 1e-6;
            let mut m = x.clone();
            m.data_mut()[i] -= 1e-6;
            let fd = (total_variation(&p) - total_variation(&m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }
}
