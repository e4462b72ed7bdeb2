use crate::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Batches are stored with the sample index as the leading dimension. A
/// rank-3 tensor `[n, h, w]` is treated as a batch of `h x w` grids; every
/// other operation only looks at the flattened per-sample length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Batch `[n, d]` from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows have unequal lengths".into()));
        }
        Self::matrix(n, d, rows.concat())
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Flattened length of one sample.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.row_len();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.row_len();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.row_len().max(1))
    }

    /// Grid size `(h, w)` when the tensor is a batch of 2D grids.
    pub fn grid(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [_, h, w] => Some((*h, *w)),
            _ => None,
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Same data viewed as `[rows, row_len]`.
    pub fn flatten_rows(&self) -> Tensor {
        Tensor::from_raw(vec![self.rows(), self.row_len()], self.data.clone())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let d = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor::from_raw(shape, data)
    }

    /// Stack batches along the leading dimension.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} onto {:?}",
                    p.shape, first.shape
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor::from_raw(shape, data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, s: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out[n, m] = x[n, k] * w[m, k]^T`
pub(crate) fn matmul_nt(x: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let xi = &x[i * k..(i + 1) * k];
        let oi = &mut out[i * m..(i + 1) * m];
        for (j, o) in oi.iter_mut().enumerate() {
            *o = dot(xi, &w[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `out[n, k] = g[n, m] * w[m, k]`
pub(crate) fn matmul_nn(g: &[f64], w: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let oi = &mut out[i * k..(i + 1) * k];
        for j in 0..m {
            let gij = g[i * m + j];
            if gij == 0.0 {
                continue;
            }
            for (o, wv) in oi.iter_mut().zip(&w[j * k..(j + 1) * k]) {
                *o += gij * wv;
            }
        }
    }
    out
}

/// `out[m, k] = g[n, m]^T * x[n, k]`
pub(crate) fn matmul_tn(g: &[f64], x: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..n {
        let xi = &x[i * k..(i + 1) * k];
        for j in 0..m {
            let gij = g[i * m + j];
            if gij == 0.0 {
                continue;
            }
            for (o, xv) in out[j * k..(j + 1) * k].iter_mut().zip(xi) {
                *o += gij * xv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_nonfinite() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn grid_rows() {
        let t = Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(t.grid(), Some((2, 3)));
        assert_eq!(t.row_len(), 6);
        assert_eq!(t.row(1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn matmuls_agree() {
        // x: 2x3, w: 4x3
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 2.0];
        let w: Vec<f64> = (0..12).map(|v| v as f64 * 0.1 - 0.4).collect();
        let y = matmul_nt(&x, &w, 2, 3, 4);
        for i in 0..2 {
            for j in 0..4 {
                let e: f64 = (0..3).map(|k| x[i * 3 + k] * w[j * 3 + k]).sum();
                assert!((y[i * 4 + j] - e).abs() < 1e-12);
            }
        }
        let g = [1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 0.5, 0.5];
        let gx = matmul_nn(&g, &w, 2, 4, 3);
        let gw = matmul_tn(&g, &x, 2, 4, 3);
        for i in 0..2 {
            for k in 0..3 {
                let e: f64 = (0..4).map(|j| g[i * 4 + j] * w[j * 3 + k]).sum();
                assert!((gx[i * 3 + k] - e).abs() < 1e-12);
            }
        }
        for j in 0..4 {
            for k in 0..3 {
                let e: f64 = (0..2).map(|i| g[i * 4 + j] * x[i * 3 + k]).sum();
                assert!((gw[j * 3 + k] - e).abs() < 1e-12);
            }
        }
    }
}
