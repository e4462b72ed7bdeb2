//! Adaptive-moment (Adam) updates with bias correction.

use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        }
    }

    /// One update of `var` in place. Moments are sized on the first call.
    pub fn step(&mut self, var: &mut [f64], grad: &[f64]) -> Result<()> {
        if var.len() != grad.len() {
            return Err(Error::Shape(format!(
                "variable has {} entries but gradient has {}",
                var.len(),
                grad.len()
            )));
        }
        if self.step_count == 0 && self.first_moment.is_empty() {
            self.first_moment = vec![0.0; var.len()];
            self.second_moment = vec![0.0; var.len()];
        } else if self.first_moment.len() != var.len() {
            return Err(Error::Shape(format!(
                "optimizer state tracks {} entries, variable has {}",
                self.first_moment.len(),
                var.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((v, g), m), s) in var
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *s = self.beta2 * *s + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let s_hat = *s / c2;
            *v -= self.lr * m_hat / (s_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn optimizer_step(var: &mut Tensor, grad: &Tensor, state: &mut OptimizerState) -> Result<()> {
    if var.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "variable shape {:?} vs gradient shape {:?}",
            var.shape(),
            grad.shape()
        )));
    }
    state.step(var.data_mut(), grad.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_variable() {
        let mut v = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let mut st = OptimizerState::adam(0.1);
        optimizer_step(&mut v, &Tensor::zeros(vec![2]), &mut st).unwrap();
        assert_eq!(v.data(), &[1.0, -2.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_is_normalized() {
        let mut v = vec![0.0, 0.0, 0.0];
        let g = [3.0, -0.5, 1e-3];
        let mut st = OptimizerState::adam(0.01);
        st.step(&mut v, &g).unwrap();
        for (vi, gi) in v.iter().zip(&g) {
            let expect = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((vi - expect).abs() < 1e-9, "{vi} vs {expect}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut st = OptimizerState::adam(0.1);
        assert!(st.step(&mut [0.0; 2], &[0.0; 3]).is_err());
        st.step(&mut [0.0; 2], &[1.0; 2]).unwrap();
        assert!(st.step(&mut [0.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn minimizes_square() {
        // Scalar oracle: f(v) = v^2, f'(v) = 2v.
        let mut v = [1.0];
        let mut st = OptimizerState::adam(0.1);
        for _ in 0..100 {
            let g = [2.0 * v[0]];
            st.step(&mut v, &g).unwrap();
        }
        assert!(v[0].abs() < 0.05, "v = {}", v[0]);
    }
}

/// One Adam state per trainable tensor of a [`Network`](super::Network).
#[derive(Clone, Debug)]
pub struct NetOptimizer {
    layers: Vec<Option<(OptimizerState, OptimizerState)>>,
    head: (OptimizerState, OptimizerState),
    train_backbone: bool,
    train_head: bool,
}

impl NetOptimizer {
    pub fn new(net: &super::Network, lr: f64) -> Self {
        Self {
            layers: net
                .backbone
                .layers
                .iter()
                .map(|l| {
                    l.as_dense()
                        .map(|_| (OptimizerState::adam(lr), OptimizerState::adam(lr)))
                })
                .collect(),
            head: (OptimizerState::adam(lr), OptimizerState::adam(lr)),
            train_backbone: true,
            train_head: true,
        }
    }

    /// Restricts which parts of the network the optimizer touches.
    pub fn with_trainable(mut self, backbone: bool, head: bool) -> Self {
        self.train_backbone = backbone;
        self.train_head = head;
        self
    }

    pub fn step(&mut self, net: &mut super::Network, grads: &super::ParamGrads) -> Result<()> {
        if self.train_backbone {
            for ((layer, state), g) in net
                .backbone
                .layers
                .iter_mut()
                .zip(self.layers.iter_mut())
                .zip(&grads.layers)
            {
                if let (Some(d), Some((sw, sb)), Some(g)) = (layer.as_dense_mut(), state, g) {
                    optimizer_step(&mut d.weight, &g.weight, sw)?;
                    optimizer_step(&mut d.bias, &g.bias, sb)?;
                }
            }
        }
        if self.train_head && net.head.classes() > 0 {
            let linear = net.head.mode() == super::HeadMode::Linear;
            let (w, b) = net.head.params_mut();
            self.head.0.step(w, &grads.head.weight)?;
            if linear {
                self.head.1.step(b, &grads.head.bias)?;
            }
            net.head.renormalize_anchors();
        }
        Ok(())
    }
}
