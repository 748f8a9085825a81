//! Parameter update rules driven by an externally scheduled learning rate.

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd {
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
    },
    RmsProp {
        decay: f64,
        epsilon: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        Self::Sgd { momentum, weight_decay }
    }

    pub fn adam(weight_decay: f64) -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    pub fn rmsprop(weight_decay: f64) -> Self {
        Self::RmsProp {
            decay: 0.99,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    pub fn weight_decay(&self) -> f64 {
        match *self {
            Self::Sgd { weight_decay, .. } | Self::Adam { weight_decay, .. } | Self::RmsProp { weight_decay, .. } => {
                weight_decay
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd { .. } => "sgd",
            Self::Adam { .. } => "adam",
            Self::RmsProp { .. } => "rmsprop",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Sgd { momentum, weight_decay } => (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            Self::Adam {
                beta1,
                beta2,
                epsilon,
                weight_decay,
            } => (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0 && weight_decay >= 0.0,
            Self::RmsProp {
                decay,
                epsilon,
                weight_decay,
            } => (0.0..1.0).contains(&decay) && epsilon > 0.0 && weight_decay >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgs(format!(
                "optimizer hyperparameters out of range: {self:?}"
            )))
        }
    }
}

/// Optimizer with its accumulators. Buffers are allocated on the first step
/// and shaped like the network's [`Network::parameter_slices_mut`] list.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn reset(&mut self) {
        self.first.clear();
        self.second.clear();
        self.steps = 0;
    }

    /// First-moment / momentum buffers (empty before the first step).
    pub fn momentum_buffers(&self) -> &[Vec<T>] {
        &self.first
    }

    /// Applies one update. Gradients at pruned positions must already be
    /// zero; pruned weights are re-zeroed afterwards regardless.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgs(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        let grad_slices = grads.slices();
        let mut params = net.parameter_slices_mut();
        if grad_slices.len() != params.len() || grad_slices.iter().zip(&params).any(|(g, (p, _))| g.len() != p.len()) {
            return Err(Error::InvalidShape("gradients do not match network parameters".into()));
        }
        if grad_slices.iter().any(|g| g.iter().any(|v| v.is_nan())) {
            return Err(Error::NumericFault("NaN in gradients".into()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(p, _)| vec![T::zero(); p.len()]).collect();
            if !matches!(self.kind, OptimizerKind::Sgd { .. }) {
                self.second = self.first.clone();
            }
        } else if self.first.len() != params.len() {
            return Err(Error::InvalidShape(
                "optimizer state belongs to a different network".into(),
            ));
        }
        self.steps += 1;

        let lr = T::from_f64_lossy(lr);
        let wd = T::from_f64_lossy(self.kind.weight_decay());
        match self.kind {
            OptimizerKind::Sgd { momentum, .. } => {
                let mu = T::from_f64_lossy(momentum);
                for (((param, _), grad), buf) in params.iter_mut().zip(&grad_slices).zip(&mut self.first) {
                    for ((w, &g), b) in param.iter_mut().zip(grad.iter()).zip(buf.iter_mut()) {
                        let g = g + wd * *w;
                        *b = mu * *b + g;
                        *w = *w - lr * *b;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1, beta2, epsilon, ..
            } => {
                let t = self.steps as i32;
                let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                let c1 = T::from_f64_lossy(1.0 - beta1.powi(t));
                let c2 = T::from_f64_lossy(1.0 - beta2.powi(t));
                let eps = T::from_f64_lossy(epsilon);
                for ((((param, _), grad), m), v) in params
                    .iter_mut()
                    .zip(&grad_slices)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &g), m), v) in param.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g + wd * *w;
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::RmsProp { decay, epsilon, .. } => {
                let rho = T::from_f64_lossy(decay);
                let eps = T::from_f64_lossy(epsilon);
                for (((param, _), grad), v) in params.iter_mut().zip(&grad_slices).zip(&mut self.second) {
                    for ((w, &g), v) in param.iter_mut().zip(grad.iter()).zip(v.iter_mut()) {
                        let g = g + wd * *w;
                        *v = rho * *v + (T::one() - rho) * g * g;
                        *w = *w - lr * g / (v.sqrt() + eps);
                    }
                }
            }
        }
        for (param, mask) in params.iter_mut() {
            if let Some(mask) = mask {
                for (w, &alive) in param.iter_mut().zip(mask.iter()) {
                    if !alive {
                        *w = T::zero();
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn scalar_net(w: f64) -> Network<f64> {
        Network::from_layers(vec![DenseLayer::new(array![[w]], array![0.0])]).unwrap()
    }

    fn scalar_grad(net: &Network<f64>, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::zeros_like(net);
        grads.weights[0][[0, 0]] = g;
        grads
    }

    #[test]
    fn plain_sgd_step() {
        let mut net = scalar_net(1.0);
        let grads = scalar_grad(&net, 0.5);
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.0, 0.0));
        opt.step(&mut net, &grads, 0.1).unwrap();
        assert_relative_eq!(net.layers()[0].weights[[0, 0]], 0.95, epsilon = 1e-15);
    }

    #[test]
    fn momentum_recurrence_by_hand() {
        let mut net = scalar_net(0.0);
        let grads = scalar_grad(&net, 1.0);
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.9, 0.0));
        opt.step(&mut net, &grads, 0.1).unwrap();
        assert_relative_eq!(net.layers()[0].weights[[0, 0]], -0.1, epsilon = 1e-15);
        assert_relative_eq!(opt.momentum_buffers()[0][0], 1.0);
        opt.step(&mut net, &grads, 0.1).unwrap();
        assert_relative_eq!(opt.momentum_buffers()[0][0], 1.9, epsilon = 1e-15);
        assert_relative_eq!(net.layers()[0].weights[[0, 0]], -0.29, epsilon = 1e-15);
    }

    #[test]
    fn zero_lr_is_identity_for_every_optimizer() {
        for kind in [
            OptimizerKind::sgd(0.9, 1e-4),
            OptimizerKind::adam(1e-4),
            OptimizerKind::rmsprop(1e-4),
        ] {
            let mut net = Network::<f32>::new(&[3, 4, 2], true, 2).unwrap();
            let before = net.clone();
            let trace = net
                .forward(array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]].view(), crate::nn::Mode::Train)
                .unwrap();
            let grads = net.backward(&trace, &[0, 1]).unwrap();
            let mut opt = Optimizer::new(kind);
            for _ in 0..3 {
                opt.step(&mut net, &grads, 0.0).unwrap();
            }
            assert_eq!(net.layers(), before.layers(), "{kind:?}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [0.5, -3.0, 1e-3] {
            let mut net = scalar_net(0.2);
            let grads = scalar_grad(&net, g);
            let mut opt = Optimizer::new(OptimizerKind::adam(0.0));
            opt.step(&mut net, &grads, 0.01).unwrap();
            let delta = net.layers()[0].weights[[0, 0]] - 0.2;
            assert_relative_eq!(delta.abs(), 0.01, max_relative = 1e-4);
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn reset_matches_fresh_state_and_is_idempotent() {
        let mut net_a = scalar_net(1.0);
        let mut net_b = scalar_net(1.0);
        let grads = scalar_grad(&net_a, 0.3);
        let mut used = Optimizer::new(OptimizerKind::adam(0.0));
        used.step(&mut scalar_net(5.0), &grads, 0.1).unwrap();
        used.reset();
        used.reset();
        assert_eq!(used.steps(), 0);
        let mut fresh = Optimizer::new(OptimizerKind::adam(0.0));
        used.step(&mut net_a, &grads, 0.1).unwrap();
        fresh.step(&mut net_b, &grads, 0.1).unwrap();
        assert_eq!(net_a.layers(), net_b.layers());
    }

    #[test]
    fn masked_weights_stay_zero() {
        for kind in [
            OptimizerKind::sgd(0.9, 1e-2),
            OptimizerKind::adam(1e-2),
            OptimizerKind::rmsprop(1e-2),
        ] {
            let mut net = Network::<f32>::new(&[2, 3], false, 4).unwrap();
            let mut mask = Array2::from_elem((3, 2), true);
            mask[[2, 1]] = false;
            net.set_mask(0, mask).unwrap();
            let mut grads = Gradients::zeros_like(&net);
            grads.weights[0].fill(0.7);
            let mut opt = Optimizer::new(kind);
            for _ in 0..5 {
                opt.step(&mut net, &grads, 0.05).unwrap();
            }
            assert_eq!(net.layers()[0].weights[[2, 1]].to_bits(), 0);
        }
    }

    #[test]
    fn nan_gradient_is_a_numeric_fault() {
        let mut net = scalar_net(1.0);
        let grads = scalar_grad(&net, f64::NAN);
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.9, 0.0));
        assert!(matches!(opt.step(&mut net, &grads, 0.1), Err(Error::NumericFault(_))));
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut net = scalar_net(1.0);
        let other = Network::<f64>::new(&[2, 2], false, 0).unwrap();
        let grads = Gradients::zeros_like(&other);
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.0, 0.0));
        assert!(matches!(opt.step(&mut net, &grads, 0.1), Err(Error::InvalidShape(_))));
    }
}
