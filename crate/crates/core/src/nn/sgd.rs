use crate::error::{config, Result};
use crate::tensor::Tensor;

/// A trainable tensor with its gradient and momentum buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum_buf: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum_buf = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            momentum_buf,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub subdivisions: usize,
    pub iterations: usize,
    pub input_size: usize,
    pub channels: usize,
}

impl TrainConfig {
    /// The full-scale training parameters (416 px input, 10k iterations).
    pub fn full_scale() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            decay: 0.0005,
            batch_size: 64,
            subdivisions: 4,
            iterations: 10_000,
            input_size: 416,
            channels: 3,
        }
    }

    /// Small settings that train on a laptop CPU in minutes.
    pub fn desk() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 4,
            subdivisions: 1,
            iterations: 3000,
            input_size: 128,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return config("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config("momentum must lie in [0, 1)");
        }
        if !(self.decay >= 0.0) {
            return config("decay must be non-negative");
        }
        if self.batch_size == 0 || self.subdivisions == 0 || self.iterations == 0 {
            return config("batch_size, subdivisions and iterations must be positive");
        }
        if self.batch_size % self.subdivisions != 0 {
            return config(format!(
                "batch_size {} is not divisible by subdivisions {}",
                self.batch_size, self.subdivisions
            ));
        }
        if self.input_size == 0 || self.channels == 0 {
            return config("input_size and channels must be positive");
        }
        Ok(())
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size / self.subdivisions
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

/// Momentum SGD with L2 weight decay folded into the gradient:
/// `buf = momentum * buf - lr * (grad + decay * value); value += buf`.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Param>, cfg: &TrainConfig) {
    let (lr, mu, decay) = (cfg.learning_rate, cfg.momentum, cfg.decay);
    for p in params {
        let values = p.value.data_mut();
        let bufs = p.momentum_buf.data_mut();
        for ((v, b), &g) in values.iter_mut().zip(bufs.iter_mut()).zip(p.grad.data()) {
            *b = mu * *b - lr * (g + decay * *v);
            *v += *b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64, grad: f64) -> Param {
        let mut p = Param::new(Tensor::filled(&[1], value));
        p.grad.fill(grad);
        p
    }

    fn cfg(lr: f64, momentum: f64, decay: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum,
            decay,
            ..TrainConfig::full_scale()
        }
    }

    #[test]
    fn plain_step() {
        let mut p = scalar(1.0, 1.0);
        sgd_step([&mut p], &cfg(0.1, 0.0, 0.0));
        assert_eq!(p.value.data(), &[0.9]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar(0.37, 0.0);
        sgd_step([&mut p], &cfg(0.5, 0.9, 0.0));
        assert_eq!(p.value.data(), &[0.37]);
    }

    #[test]
    fn two_momentum_steps_follow_recurrence() {
        // Hand-evaluated: buf1 = -0.001*(1 + 0.0005*1) = -0.0010005, value1 = 0.9989995;
        // buf2 = 0.9*buf1 - 0.001*(1 + 0.0005*value1) = -0.00190094949975,
        // value2 = 0.99709855050025.
        let mut p = scalar(1.0, 1.0);
        let c = cfg(0.001, 0.9, 0.0005);
        sgd_step([&mut p], &c);
        assert!((p.value.data()[0] - 0.998_999_5).abs() < 1e-15);
        assert!((p.momentum_buf.data()[0] + 0.001_000_5).abs() < 1e-15);
        sgd_step([&mut p], &c);
        assert!((p.momentum_buf.data()[0] + 0.001_900_949_499_75).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.997_098_550_500_25).abs() < 1e-15);
    }

    #[test]
    fn no_momentum_no_decay_is_gradient_descent() {
        let values = [0.3, -1.2, 4.0, 0.0];
        let grads = [1.5, -0.25, 0.0, 3.0];
        let mut p = Param::new(Tensor::from_vec(&[4], values.to_vec()).unwrap());
        p.grad = Tensor::from_vec(&[4], grads.to_vec()).unwrap();
        sgd_step([&mut p], &cfg(0.05, 0.0, 0.0));
        for i in 0..4 {
            assert_eq!(p.value.data()[i], values[i] + (0.0 - 0.05 * grads[i]));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::full_scale().validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 10,
            subdivisions: 4,
            ..TrainConfig::full_scale()
        };
        assert!(bad.validate().is_err());
        assert!(cfg(0.0, 0.9, 0.0).validate().is_err());
        assert!(cfg(0.1, 1.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 0.5, -1.0).validate().is_err());
    }
}
