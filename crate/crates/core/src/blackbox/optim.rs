//! First-order training algorithms selectable through the optimizer block.
//!
//! Associated values, in block order:
//!
//! | choice  | 1             | 2             | 3                   | 4            |
//! |---------|---------------|---------------|---------------------|--------------|
//! | SGD     | learning rate | momentum      | dampening           | weight decay |
//! | Adam    | learning rate | beta1         | beta2               | weight decay |
//! | Adagrad | learning rate | lr decay      | initial accumulator | weight decay |
//! | RMSProp | learning rate | momentum      | alpha               | weight decay |
//!
//! Weight decay adds `wd * theta` to the gradient, i.e. it minimizes
//! `J(theta) + wd / 2 * |theta|^2`.

use crate::hpspace::{OptimizerBlock, OptimizerKind};

const ADAM_EPS: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-10;
const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    second: f64,
    third: f64,
    weight_decay: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

/// `grad + wd * theta`.
pub fn regularized_gradient(grad: &[f64], theta: &[f64], weight_decay: f64) -> Vec<f64> {
    grad.iter().zip(theta).map(|(g, t)| g + weight_decay * t).collect()
}

/// `J + wd / 2 * |theta|^2`, the objective whose gradient the optimizers follow.
pub fn regularized_loss(loss: f64, theta: &[f64], weight_decay: f64) -> f64 {
    loss + 0.5 * weight_decay * theta.iter().map(|t| t * t).sum::<f64>()
}

impl Optimizer {
    pub fn new(block: &OptimizerBlock, num_params: usize) -> Self {
        let [lr, second, third, weight_decay] = block.params;
        let second_moment = match block.kind {
            OptimizerKind::Adagrad => vec![third; num_params],
            _ => vec![0.0; num_params],
        };
        Optimizer {
            kind: block.kind,
            lr,
            second,
            third,
            weight_decay,
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    /// One update of `theta` given the loss gradient `grad`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(theta.len(), grad.len());
        self.step += 1;
        let t = self.step;
        let wd = self.weight_decay;
        let lr = self.lr;
        let m = &mut self.first_moment;
        let v = &mut self.second_moment;
        match self.kind {
            OptimizerKind::Sgd => {
                let (momentum, dampening) = (self.second, self.third);
                for i in 0..theta.len() {
                    let mut g = grad[i] + wd * theta[i];
                    if momentum != 0.0 {
                        m[i] = if t == 1 {
                            g
                        } else {
                            momentum * m[i] + (1.0 - dampening) * g
                        };
                        g = m[i];
                    }
                    theta[i] -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (beta1, beta2) = (self.second, self.third);
                let c1 = 1.0 - beta1.powi(t as i32);
                let c2 = 1.0 - beta2.powi(t as i32);
                for i in 0..theta.len() {
                    let g = grad[i] + wd * theta[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            OptimizerKind::Adagrad => {
                let lr_decay = self.second;
                let clr = lr / (1.0 + (t - 1) as f64 * lr_decay);
                for i in 0..theta.len() {
                    let g = grad[i] + wd * theta[i];
                    v[i] += g * g;
                    theta[i] -= clr * g / (v[i].sqrt() + ADAGRAD_EPS);
                }
            }
            OptimizerKind::RmsProp => {
                let (momentum, alpha) = (self.second, self.third);
                for i in 0..theta.len() {
                    let g = grad[i] + wd * theta[i];
                    v[i] = alpha * v[i] + (1.0 - alpha) * g * g;
                    let scaled = g / (v[i].sqrt() + RMSPROP_EPS);
                    if momentum > 0.0 {
                        m[i] = momentum * m[i] + scaled;
                        theta[i] -= lr * m[i];
                    } else {
                        theta[i] -= lr * scaled;
                    }
                }
            }
        }
    }
}
