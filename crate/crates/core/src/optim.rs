//! Parameter update rules: plain SGD (the paper's choice), SGD with
//! momentum, and Adam as an opt-in for adversarial training.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::invalid_arg;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Descend,
    Ascend,
}

/// One gradient step, in place: `p <- p -/+ lr * g`.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    lr: f64,
    direction: Direction,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(invalid_arg!("learning rate must be positive, got {lr}"));
    }
    if params.len() != grads.len() {
        return Err(invalid_arg!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        ));
    }
    let sign = match direction {
        Direction::Descend => -1.0,
        Direction::Ascend => 1.0,
    };
    for (p, g) in params.iter_mut().zip(grads) {
        if p.shape() != g.shape() {
            return Err(invalid_arg!(
                "parameter/gradient shape mismatch: {:?} vs {:?}",
                p.shape(),
                g.shape()
            ));
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv += sign * lr * gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
        momentum: f64,
        velocity: Vec<Tensor>,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Optimizer::Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// DCGAN-convention Adam (beta1 = 0.5).
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Build from a config name ("sgd" or "adam").
    pub fn from_name(name: &str, lr: f64, momentum: f64) -> Result<Self> {
        match name {
            "sgd" => Ok(Optimizer::sgd(lr, momentum)),
            "adam" => Ok(Optimizer::adam(lr)),
            other => Err(invalid_arg!("unknown optimizer '{other}'")),
        }
    }

    /// Minimization step in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr, momentum, velocity } => {
                if *momentum == 0.0 {
                    return sgd_step(params, grads, *lr, Direction::Descend);
                }
                if velocity.is_empty() {
                    *velocity = params
                        .iter()
                        .map(|p| Tensor::zeros(p.shape()).expect("valid shape"))
                        .collect();
                }
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    if p.shape() != g.shape() {
                        return Err(invalid_arg!(
                            "parameter/gradient shape mismatch: {:?} vs {:?}",
                            p.shape(),
                            g.shape()
                        ));
                    }
                    for i in 0..p.numel() {
                        let v = *momentum * vel.data()[i] + g.data()[i];
                        vel.data_mut()[i] = v;
                        p.data_mut()[i] -= *lr * v;
                    }
                }
                Ok(())
            }
            Optimizer::Adam { lr, beta1, beta2, eps, t, m, v } => {
                if m.is_empty() {
                    *m = params
                        .iter()
                        .map(|p| Tensor::zeros(p.shape()).expect("valid shape"))
                        .collect();
                    *v = m.clone();
                }
                *t += 1;
                let b1t = 1.0 - beta1.powi(*t as i32);
                let b2t = 1.0 - beta2.powi(*t as i32);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    if p.shape() != g.shape() {
                        return Err(invalid_arg!(
                            "parameter/gradient shape mismatch: {:?} vs {:?}",
                            p.shape(),
                            g.shape()
                        ));
                    }
                    for j in 0..p.numel() {
                        let gv = g.data()[j];
                        let mj = *beta1 * m[i].data()[j] + (1.0 - *beta1) * gv;
                        let vj = *beta2 * v[i].data()[j] + (1.0 - *beta2) * gv * gv;
                        m[i].data_mut()[j] = mj;
                        v[i].data_mut()[j] = vj;
                        p.data_mut()[j] -= *lr * (mj / b1t) / ((vj / b2t).sqrt() + *eps);
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_arithmetic() {
        let mut p = vec![Tensor::scalar(1.0)];
        let g = vec![Tensor::scalar(0.5)];
        sgd_step(&mut p, &g, 0.1, Direction::Descend).unwrap();
        assert!((p[0].item().unwrap() - 0.95).abs() < 1e-15);

        let mut p = vec![Tensor::scalar(1.0)];
        sgd_step(&mut p, &g, 0.1, Direction::Ascend).unwrap();
        assert!((p[0].item().unwrap() - 1.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = vec![Tensor::scalar(1.0)];
        let g = vec![Tensor::scalar(0.5)];
        assert!(sgd_step(&mut p, &g, 0.0, Direction::Descend).is_err());
        let g2 = vec![Tensor::zeros(&[2]).unwrap()];
        assert!(sgd_step(&mut p, &g2, 0.1, Direction::Descend).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        // f(p) = (p-3)^2, gradient 2(p-3).
        let mut p = vec![Tensor::scalar(0.0)];
        for _ in 0..100 {
            let g = vec![Tensor::scalar(2.0 * (p[0].item().unwrap() - 3.0))];
            sgd_step(&mut p, &g, 0.1, Direction::Descend).unwrap();
        }
        assert!((p[0].item().unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn adam_also_converges_on_quadratic() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut opt = Optimizer::adam(0.3);
        for _ in 0..300 {
            let g = vec![Tensor::scalar(2.0 * (p[0].item().unwrap() - 3.0))];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0].item().unwrap() - 3.0).abs() < 1e-3);
    }
}
