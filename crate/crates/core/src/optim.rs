//! Adam, SGD with momentum, and per-epoch learning-rate schedules.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn check_congruent(params: &[&mut Matrix], grads: &[&Matrix], op: &'static str) -> Result<()> {
    if params.len() != grads.len()
        || params
            .iter()
            .zip(grads)
            .any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::shape(op, "gradients do not match the parameters"));
    }
    Ok(())
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.001)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        check_congruent(params, grads, "adam_step")?;
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len()
            || self
                .m
                .iter()
                .zip(grads)
                .any(|(m, g)| m.shape() != g.shape())
        {
            return Err(Error::shape("adam_step", "moment buffers do not match"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let p = p.data_mut();
            let g = g.data();
            let m = m.data_mut();
            let v = v.data_mut();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        check_congruent(params, grads, "sgd_step")?;
        if self.velocity.is_empty() {
            self.velocity = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if v.shape() != g.shape() {
                return Err(Error::shape("sgd_step", "velocity buffers do not match"));
            }
            for ((vk, &gk), pk) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vk = self.momentum * *vk + gk;
                *pk -= self.lr * *vk;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Adam(a) => a.lr = lr,
            Optimizer::Sgd(s) => s.lr = lr,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` once for every milestone epoch already reached.
    StepDecay {
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Half-cosine from the base rate at epoch 0 to zero at `total_epochs`.
    Cosine {
        total_epochs: usize,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::StepDecay { milestones, factor } => {
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config(format!(
                        "milestones must be strictly increasing, got {milestones:?}"
                    )));
                }
                if factor.is_nan() || *factor <= 0.0 {
                    return Err(Error::config("decay factor must be positive"));
                }
                Ok(())
            }
            LrSchedule::Cosine { total_epochs: 0 } => Err(Error::config(
                "cosine schedule needs a positive epoch count",
            )),
            _ => Ok(()),
        }
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::StepDecay { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                base * factor.powi(passed as i32)
            }
            LrSchedule::Cosine { total_epochs } => {
                let t = (epoch as f64 / *total_epochs as f64).min(1.0);
                0.5 * base * (1.0 + (PI * t).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[[v]])
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]);
        let g = Matrix::zeros(1, 2);
        let mut adam = Adam::default();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, Matrix::from_rows(&[[1.0, -2.0]]));
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut p = scalar(0.0);
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], &[&scalar(1.0)]).unwrap();
        let want = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.get(0, 0) - want).abs() < 1e-18);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = scalar(0.0);
        let mut adam = Adam::default();
        assert!(adam.step(&mut [&mut p], &[&Matrix::zeros(1, 2)]).is_err());
        adam.step(&mut [&mut p], &[&scalar(1.0)]).unwrap();
        let mut q = Matrix::zeros(2, 2);
        assert!(adam.step(&mut [&mut q], &[&Matrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn sgd_recurrences() {
        let mut p = scalar(1.0);
        let mut sgd = Sgd::new(0.1, 0.0);
        sgd.step(&mut [&mut p], &[&scalar(2.0)]).unwrap();
        assert!((p.get(0, 0) - 0.8).abs() < 1e-15);

        let mut z = scalar(3.0);
        Sgd::new(0.1, 0.9)
            .step(&mut [&mut z], &[&scalar(0.0)])
            .unwrap();
        assert_eq!(z.get(0, 0), 3.0);

        // g = 1, 2, 3 with momentum 0.5, lr 0.1:
        // v = 1, 2.5, 4.25; p = 0 - 0.1 - 0.25 - 0.425 = -0.775
        let mut p = scalar(0.0);
        let mut sgd = Sgd::new(0.1, 0.5);
        for g in [1.0, 2.0, 3.0] {
            sgd.step(&mut [&mut p], &[&scalar(g)]).unwrap();
        }
        assert!((p.get(0, 0) + 0.775).abs() < 1e-14);
    }

    #[test]
    fn step_decay_protocol() {
        let s = LrSchedule::StepDecay {
            milestones: vec![50, 75],
            factor: 0.1,
        };
        assert_eq!(s.lr_at(0.1, 0), 0.1);
        assert!((s.lr_at(0.1, 60) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(0.1, 80) - 0.001).abs() < 1e-15);
        let lrs: Vec<f64> = (0..100).map(|e| s.lr_at(0.1, e)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(LrSchedule::StepDecay {
            milestones: vec![75, 50],
            factor: 0.1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn cosine_endpoints() {
        let s = LrSchedule::Cosine { total_epochs: 100 };
        assert_eq!(s.lr_at(0.1, 0), 0.1);
        assert!(s.lr_at(0.1, 100) < 1e-17);
        assert!((s.lr_at(0.1, 50) - 0.05).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.lr_at(0.3, 42), 0.3);
    }
}
