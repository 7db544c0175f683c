//! Adam with step/exponential learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrScheduler {
    StepLR,
    ExponentialLR,
}

/// Learning rate as a function of the number of completed steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` every `step_size` steps.
    Step { step_size: usize, gamma: f64 },
    /// `lr * gamma^steps`.
    Exponential { gamma: f64 },
}

pub const STEP_LR_GAMMA: f64 = 0.1;

impl LrSchedule {
    pub fn factor(&self, steps: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Step { step_size, gamma } => gamma.powi((steps / step_size.max(1)) as i32),
            LrSchedule::Exponential { gamma } => gamma.powi(steps.min(i32::MAX as usize) as i32),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    steps: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, schedule: LrSchedule) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        self.lr * self.schedule.factor(self.steps)
    }

    /// Applies one update using the gradients stored on the tensors, then
    /// clears them. Parameters without a gradient count as zero-gradient.
    pub fn step(&mut self, params: &mut ParamStore) {
        let lr = self.current_lr();
        let tensors = params.tensors_mut();
        if self.m.len() != tensors.len() {
            self.m = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for ((t, m), v) in tensors.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; m.len()]);
            for (((p, g), mi), vi) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            t.zero_grad();
        }
    }
}
