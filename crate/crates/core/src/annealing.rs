//! Inverse-temperature schedules for the tempered target `p(z, x)^t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheduler {
    /// Constant increments `(1 - t0)/K`. Also accepted as `fixed` / `linear`.
    #[serde(alias = "fixed", alias = "linear", alias = "Fixed")]
    Linear,
    #[serde(alias = "adaann", alias = "ADAANN")]
    AdaAnn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealingState {
    pub t: f64,
    pub scheduler: Scheduler,
    pub t0: f64,
    pub tol: f64,
    pub m: usize,
    pub k: usize,
    pub t_0: usize,
    pub t_mid: usize,
    pub t_1: usize,
    pub n: usize,
    pub n_1: usize,
}

impl AnnealingState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scheduler: Scheduler,
        t0: f64,
        tol: f64,
        m: usize,
        k: usize,
        t_0: usize,
        t_mid: usize,
        t_1: usize,
        n: usize,
        n_1: usize,
    ) -> Result<Self> {
        if !(t0 > 0.0 && t0 <= 1.0) {
            return Err(Error::Config(format!("t0 must lie in (0, 1] (got {t0})")));
        }
        match scheduler {
            Scheduler::AdaAnn => {
                if !(tol > 0.0) || !tol.is_finite() {
                    return Err(Error::Config(format!("tol must be positive (got {tol})")));
                }
                if m < 2 {
                    return Err(Error::Config(format!("M must be at least 2 (got {m})")));
                }
            }
            Scheduler::Linear => {
                if k == 0 {
                    return Err(Error::Config("K must be at least 1".into()));
                }
            }
        }
        if n == 0 || n_1 == 0 {
            return Err(Error::Config("annealing batch sizes N and N_1 must be positive".into()));
        }
        Ok(Self {
            t: t0,
            scheduler,
            t0,
            tol,
            m,
            k,
            t_0,
            t_mid,
            t_1,
            n,
            n_1,
        })
    }

    pub fn is_final(&self) -> bool {
        self.t >= 1.0
    }

    /// `(updates at this temperature, batch size)`.
    pub fn schedule_params(&self) -> (usize, usize) {
        if self.t >= 1.0 {
            (self.t_1, self.n_1)
        } else if self.t == self.t0 {
            (self.t_0, self.n)
        } else {
            (self.t_mid, self.n)
        }
    }

    pub fn linear_next(&mut self) -> f64 {
        self.t = linear_next(self.t, self.t0, self.k);
        self.t
    }

    pub fn adaann_next(&mut self, log_p_values: &[f64]) -> Result<f64> {
        self.t = adaann_next(self.t, self.tol, log_p_values)?;
        Ok(self.t)
    }
}

pub fn linear_next(t: f64, t0: f64, k: usize) -> f64 {
    if t >= 1.0 {
        return 1.0;
    }
    let next = t + (1.0 - t0) / k as f64;
    // absorb accumulated rounding so K steps land on exactly 1.0
    if next >= 1.0 - 1e-12 {
        1.0
    } else {
        next
    }
}

/// `eps = tol / sqrt(var)` with the unbiased sample variance of `log_p_values`.
pub fn adaann_step(tol: f64, log_p_values: &[f64]) -> Result<f64> {
    let n = log_p_values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 log-density values (got {n})")));
    }
    if log_p_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-density sample for the annealing step".into()));
    }
    let mean = log_p_values.iter().sum::<f64>() / n as f64;
    let var = log_p_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(Error::DegenerateAnnealing { samples: n });
    }
    Ok(tol / var.sqrt())
}

pub fn adaann_next(t: f64, tol: f64, log_p_values: &[f64]) -> Result<f64> {
    if t >= 1.0 {
        return Ok(1.0);
    }
    Ok((t + adaann_step(tol, log_p_values)?).min(1.0))
}
