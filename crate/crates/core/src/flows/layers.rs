use rand::Rng;

use super::made::{uniform_init, Activation, MadeNetwork};
use crate::error::Result;
use crate::graph::{Tape, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};

/// Output of one layer on the tape: transformed batch and per-sample
/// `log|det J|` as a `batch x 1` column.
pub struct LayerOutput {
    pub z: Var,
    pub log_det: Var,
}

/// Masked autoregressive block. In the sampling direction
/// `z_out = (z_in - mu(z_in)) * exp(-alpha(z_in))`, a single pass with
/// `log|det| = -sum(alpha)`. The inverse needs one pass per coordinate.
#[derive(Clone, Debug)]
pub struct MafBlock {
    made: MadeNetwork,
}

impl MafBlock {
    pub fn new(made: MadeNetwork) -> Self {
        Self { made }
    }

    pub fn made(&self) -> &MadeNetwork {
        &self.made
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<LayerOutput> {
        let (mu, alpha) = self.made.forward(tape, bound, x)?;
        let centered = tape.sub(x, mu)?;
        let neg_alpha = tape.neg(alpha)?;
        let scale = tape.exp(neg_alpha)?;
        let z = tape.mul(centered, scale)?;
        let rows = tape.sum_axis(neg_alpha, 1)?;
        Ok(LayerOutput { z, log_det: rows })
    }

    pub fn inverse(&self, params: &ParamStore, y: &Tensor) -> Result<Tensor> {
        let d = self.made.dim();
        let mut x = Tensor::zeros(y.shape());
        for _ in 0..d {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let xv = tape.constant(x.clone());
            let (mu, alpha) = self.made.forward(&mut tape, &bound, xv)?;
            let (mu, alpha) = (tape.value(mu), tape.value(alpha));
            for (i, xi) in x.data_mut().iter_mut().enumerate() {
                *xi = y.data()[i] * alpha.data()[i].exp() + mu.data()[i];
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// Affine coupling block. One half of the coordinates passes through; the
/// other half becomes `z * exp(alpha) + mu` with `mu, alpha` computed from the
/// fixed half.
#[derive(Clone, Debug)]
pub struct RealNvpBlock {
    dim: usize,
    split: usize,
    /// Odd blocks transform the leading coordinates instead of the trailing ones.
    flipped: bool,
    activation: Activation,
    trunk: Vec<Dense>,
    mu_head: Dense,
    alpha_head: Dense,
}

impl RealNvpBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        dim: usize,
        flipped: bool,
        hidden_size: usize,
        n_hidden: usize,
        activation: Activation,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let split = dim / 2;
        let (n_fixed, n_moving) = if flipped { (dim - split, split) } else { (split, dim - split) };
        let mut trunk = Vec::new();
        let mut fan_in = n_fixed;
        for l in 0..n_hidden {
            let w = uniform_init(rng, fan_in, hidden_size);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let b: Vec<f64> = (0..hidden_size).map(|_| rng.random_range(-bound..=bound)).collect();
            trunk.push(Dense {
                weight: store.add(format!("{prefix}.hidden{l}.weight"), w),
                bias: store.add(format!("{prefix}.hidden{l}.bias"), Tensor::row(b)),
            });
            fan_in = hidden_size;
        }
        let mut head = |name: &str| Dense {
            weight: store.add(format!("{prefix}.{name}.weight"), Tensor::zeros(&[fan_in, n_moving])),
            bias: store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(&[1, n_moving])),
        };
        let mu_head = head("mu");
        let alpha_head = head("alpha");
        Self {
            dim,
            split,
            flipped,
            activation,
            trunk,
            mu_head,
            alpha_head,
        }
    }

    /// Column ranges `(fixed, moving)`.
    pub fn partition(&self) -> ((usize, usize), (usize, usize)) {
        if self.flipped {
            ((self.split, self.dim), (0, self.split))
        } else {
            ((0, self.split), (self.split, self.dim))
        }
    }

    pub fn mu_bias(&self) -> ParamId {
        self.mu_head.bias
    }

    pub fn alpha_bias(&self) -> ParamId {
        self.alpha_head.bias
    }

    fn conditioner(&self, tape: &mut Tape, bound: &Bound, fixed: Var) -> Result<(Var, Var)> {
        let mut h = fixed;
        for layer in &self.trunk {
            let pre = tape.affine(h, bound.get(layer.weight), bound.get(layer.bias))?;
            h = self.activation.apply(tape, pre)?;
        }
        let mu = tape.affine(h, bound.get(self.mu_head.weight), bound.get(self.mu_head.bias))?;
        let alpha = tape.affine(h, bound.get(self.alpha_head.weight), bound.get(self.alpha_head.bias))?;
        Ok((mu, alpha))
    }

    fn assemble(&self, tape: &mut Tape, fixed: Var, moved: Var) -> Result<Var> {
        let parts = if self.flipped { [moved, fixed] } else { [fixed, moved] };
        Ok(tape.concat(&parts, 1)?)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<LayerOutput> {
        let ((f0, f1), (m0, m1)) = self.partition();
        let fixed = tape.slice(x, 1, f0, f1)?;
        let moving = tape.slice(x, 1, m0, m1)?;
        let (mu, alpha) = self.conditioner(tape, bound, fixed)?;
        let scale = tape.exp(alpha)?;
        let scaled = tape.mul(moving, scale)?;
        let moved = tape.add(scaled, mu)?;
        let z = self.assemble(tape, fixed, moved)?;
        let log_det = tape.sum_axis(alpha, 1)?;
        Ok(LayerOutput { z, log_det })
    }

    pub fn inverse(&self, params: &ParamStore, y: &Tensor) -> Result<Tensor> {
        let ((f0, f1), (m0, m1)) = self.partition();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let fixed = tape.slice(yv, 1, f0, f1)?;
        let moving = tape.slice(yv, 1, m0, m1)?;
        let (mu, alpha) = self.conditioner(&mut tape, &bound, fixed)?;
        let centered = tape.sub(moving, mu)?;
        let neg = tape.neg(alpha)?;
        let inv_scale = tape.exp(neg)?;
        let restored = tape.mul(centered, inv_scale)?;
        let x = self.assemble(&mut tape, fixed, restored)?;
        Ok(tape.value(x).clone())
    }
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// `y = exp(gamma) * (x - m) / sqrt(v + eps) + beta`. Training mode uses the
/// batch mean and (population) variance and folds them into the running
/// statistics; evaluation mode uses the running statistics only.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    dim: usize,
    log_gamma: ParamId,
    beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormLayer {
    pub fn new(prefix: &str, dim: usize, store: &mut ParamStore) -> Self {
        Self {
            dim,
            log_gamma: store.add(format!("{prefix}.log_gamma"), Tensor::zeros(&[1, dim])),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[1, dim])),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, bound: &Bound, x: Var, train: bool) -> Result<LayerOutput> {
        let n = tape.value(x).rows();
        let (mean, var) = if train {
            let m = tape.mean_axis(x, 0)?;
            let v = tape.variance(x, 0)?;
            let (mv, vv) = (tape.value(m).data().to_vec(), tape.value(v).data().to_vec());
            for k in 0..self.dim {
                self.running_mean[k] = (1.0 - self.momentum) * self.running_mean[k] + self.momentum * mv[k];
                self.running_var[k] = (1.0 - self.momentum) * self.running_var[k] + self.momentum * vv[k];
            }
            (m, v)
        } else {
            (
                tape.constant(Tensor::row(self.running_mean.clone())),
                tape.constant(Tensor::row(self.running_var.clone())),
            )
        };
        let var_eps = tape.shift(var, self.eps)?;
        let sd = tape.pow(var_eps, 0.5)?;
        let mean_b = tape.broadcast_rows(mean, n)?;
        let sd_b = tape.broadcast_rows(sd, n)?;
        let centered = tape.sub(x, mean_b)?;
        let xhat = tape.div(centered, sd_b)?;
        let gamma = bound.get(self.log_gamma);
        let scale = tape.exp(gamma)?;
        let scale_b = tape.broadcast_rows(scale, n)?;
        let beta_b = tape.broadcast_rows(bound.get(self.beta), n)?;
        let scaled = tape.mul(scale_b, xhat)?;
        let z = tape.add(scaled, beta_b)?;

        let log_var = tape.log(var_eps)?;
        let half = tape.scale(log_var, 0.5)?;
        let per_dim = tape.sub(gamma, half)?;
        let total = tape.sum(per_dim)?;
        let zeros = tape.constant(Tensor::zeros(&[n, 1]));
        let log_det = tape.add(zeros, total)?;
        Ok(LayerOutput { z, log_det })
    }

    pub fn inverse(&self, params: &ParamStore, y: &Tensor) -> Tensor {
        let g = params.get(self.log_gamma).data();
        let b = params.get(self.beta).data();
        let mut x = y.clone();
        let cols = self.dim;
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let k = i % cols;
            let sd = (self.running_var[k] + self.eps).sqrt();
            *v = (*v - b[k]) * (-g[k]).exp() * sd + self.running_mean[k];
        }
        x
    }
}
