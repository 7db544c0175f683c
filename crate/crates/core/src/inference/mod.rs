//! Free-energy objective, training loop and experiment wiring.

pub mod config;
mod experiment;
mod output;
mod train;

use rand::Rng;

pub use config::ExperimentConfig;
pub use experiment::{build_model, generate_dataset, truth_outputs, Dataset, Experiment, DEFAULT_OUTPUTS_MAX_DIM};
pub use output::write_matrix_csv;
pub use train::{train, LossRecord, RunOutputs, TrainSetup};

pub use crate::optim::{Adam, LrSchedule, LrScheduler};

use crate::error::{Error, Result};
use crate::flows::{base_log_density, draw_base, FlowStack, Mode};
use crate::graph::{Tape, Tensor, Var};
use crate::models::{GaussianLikelihood, Model};
use crate::params::Bound;
use crate::surrogate::SurrogateModel;
use crate::transforms::InputTransformation;

/// Unnormalized log-joint `log p(x, z)` evaluated at normalized-space
/// samples `z_K` (`batch x d`), returning `batch x 1`.
pub trait LogDensityHook {
    fn log_density(&self, tape: &mut Tape, zk: Var) -> Result<Var>;

    /// Plain-value evaluation, no gradients.
    fn values(&self, zk: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = tape.constant(zk.clone());
        let lp = self.log_density(&mut tape, z)?;
        Ok(tape.value(lp).data().to_vec())
    }
}

impl<F> LogDensityHook for F
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn log_density(&self, tape: &mut Tape, zk: Var) -> Result<Var> {
        self(tape, zk)
    }
}

/// Forward map used inside the likelihood.
#[derive(Clone, Copy)]
pub enum ForwardMap<'a> {
    /// Differentiable model, evaluated at physical parameters.
    Model(&'a dyn Model),
    /// Surrogate, evaluated at normalized parameters.
    Surrogate(&'a SurrogateModel),
}

/// Gaussian likelihood of the observations under a forward map, with the
/// normalized-to-physical transform folded in (its log-Jacobian is added
/// here, so callers pass normalized samples). Uniform priors add nothing.
pub struct PosteriorHook<'a> {
    pub forward: ForwardMap<'a>,
    pub likelihood: &'a GaussianLikelihood,
    pub transform: &'a InputTransformation,
}

impl LogDensityHook for PosteriorHook<'_> {
    fn log_density(&self, tape: &mut Tape, zk: Var) -> Result<Var> {
        let (phys, lj) = self.transform.forward_tape(tape, zk)?;
        let outputs = match self.forward {
            ForwardMap::Model(m) => m.solve_tape(tape, phys).ok_or_else(|| {
                Error::InvalidArgument(format!("model '{}' has no differentiable solver; use a surrogate", m.name()))
            })??,
            ForwardMap::Surrogate(s) => s.forward_tape(tape, zk)?,
        };
        let ll = self.likelihood.log_density(tape, outputs)?;
        Ok(tape.add(ll, lj)?)
    }
}

/// One Monte Carlo evaluation of the free energy, kept on its tape so the
/// caller can backpropagate into the flow parameters.
pub struct FreeEnergy {
    pub tape: Tape,
    pub bound: Bound,
    pub loss: Var,
    /// Per-sample `log p(x, z_K)`.
    pub log_p: Vec<f64>,
    pub z0: Tensor,
}

impl FreeEnergy {
    pub fn value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    /// Backpropagates and adds the gradients to the stack's parameters.
    pub fn backward(mut self, stack: &mut FlowStack) -> Result<f64> {
        let v = self.value();
        self.tape.backward(self.loss)?;
        stack.params_mut().accumulate_grads(&self.tape, &self.bound)?;
        Ok(v)
    }
}

/// `E[log q0(z0)] - t E[log p(x, z_K)] - E[sum log|det|]` over
/// `batch_size` fresh base samples.
pub fn free_energy(
    stack: &mut FlowStack,
    hook: &dyn LogDensityHook,
    t: f64,
    batch_size: usize,
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<FreeEnergy> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("temperature must lie in (0, 1] (got {t})")));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let z0 = draw_base(batch_size, stack.dim(), rng);
    free_energy_at(stack, hook, t, z0, mode)
}

/// Same as [`free_energy`] with the base samples supplied.
pub fn free_energy_at(
    stack: &mut FlowStack,
    hook: &dyn LogDensityHook,
    t: f64,
    z0: Tensor,
    mode: Mode,
) -> Result<FreeEnergy> {
    let n = z0.rows();
    let mean_log_q0 = base_log_density(&z0).iter().sum::<f64>() / n as f64;
    let mut tape = Tape::new();
    let bound = stack.params().bind(&mut tape, true);
    let x = tape.constant(z0.clone());
    let pass = stack.forward(&mut tape, &bound, x, mode)?;
    let lp = hook.log_density(&mut tape, pass.z)?;
    if tape.value(lp).shape() != [n, 1] {
        return Err(Error::Dimension(format!(
            "log-density hook returned shape {:?}, expected [{n}, 1]",
            tape.value(lp).shape()
        )));
    }
    let mean_lp = tape.mean(lp)?;
    let mean_ld = tape.mean(pass.log_det)?;
    let tempered = tape.scale(mean_lp, -t)?;
    let diff = tape.sub(tempered, mean_ld)?;
    let loss = tape.shift(diff, mean_log_q0)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "free energy (t = {t}, E log q0 = {mean_log_q0}, E log p = {}, E log det = {})",
            tape.value(mean_lp).item(),
            tape.value(mean_ld).item()
        )));
    }
    let log_p = tape.value(lp).data().to_vec();
    Ok(FreeEnergy {
        tape,
        bound,
        loss,
        log_p,
        z0,
    })
}

/// Column means and unbiased standard deviations.
pub fn marginal_stats(samples: &Tensor) -> Result<Vec<(f64, f64)>> {
    let n = samples.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("marginal statistics need >= 2 samples (got {n})")));
    }
    Ok((0..samples.cols())
        .map(|c| {
            let col = samples.column_values(c);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FlowConfig;
    use crate::rng::{SeedTree, Stream};
    use std::f64::consts::PI;

    fn std_normal_hook(tape: &mut Tape, z: Var) -> Result<Var> {
        let d = tape.value(z).cols() as f64;
        let sq = tape.mul(z, z)?;
        let s = tape.sum_axis(sq, 1)?;
        let h = tape.scale(s, -0.5)?;
        Ok(tape.shift(h, -0.5 * d * (2.0 * PI).ln())?)
    }

    fn identity_stack(d: usize) -> FlowStack {
        let cfg = FlowConfig {
            batch_norm: false,
            n_blocks: 2,
            hidden_size: 8,
            ..Default::default()
        };
        let mut s = FlowStack::new(d, &cfg, &SeedTree::new(1)).unwrap();
        for t in s.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        s
    }

    #[test]
    fn zero_at_exact_posterior() {
        let mut s = identity_stack(2);
        let mut rng = SeedTree::new(3).stream(Stream::BaseSampling);
        let fe = free_energy(&mut s, &std_normal_hook, 1.0, 10_000, &mut rng, Mode::Train).unwrap();
        // q = p exactly, so every per-sample term cancels
        assert!(fe.value().abs() < 1e-10, "{}", fe.value());
    }

    #[test]
    fn tempered_matches_direct_expectations() {
        let mut s = identity_stack(2);
        let seeds = SeedTree::new(4);
        let mut rng = seeds.stream(Stream::BaseSampling);
        let fe = free_energy(&mut s, &std_normal_hook, 0.5, 1000, &mut rng, Mode::Train).unwrap();
        let mut rng = seeds.stream(Stream::BaseSampling);
        let z0 = draw_base(1000, 2, &mut rng);
        let lq: f64 = base_log_density(&z0).iter().sum::<f64>() / 1000.0;
        assert_eq!(fe.z0, z0);
        assert!((fe.value() - (lq - 0.5 * lq)).abs() < 1e-12);
    }

    #[test]
    fn constant_hook_has_no_likelihood_gradient() {
        let mut s = identity_stack(2);
        let c = 7.0;
        let hook = |tape: &mut Tape, z: Var| -> Result<Var> {
            let n = tape.value(z).rows();
            Ok(tape.constant(Tensor::column(vec![c; n])))
        };
        let seeds = SeedTree::new(5);
        let fe = free_energy(&mut s, &hook, 0.3, 64, &mut seeds.stream(Stream::BaseSampling), Mode::Train).unwrap();
        let lq: f64 = base_log_density(&fe.z0).iter().sum::<f64>() / 64.0;
        assert!((fe.value() - (lq - 0.3 * c)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_temperature_and_shape() {
        let mut s = identity_stack(2);
        let mut rng = SeedTree::new(0).stream(Stream::BaseSampling);
        assert!(free_energy(&mut s, &std_normal_hook, 0.0, 4, &mut rng, Mode::Train).is_err());
        let wide = |tape: &mut Tape, z: Var| -> Result<Var> { Ok(tape.mul(z, z)?) };
        assert!(matches!(
            free_energy(&mut s, &wide, 1.0, 4, &mut rng, Mode::Train),
            Err(Error::Dimension(_))
        ));
        let nan = |tape: &mut Tape, z: Var| -> Result<Var> {
            let n = tape.value(z).rows();
            Ok(tape.constant(Tensor::column(vec![f64::NAN; n])))
        };
        assert!(matches!(
            free_energy(&mut s, &nan, 1.0, 4, &mut rng, Mode::Train),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn marginal_stats_examples() {
        let t = Tensor::from_rows(&[vec![5.0, 0.0], vec![5.0, 2.0]]).unwrap();
        let s = marginal_stats(&t).unwrap();
        assert_eq!(s[0], (5.0, 0.0));
        assert!((s[1].0 - 1.0).abs() < 1e-15 && (s[1].1 - 2f64.sqrt()).abs() < 1e-15);
        assert!(marginal_stats(&Tensor::from_rows(&[vec![1.0]]).unwrap()).is_err());
    }
}
