//! Normalizing flows: MAF and RealNVP blocks with optional batch-norm,
//! composed into a [`FlowStack`] that tracks per-sample log-determinants.
//!
//! Direction convention: a layer's forward map is the sampling direction
//! `z_{k-1} -> z_k`. Training only needs samples and their accumulated
//! log-determinants, both produced in one pass.

mod layers;
pub mod made;

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use layers::{BatchNormLayer, LayerOutput, MafBlock, RealNvpBlock, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
pub use made::{build_masks, Activation, InputOrder, MadeMasks, MadeNetwork};

use crate::error::{Error, Result};
use crate::graph::{Tape, Tensor, Var};
use crate::params::{Bound, ParamStore};
use crate::rng::{standard_normals, SeedTree, Stream};
use crate::snapshot::{self, NamedArray, SnapshotHeader, SnapshotKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowType {
    Maf,
    Realnvp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub flow_type: FlowType,
    pub n_blocks: usize,
    pub hidden_size: usize,
    pub n_hidden: usize,
    pub activation: Activation,
    pub input_order: InputOrder,
    pub batch_norm: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            flow_type: FlowType::Maf,
            n_blocks: 5,
            hidden_size: 100,
            n_hidden: 1,
            activation: Activation::Relu,
            input_order: InputOrder::Sequential,
            batch_norm: true,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Maf(MafBlock),
    RealNvp(RealNvpBlock),
    BatchNorm(BatchNormLayer),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics and updates its running averages.
    Train,
    /// Batch-norm uses frozen running statistics; the stack is a fixed bijection.
    Eval,
}

/// Result of pushing a batch through the stack on a tape.
pub struct FlowPass {
    pub z: Var,
    /// Sum of all layers' log-determinants, `batch x 1`.
    pub log_det: Var,
    pub layer_log_dets: Vec<Var>,
}

/// Plain-value samples from the variational density.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub z0: Tensor,
    pub zk: Tensor,
    pub log_q0: Vec<f64>,
    pub log_det: Vec<f64>,
}

impl FlowSample {
    /// `log q_K(z_K) = log q_0(z_0) - sum log|det|`.
    pub fn log_qk(&self) -> Vec<f64> {
        self.log_q0.iter().zip(&self.log_det).map(|(a, b)| a - b).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FlowStack {
    dim: usize,
    layers: Vec<Layer>,
    params: ParamStore,
}

impl FlowStack {
    pub fn new(dim: usize, cfg: &FlowConfig, seeds: &SeedTree) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("flow dimension must be >= 1".into()));
        }
        if cfg.n_blocks == 0 {
            return Err(Error::InvalidArgument("n_blocks must be >= 1".into()));
        }
        let mut init_rng = seeds.stream(Stream::FlowInit);
        let mut mask_rng = seeds.stream(Stream::MaskOrder);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut degrees: Vec<usize> = match cfg.input_order {
            InputOrder::Sequential => (1..=dim).collect(),
            InputOrder::Random => {
                let seed = mask_rng.random();
                build_masks(dim, 1, 1, InputOrder::Random, seed)?.input_degrees
            }
        };
        for k in 0..cfg.n_blocks {
            let prefix = format!("block{k}");
            match cfg.flow_type {
                FlowType::Maf => {
                    if k > 0 {
                        degrees = degrees.iter().map(|&g| dim + 1 - g).collect();
                    }
                    let masks = made::masks_from_degrees(
                        degrees.clone(),
                        cfg.hidden_size,
                        cfg.n_hidden,
                        cfg.input_order,
                        &mut mask_rng,
                    )?;
                    let net = MadeNetwork::new(&prefix, masks, cfg.activation, &mut params, &mut init_rng);
                    layers.push(Layer::Maf(MafBlock::new(net)));
                }
                FlowType::Realnvp => {
                    layers.push(Layer::RealNvp(RealNvpBlock::new(
                        &prefix,
                        dim,
                        k % 2 == 1,
                        cfg.hidden_size,
                        cfg.n_hidden,
                        cfg.activation,
                        &mut params,
                        &mut init_rng,
                    )));
                }
            }
            if cfg.batch_norm {
                layers.push(Layer::BatchNorm(BatchNormLayer::new(
                    &format!("block{k}.bn"),
                    dim,
                    &mut params,
                )));
            }
        }
        Ok(Self { dim, layers, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Applies every layer in the sampling direction.
    pub fn forward(&mut self, tape: &mut Tape, bound: &Bound, x: Var, mode: Mode) -> Result<FlowPass> {
        let mut z = x;
        let mut layer_log_dets = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let out = match layer {
                Layer::Maf(b) => b.forward(tape, bound, z)?,
                Layer::RealNvp(b) => b.forward(tape, bound, z)?,
                Layer::BatchNorm(b) => b.forward(tape, bound, z, mode == Mode::Train)?,
            };
            if !tape.value(out.z).all_finite() || !tape.value(out.log_det).all_finite() {
                return Err(Error::NonFinite(format!("flow layer {i}")));
            }
            z = out.z;
            layer_log_dets.push(out.log_det);
        }
        let mut log_det = layer_log_dets[0];
        for &ld in &layer_log_dets[1..] {
            log_det = tape.add(log_det, ld)?;
        }
        Ok(FlowPass {
            z,
            log_det,
            layer_log_dets,
        })
    }

    /// Pushes `z0` through the stack without recording gradients.
    pub fn transform(&mut self, z0: &Tensor, mode: Mode) -> Result<(Tensor, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(z0.clone());
        let pass = self.forward(&mut tape, &bound, x, mode)?;
        Ok((tape.value(pass.z).clone(), tape.value(pass.log_det).data().to_vec()))
    }

    /// Draws `n` base samples and pushes them through the stack.
    pub fn sample(&mut self, n: usize, rng: &mut impl Rng, mode: Mode) -> Result<FlowSample> {
        if n == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        let z0 = draw_base(n, self.dim, rng);
        let log_q0 = base_log_density(&z0);
        let (zk, log_det) = self.transform(&z0, mode)?;
        Ok(FlowSample {
            z0,
            zk,
            log_q0,
            log_det,
        })
    }

    /// Maps samples back to the base space using running batch-norm
    /// statistics. MAF blocks invert coordinate by coordinate.
    pub fn inverse(&self, zk: &Tensor) -> Result<Tensor> {
        let mut z = zk.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            z = match layer {
                Layer::Maf(b) => b.inverse(&self.params, &z)?,
                Layer::RealNvp(b) => b.inverse(&self.params, &z)?,
                Layer::BatchNorm(b) => b.inverse(&self.params, &z),
            };
            if !z.all_finite() {
                return Err(Error::NonFinite(format!("inverse of flow layer {i}")));
            }
        }
        Ok(z)
    }

    fn state_arrays(&self) -> Vec<NamedArray> {
        let mut arrays: Vec<NamedArray> = self
            .params
            .iter()
            .map(|(name, t)| NamedArray::new(name, t.shape().to_vec(), t.data().to_vec()))
            .collect();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                arrays.push(NamedArray::new(format!("layer{i}.running_mean"), vec![self.dim], bn.running_mean.clone()));
                arrays.push(NamedArray::new(format!("layer{i}.running_var"), vec![self.dim], bn.running_var.clone()));
            }
        }
        arrays
    }

    /// Writes all parameters and batch-norm running statistics.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = SnapshotHeader {
            kind: SnapshotKind::Flow,
            input_dim: self.dim,
            output_dim: 0,
            limits: Vec::new(),
        };
        snapshot::write(path, &header, &self.state_arrays())
    }

    /// Restores a snapshot into a stack built with the same configuration.
    pub fn load_state(&mut self, path: &Path) -> Result<()> {
        let (header, arrays) = snapshot::read(path)?;
        if header.kind != SnapshotKind::Flow || header.input_dim != self.dim {
            return Err(Error::Snapshot {
                path: path.to_path_buf(),
                field: format!("header (kind {:?}, d {})", header.kind, header.input_dim),
            });
        }
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let shape = self.params.get(id).shape().to_vec();
            let a = snapshot::take_array(&arrays, &name, &shape, path)?;
            self.params.get_mut(id).data_mut().copy_from_slice(&a.data);
        }
        let dim = self.dim;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                bn.running_mean = snapshot::take_array(&arrays, &format!("layer{i}.running_mean"), &[dim], path)?
                    .data
                    .clone();
                bn.running_var = snapshot::take_array(&arrays, &format!("layer{i}.running_var"), &[dim], path)?
                    .data
                    .clone();
            }
        }
        Ok(())
    }
}

pub fn draw_base(n: usize, d: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(n, d, standard_normals(rng, n * d)).expect("consistent shape")
}

/// Standard normal log-density of each row.
pub fn base_log_density(z0: &Tensor) -> Vec<f64> {
    let d = z0.cols() as f64;
    let c = -0.5 * d * (2.0 * PI).ln();
    (0..z0.rows())
        .map(|r| c - 0.5 * z0.row_slice(r).iter().map(|v| v * v).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(flow_type: FlowType, batch_norm: bool) -> FlowConfig {
        FlowConfig {
            flow_type,
            n_blocks: 3,
            hidden_size: 16,
            n_hidden: 1,
            activation: Activation::Tanh,
            input_order: InputOrder::Sequential,
            batch_norm,
        }
    }

    #[test]
    fn zero_initialised_stack_is_identity() {
        for ft in [FlowType::Maf, FlowType::Realnvp] {
            let mut stack = FlowStack::new(3, &cfg(ft, false), &SeedTree::new(1)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let s = stack.sample(50, &mut rng, Mode::Train).unwrap();
            assert_eq!(s.z0, s.zk);
            assert!(s.log_det.iter().all(|&v| v == 0.0));
            assert_eq!(stack.inverse(&s.zk).unwrap(), s.zk);
        }
    }

    #[test]
    fn constant_alpha_gives_known_log_det() {
        let mut stack = FlowStack::new(
            2,
            &FlowConfig {
                n_blocks: 1,
                ..cfg(FlowType::Maf, false)
            },
            &SeedTree::new(3),
        )
        .unwrap();
        let c = 0.37;
        let Layer::Maf(block) = &stack.layers()[0] else { panic!() };
        let id = block.made().alpha_bias();
        stack.params_mut().get_mut(id).data_mut().fill(c);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = stack.sample(5, &mut rng, Mode::Eval).unwrap();
        for ld in &s.log_det {
            assert!((ld + 2.0 * c).abs() < 1e-14);
        }
    }

    #[test]
    fn realnvp_inverse_matches_hand_formula() {
        let mut stack = FlowStack::new(
            2,
            &FlowConfig {
                n_blocks: 1,
                ..cfg(FlowType::Realnvp, false)
            },
            &SeedTree::new(5),
        )
        .unwrap();
        let Layer::RealNvp(block) = &stack.layers()[0] else { panic!() };
        let (mu_id, alpha_id) = (block.mu_bias(), block.alpha_bias());
        let (mu, alpha) = (0.8, -0.4);
        stack.params_mut().get_mut(mu_id).data_mut().fill(mu);
        stack.params_mut().get_mut(alpha_id).data_mut().fill(alpha);
        let y = Tensor::matrix(1, 2, vec![1.3, 2.1]).unwrap();
        let x = stack.inverse(&y).unwrap();
        assert_eq!(x.get(0, 0), 1.3);
        assert!((x.get(0, 1) - (2.1 - mu) * (-alpha as f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn snapshot_round_trip_restores_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.bin");
        let mut stack = FlowStack::new(2, &cfg(FlowType::Maf, true), &SeedTree::new(8)).unwrap();
        for t in stack.params_mut().tensors_mut() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.01 * (i as f64).sin();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        stack.sample(20, &mut rng, Mode::Train).unwrap();
        stack.save(&path).unwrap();
        let mut fresh = FlowStack::new(2, &cfg(FlowType::Maf, true), &SeedTree::new(99)).unwrap();
        fresh.load_state(&path).unwrap();
        let z0 = draw_base(7, 2, &mut rng);
        let a = stack.transform(&z0, Mode::Eval).unwrap();
        let b = fresh.transform(&z0, Mode::Eval).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
