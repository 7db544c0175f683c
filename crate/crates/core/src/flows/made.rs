//! Masked autoencoder conditioner (MADE).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Mask, Tape, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Relu => tape.relu(x)?,
            Activation::Tanh => tape.tanh(x)?,
            Activation::Sigmoid => tape.sigmoid(x)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputOrder {
    Sequential,
    Random,
}

/// Degree labels and connectivity masks of one MADE network.
///
/// Hidden masks admit `in -> out` when `deg(out) >= deg(in)`; the output
/// mask admits it only when `deg(out) > deg(in)`, so output `i` sees inputs
/// of strictly smaller degree.
#[derive(Clone, Debug)]
pub struct MadeMasks {
    pub input_degrees: Vec<usize>,
    pub hidden_degrees: Vec<Vec<usize>>,
    pub hidden: Vec<Mask>,
    pub output: Mask,
}

impl MadeMasks {
    /// Boolean reachability from input `j` to output `i` through the masks.
    pub fn connectivity(&self) -> Vec<Vec<bool>> {
        let d = self.input_degrees.len();
        // reach[j][u]: input j reaches unit u of the current layer
        let mut reach: Vec<Vec<bool>> = (0..d)
            .map(|j| (0..d).map(|u| u == j).collect())
            .collect();
        let mut width = d;
        for m in self.hidden.iter().chain(std::iter::once(&self.output)) {
            let next: Vec<Vec<bool>> = reach
                .iter()
                .map(|r| {
                    (0..m.cols())
                        .map(|o| (0..width).any(|u| r[u] && m.get(u, o)))
                        .collect()
                })
                .collect();
            width = m.cols();
            reach = next;
        }
        // transpose to [output][input]
        (0..d).map(|i| (0..d).map(|j| reach[j][i]).collect()).collect()
    }
}

/// Builds masks for a network with `n_hidden` layers of `hidden_size` units.
/// Sequential order labels inputs 1..d in index order; random order draws a
/// permutation from `seed`.
pub fn build_masks(
    d: usize,
    hidden_size: usize,
    n_hidden: usize,
    order: InputOrder,
    seed: u64,
) -> Result<MadeMasks> {
    if d == 0 || hidden_size == 0 || n_hidden == 0 {
        return Err(Error::InvalidArgument(format!(
            "MADE needs d, hidden_size, n_hidden >= 1 (got {d}, {hidden_size}, {n_hidden})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_degrees: Vec<usize> = match order {
        InputOrder::Sequential => (1..=d).collect(),
        InputOrder::Random => {
            let mut p: Vec<usize> = (1..=d).collect();
            p.shuffle(&mut rng);
            p
        }
    };
    masks_from_degrees(input_degrees, hidden_size, n_hidden, order, &mut rng)
}

pub(crate) fn masks_from_degrees(
    input_degrees: Vec<usize>,
    hidden_size: usize,
    n_hidden: usize,
    order: InputOrder,
    rng: &mut impl Rng,
) -> Result<MadeMasks> {
    let d = input_degrees.len();
    let max_hidden = d.saturating_sub(1).max(1);
    let mut hidden_degrees = Vec::with_capacity(n_hidden);
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut prev = input_degrees.clone();
    for _ in 0..n_hidden {
        let degs: Vec<usize> = match order {
            InputOrder::Sequential => (0..hidden_size).map(|k| k % max_hidden + 1).collect(),
            InputOrder::Random => (0..hidden_size).map(|_| rng.random_range(1..=max_hidden)).collect(),
        };
        let bits: Vec<bool> = prev
            .iter()
            .flat_map(|&din| degs.iter().map(move |&dout| dout >= din))
            .collect();
        hidden.push(Mask::new(prev.len(), hidden_size, &bits)?);
        prev = degs.clone();
        hidden_degrees.push(degs);
    }
    let bits: Vec<bool> = prev
        .iter()
        .flat_map(|&din| input_degrees.iter().map(move |&dout| dout > din))
        .collect();
    let output = Mask::new(prev.len(), d, &bits)?;
    Ok(MadeMasks {
        input_degrees,
        hidden_degrees,
        hidden,
        output,
    })
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights.
pub(crate) fn uniform_init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("consistent shape")
}

#[derive(Clone, Debug)]
struct MaskedLinear {
    weight: ParamId,
    bias: ParamId,
    mask: Mask,
}

/// MADE with a shared hidden trunk and two zero-initialized output heads
/// (shift `mu` and log-scale `alpha`).
#[derive(Clone, Debug)]
pub struct MadeNetwork {
    masks: MadeMasks,
    activation: Activation,
    hidden: Vec<MaskedLinear>,
    mu_head: MaskedLinear,
    alpha_head: MaskedLinear,
}

impl MadeNetwork {
    pub fn new(
        prefix: &str,
        masks: MadeMasks,
        activation: Activation,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let d = masks.input_degrees.len();
        let mut hidden = Vec::new();
        let mut fan_in = d;
        for (l, m) in masks.hidden.iter().enumerate() {
            let h = m.cols();
            let w = uniform_init(rng, fan_in, h);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let b: Vec<f64> = (0..h).map(|_| rng.random_range(-bound..=bound)).collect();
            hidden.push(MaskedLinear {
                weight: store.add(format!("{prefix}.hidden{l}.weight"), w),
                bias: store.add(format!("{prefix}.hidden{l}.bias"), Tensor::row(b)),
                mask: m.clone(),
            });
            fan_in = h;
        }
        let head = |store: &mut ParamStore, name: &str| MaskedLinear {
            weight: store.add(format!("{prefix}.{name}.weight"), Tensor::zeros(&[fan_in, d])),
            bias: store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(&[1, d])),
            mask: masks.output.clone(),
        };
        let mu_head = head(store, "mu");
        let alpha_head = head(store, "alpha");
        Self {
            masks,
            activation,
            hidden,
            mu_head,
            alpha_head,
        }
    }

    pub fn masks(&self) -> &MadeMasks {
        &self.masks
    }

    pub fn dim(&self) -> usize {
        self.masks.input_degrees.len()
    }

    pub fn alpha_bias(&self) -> ParamId {
        self.alpha_head.bias
    }

    pub fn mu_bias(&self) -> ParamId {
        self.mu_head.bias
    }

    /// Returns `(mu, alpha)`, each `batch x d`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for layer in &self.hidden {
            let pre = tape.masked_affine(h, bound.get(layer.weight), bound.get(layer.bias), &layer.mask)?;
            h = self.activation.apply(tape, pre)?;
        }
        let mu = tape.masked_affine(
            h,
            bound.get(self.mu_head.weight),
            bound.get(self.mu_head.bias),
            &self.mu_head.mask,
        )?;
        let alpha = tape.masked_affine(
            h,
            bound.get(self.alpha_head.weight),
            bound.get(self.alpha_head.bias),
            &self.alpha_head.mask,
        )?;
        Ok((mu, alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_coordinate_is_unconditioned() {
        let m = build_masks(2, 8, 1, InputOrder::Sequential, 0).unwrap();
        for h in 0..8 {
            assert!(!m.output.get(h, 0), "output for z1 must have an empty mask column");
        }
    }

    #[test]
    fn paths_respect_sequential_order() {
        let m = build_masks(3, 4, 1, InputOrder::Sequential, 0).unwrap();
        let conn = m.connectivity();
        for i in 0..3 {
            for j in 0..3 {
                if conn[i][j] {
                    assert!(j < i, "output {i} reachable from input {j}");
                }
            }
        }
        // every lower-triangular pair is realised with enough hidden units
        assert!(conn[1][0] && conn[2][0] && conn[2][1]);
    }

    #[test]
    fn random_order_is_seeded() {
        let a = build_masks(2, 6, 2, InputOrder::Random, 11).unwrap();
        let b = build_masks(2, 6, 2, InputOrder::Random, 11).unwrap();
        assert_eq!(a.input_degrees, b.input_degrees);
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn random_order_keeps_autoregressive_property() {
        for seed in 0..10 {
            let m = build_masks(5, 16, 2, InputOrder::Random, seed).unwrap();
            let conn = m.connectivity();
            for i in 0..5 {
                for j in 0..5 {
                    if conn[i][j] {
                        assert!(m.input_degrees[j] < m.input_degrees[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_empty_sizes() {
        assert!(build_masks(0, 4, 1, InputOrder::Sequential, 0).is_err());
        assert!(build_masks(2, 0, 1, InputOrder::Sequential, 0).is_err());
    }
}
