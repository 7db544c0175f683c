//! Adaptive neural surrogate for expensive forward models.
//!
//! A small tanh network is fit on a pre-grid of true-model evaluations and
//! then refined with batches proposed by the flow. Refits minimize
//!
//! ```text
//! L(w) = MSE(pre-grid) + sum_j gamma^(R - r_j) * MSE(batch j)
//! ```
//!
//! where `R` is the current round and `r_j` the round in which batch `j` was
//! added (`gamma = 0.9`), so the pre-grid is never forgotten and recent
//! batches weigh most. Errors are measured on standardized outputs.

mod sobol;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use sobol::{sobol_points, MAX_DIM as SOBOL_MAX_DIM};

use crate::error::{Error, Result};
use crate::flows::made::uniform_init;
use crate::graph::{Tape, Tensor, Var};
use crate::optim::{Adam, LrSchedule};
use crate::params::{Bound, ParamId, ParamStore};
use crate::snapshot::{self, NamedArray, SnapshotHeader, SnapshotKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Tensor,
    Sobol,
}

/// A priori design inside the `limits` box, with true-model values.
#[derive(Clone, Debug, PartialEq)]
pub struct PreGrid {
    pub kind: GridKind,
    pub gridnum: usize,
    pub limits: Vec<[f64; 2]>,
    pub points: Tensor,
    pub values: Tensor,
}

fn check_limits(limits: &[[f64; 2]]) -> Result<()> {
    if limits.is_empty() {
        return Err(Error::InvalidArgument("surrogate limits are empty".into()));
    }
    for (i, [lo, hi]) in limits.iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("surrogate limit {i} needs low < high (got {lo}, {hi})")));
        }
    }
    Ok(())
}

impl PreGrid {
    /// Tensor grids have `gridnum^d` points (first coordinate varies slowest,
    /// endpoints included); Sobol designs have `gridnum` points.
    pub fn design(kind: GridKind, gridnum: usize, limits: &[[f64; 2]]) -> Result<Tensor> {
        check_limits(limits)?;
        if gridnum == 0 {
            return Err(Error::InvalidArgument("gridnum must be positive".into()));
        }
        let d = limits.len();
        match kind {
            GridKind::Tensor => {
                let n = gridnum
                    .checked_pow(d as u32)
                    .filter(|&n| n <= 10_000_000)
                    .ok_or_else(|| Error::InvalidArgument(format!("tensor grid {gridnum}^{d} is too large")))?;
                let axis = |[lo, hi]: [f64; 2], k: usize| {
                    if gridnum == 1 {
                        0.5 * (lo + hi)
                    } else {
                        lo + (hi - lo) * k as f64 / (gridnum - 1) as f64
                    }
                };
                let mut data = Vec::with_capacity(n * d);
                for idx in 0..n {
                    let mut rem = idx;
                    let mut row = vec![0.0; d];
                    for j in (0..d).rev() {
                        row[j] = axis(limits[j], rem % gridnum);
                        rem /= gridnum;
                    }
                    data.extend(row);
                }
                Ok(Tensor::matrix(n, d, data)?)
            }
            GridKind::Sobol => {
                let unit = sobol_points(gridnum, d).ok_or_else(|| {
                    Error::InvalidArgument(format!("Sobol design supports 1..={SOBOL_MAX_DIM} dimensions, got {d}"))
                })?;
                let data = unit
                    .iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let [lo, hi] = limits[i % d];
                        lo + (hi - lo) * u
                    })
                    .collect();
                Ok(Tensor::matrix(gridnum, d, data)?)
            }
        }
    }

    /// Builds the design and evaluates `model` (normalized inputs) on it.
    pub fn evaluate(
        kind: GridKind,
        gridnum: usize,
        limits: &[[f64; 2]],
        model: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<Self> {
        let points = Self::design(kind, gridnum, limits)?;
        let values = model(&points)?;
        if values.rows() != points.rows() {
            return Err(Error::Dimension("model returned a different number of rows".into()));
        }
        Ok(Self {
            kind,
            gridnum,
            limits: limits.to_vec(),
            points,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateConfig {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub lr: f64,
    pub pre_it: usize,
    pub upd_it: usize,
    pub gamma: f64,
    /// Maximum number of true-model evaluations (pre-grid included).
    pub budget: Option<usize>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            n_layers: 2,
            lr: 0.003,
            pre_it: 40000,
            upd_it: 6000,
            gamma: 0.9,
            budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveBatch {
    pub points: Tensor,
    pub values: Tensor,
    pub round: usize,
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct SurrogateModel {
    d: usize,
    m: usize,
    config: SurrogateConfig,
    pre_grid: PreGrid,
    archive: Vec<ArchiveBatch>,
    round: usize,
    params: ParamStore,
    layers: Vec<Dense>,
    out_mean: Vec<f64>,
    out_sd: Vec<f64>,
    adam: Adam,
    last_loss: Option<f64>,
}

fn stats(values: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (values.rows(), values.cols());
    let mean: Vec<f64> = (0..m).map(|j| values.column_values(j).iter().sum::<f64>() / n as f64).collect();
    let sd = (0..m)
        .map(|j| {
            let v = values.column_values(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if v > 0.0 && v.is_finite() {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

fn diag(v: &[f64]) -> Tensor {
    let n = v.len();
    let mut data = vec![0.0; n * n];
    for (i, x) in v.iter().enumerate() {
        data[i * n + i] = *x;
    }
    Tensor::matrix(n, n, data).expect("square")
}

const ROUND_MAGIC: f64 = 6755399441055744.0; // 1.5 * 2^52

/// Branch-free `tanh` via `(1 - e^{-2|x|}) / (1 + e^{-2|x|})` with a
/// polynomial exponential, so the loop over a layer vectorizes. Absolute
/// error is within a few ulps of 1; NaN propagates.
#[inline(always)]
fn tanh_fast(x: f64) -> f64 {
    let ax = if x.abs() > 20.0 { 20.0 } else { x.abs() };
    let y = -2.0 * ax;
    let t = y * std::f64::consts::LOG2_E + ROUND_MAGIC;
    let k = t - ROUND_MAGIC;
    let r = y - k * 6.931_471_803_691_238e-1 - k * 1.908_214_929_270_587_7e-10;
    // Taylor series of e^r to degree 13, Estrin's scheme; |r| <= ln2/2
    const C: [f64; 14] = [
        1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0, 1.0 / 720.0, 1.0 / 5_040.0, 1.0 / 40_320.0,
        1.0 / 362_880.0, 1.0 / 3_628_800.0, 1.0 / 39_916_800.0, 1.0 / 479_001_600.0, 1.0 / 6_227_020_800.0,
    ];
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let q0 = (C[0] + C[1] * r) + (C[2] + C[3] * r) * r2;
    let q1 = (C[4] + C[5] * r) + (C[6] + C[7] * r) * r2;
    let q2 = (C[8] + C[9] * r) + (C[10] + C[11] * r) * r2;
    let q3 = C[12] + C[13] * r;
    let p = (q0 + q1 * r4) + (q2 + q3 * r4) * r8;
    let ki = (t.to_bits() as i64).wrapping_sub(ROUND_MAGIC.to_bits() as i64);
    let u = p * f64::from_bits((ki.wrapping_add(1023) << 52) as u64);
    ((1.0 - u) / (1.0 + u)).copysign(x)
}

const TILE: usize = 16;
const ROWS: usize = 8;

/// `acc[i][t] = b[j + t] + sum_k x_i[k] w[k, j + t]`, summed in `k` order.
#[inline(always)]
fn tile<const R: usize>(xs: [&[f64]; R], w: &[f64], b: &[f64], fan_out: usize, j: usize) -> [[f64; TILE]; R] {
    let mut acc = [[0.0; TILE]; R];
    for a in acc.iter_mut() {
        a.copy_from_slice(&b[j..j + TILE]);
    }
    let n_in = w.len() / fan_out;
    let xs: [&[f64]; R] = std::array::from_fn(|i| &xs[i][..n_in]);
    for (k, wrow) in w.chunks_exact(fan_out).enumerate() {
        let wk: &[f64; TILE] = wrow[j..j + TILE].try_into().unwrap();
        for i in 0..R {
            let x = xs[i][k];
            for t in 0..TILE {
                acc[i][t] = x.mul_add(wk[t], acc[i][t]);
            }
        }
    }
    acc
}

#[inline(always)]
fn dense_kernel(h: &[f64], n: usize, fan_in: usize, w: &[f64], b: &[f64], activate: bool) -> Vec<f64> {
    let fan_out = b.len();
    let mut out = vec![0.0; n * fan_out];
    let row = |r: usize| &h[r * fan_in..(r + 1) * fan_in];
    let mut r = 0;
    while r < n {
        let block = if r + ROWS <= n { ROWS } else { 1 };
        let mut j = 0;
        while j + TILE <= fan_out {
            if block == ROWS {
                let acc = tile(std::array::from_fn::<_, ROWS, _>(|i| row(r + i)), w, b, fan_out, j);
                for (i, a) in acc.iter().enumerate() {
                    out[(r + i) * fan_out + j..(r + i) * fan_out + j + TILE].copy_from_slice(a);
                }
            } else {
                let acc = tile([row(r)], w, b, fan_out, j);
                out[r * fan_out + j..r * fan_out + j + TILE].copy_from_slice(&acc[0]);
            }
            j += TILE;
        }
        // leftover columns: all (row, column) sums advance together
        let rem = fan_out - j;
        if rem > 0 {
            let mut acc = [0.0; ROWS * TILE];
            for i in 0..block {
                acc[i * rem..(i + 1) * rem].copy_from_slice(&b[j..]);
            }
            for (k, wrow) in w.chunks_exact(fan_out).enumerate() {
                let wk = &wrow[j..];
                for i in 0..block {
                    let x = h[(r + i) * fan_in + k];
                    for (a, wv) in acc[i * rem..(i + 1) * rem].iter_mut().zip(wk) {
                        *a = x.mul_add(*wv, *a);
                    }
                }
            }
            for i in 0..block {
                out[(r + i) * fan_out + j..(r + i + 1) * fan_out].copy_from_slice(&acc[i * rem..(i + 1) * rem]);
            }
        }
        r += block;
    }
    if activate {
        out.iter_mut().for_each(|a| *a = tanh_fast(*a));
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn dense_avx512(h: &[f64], n: usize, fan_in: usize, w: &[f64], b: &[f64], activate: bool) -> Vec<f64> {
    dense_kernel(h, n, fan_in, w, b, activate)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dense_avx2(h: &[f64], n: usize, fan_in: usize, w: &[f64], b: &[f64], activate: bool) -> Vec<f64> {
    dense_kernel(h, n, fan_in, w, b, activate)
}

/// `act(h W + b)` for row-major `h` (`n x fan_in`). Products are accumulated
/// with fused multiply-adds in a fixed order; `mul_add` is correctly rounded
/// whether done in hardware or in software, so every path gives the same bits.
fn dense(h: &[f64], n: usize, fan_in: usize, w: &[f64], b: &[f64], activate: bool) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    {
        // SAFETY: each path runs only when the CPU reports the feature
        let fma = std::arch::is_x86_feature_detected!("fma");
        if fma && std::arch::is_x86_feature_detected!("avx512f") {
            return unsafe { dense_avx512(h, n, fan_in, w, b, activate) };
        }
        if fma && std::arch::is_x86_feature_detected!("avx2") {
            return unsafe { dense_avx2(h, n, fan_in, w, b, activate) };
        }
    }
    dense_kernel(h, n, fan_in, w, b, activate)
}

impl SurrogateModel {
    pub fn new(pre_grid: PreGrid, config: SurrogateConfig, rng: &mut impl Rng) -> Result<Self> {
        if pre_grid.is_empty() {
            return Err(Error::InvalidArgument("surrogate pre-grid is empty".into()));
        }
        if !pre_grid.values.all_finite() {
            return Err(Error::NonFinite("true model on the surrogate pre-grid".into()));
        }
        if let Some(b) = config.budget {
            if pre_grid.len() > b {
                return Err(Error::Config(format!(
                    "surrogate pre-grid has {} points but the budget is {b}",
                    pre_grid.len()
                )));
            }
        }
        if config.hidden_size == 0 || config.n_layers == 0 {
            return Err(Error::Config("surrogate network needs at least one hidden unit and layer".into()));
        }
        let (d, m) = (pre_grid.points.cols(), pre_grid.values.cols());
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut fan_in = d;
        for l in 0..=config.n_layers {
            let fan_out = if l == config.n_layers { m } else { config.hidden_size };
            let w = uniform_init(rng, fan_in, fan_out);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let b = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            layers.push(Dense {
                weight: params.add(format!("surrogate.layer{l}.weight"), w),
                bias: params.add(format!("surrogate.layer{l}.bias"), Tensor::row(b)),
            });
            fan_in = fan_out;
        }
        let (out_mean, out_sd) = stats(&pre_grid.values);
        let adam = Adam::new(config.lr, LrSchedule::Constant);
        Ok(Self {
            d,
            m,
            config,
            pre_grid,
            archive: Vec::new(),
            round: 0,
            params,
            layers,
            out_mean,
            out_sd,
            adam,
            last_loss: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn output_dim(&self) -> usize {
        self.m
    }

    pub fn limits(&self) -> &[[f64; 2]] {
        &self.pre_grid.limits
    }

    pub fn pre_grid(&self) -> &PreGrid {
        &self.pre_grid
    }

    pub fn archive(&self) -> &[ArchiveBatch] {
        &self.archive
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut SurrogateConfig {
        &mut self.config
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Training loss after the most recent fit.
    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    /// True-model evaluations consumed so far.
    pub fn evaluations(&self) -> usize {
        self.pre_grid.len() + self.archive.iter().map(|b| b.points.rows()).sum::<usize>()
    }

    pub fn remaining_budget(&self) -> Option<usize> {
        self.config.budget.map(|b| b.saturating_sub(self.evaluations()))
    }

    pub fn can_update(&self, k: usize) -> bool {
        self.remaining_budget().is_none_or(|r| r >= k)
    }

    /// Weight of archive batch `j` under the current round.
    pub fn batch_weight(&self, j: usize) -> f64 {
        self.config.gamma.powi((self.round - self.archive[j].round) as i32)
    }

    fn network(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let (scale, offset): (Vec<f64>, Vec<f64>) = self
            .pre_grid
            .limits
            .iter()
            .map(|[lo, hi]| (2.0 / (hi - lo), -1.0 - 2.0 * lo / (hi - lo)))
            .unzip();
        let s = tape.constant(diag(&scale));
        let o = tape.constant(Tensor::row(offset));
        let mut h = tape.affine(z, s, o)?;
        for (l, layer) in self.layers.iter().enumerate() {
            h = tape.affine(h, bound.get(layer.weight), bound.get(layer.bias))?;
            if l + 1 < self.layers.len() {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    fn standardized_targets(&self, values: &Tensor) -> Tensor {
        let mut t = values.clone();
        let m = self.m;
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = (*v - self.out_mean[i % m]) / self.out_sd[i % m];
        }
        t
    }

    /// Surrogate outputs on the tape for normalized inputs `z` (`batch x d`).
    /// Network weights enter as constants; gradients flow to `z`.
    pub fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let cols = tape.value(z).cols();
        if cols != self.d {
            return Err(Error::Dimension(format!("surrogate expects {} inputs, got {cols}", self.d)));
        }
        let bound = self.params.bind(tape, false);
        let y = self.network(tape, &bound, z)?;
        let sd = tape.constant(diag(&self.out_sd));
        let mean = tape.constant(Tensor::row(self.out_mean.clone()));
        Ok(tape.affine(y, sd, mean)?)
    }

    /// Plain evaluation without a tape (same network as [`Self::forward_tape`]).
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.d {
            return Err(Error::Dimension(format!("surrogate expects {} inputs, got {}", self.d, z.cols())));
        }
        let n = z.rows();
        let mut h: Vec<f64> = z.data().to_vec();
        for (j, v) in h.iter_mut().enumerate() {
            let [lo, hi] = self.pre_grid.limits[j % self.d];
            *v = 2.0 * (*v - lo) / (hi - lo) - 1.0;
        }
        let mut fan_in = self.d;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = self.params.get(layer.weight);
            let b = self.params.get(layer.bias).data();
            let activate = l + 1 < self.layers.len();
            h = dense(&h, n, fan_in, w.data(), b, activate);
            fan_in = w.cols();
        }
        for (i, v) in h.iter_mut().enumerate() {
            *v = *v * self.out_sd[i % self.m] + self.out_mean[i % self.m];
        }
        Ok(Tensor::matrix(n, self.m, h)?)
    }

    /// Mean squared error on standardized outputs.
    pub fn mse(&self, points: &Tensor, values: &Tensor) -> Result<f64> {
        let pred = self.forward(points)?;
        let n = pred.numel().max(1) as f64;
        Ok(pred
            .data()
            .iter()
            .zip(values.data())
            .enumerate()
            .map(|(i, (p, v))| ((p - v) / self.out_sd[i % self.m]).powi(2))
            .sum::<f64>()
            / n)
    }

    pub fn pre_grid_mse(&self) -> Result<f64> {
        self.mse(&self.pre_grid.points, &self.pre_grid.values)
    }

    /// Stacked inputs, standardized targets, and per-row weights of the
    /// memory-aware loss.
    fn training_set(&self) -> Result<(Tensor, Tensor, Tensor)> {
        let mut xs: Vec<f64> = self.pre_grid.points.data().to_vec();
        let mut ys: Vec<f64> = self.standardized_targets(&self.pre_grid.values).into_data();
        let n_pre = self.pre_grid.len();
        let mut w = vec![1.0 / (n_pre * self.m) as f64; n_pre];
        for (j, b) in self.archive.iter().enumerate() {
            let k = b.points.rows();
            xs.extend_from_slice(b.points.data());
            ys.extend(self.standardized_targets(&b.values).into_data());
            w.extend(std::iter::repeat_n(self.batch_weight(j) / (k * self.m) as f64, k));
        }
        let n = w.len();
        Ok((
            Tensor::matrix(n, self.d, xs)?,
            Tensor::matrix(n, self.m, ys)?,
            Tensor::column(w),
        ))
    }

    fn fit(&mut self, iterations: usize) -> Result<f64> {
        let (x, y, w) = self.training_set()?;
        let ones = Tensor::column(vec![1.0; self.m]);
        let mut loss = f64::NAN;
        for _ in 0..iterations {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape, true);
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let wv = tape.constant(w.clone());
            let ov = tape.constant(ones.clone());
            let pred = self.network(&mut tape, &bound, xv)?;
            let err = tape.sub(pred, yv)?;
            let sq = tape.mul(err, err)?;
            let rows = tape.matmul(sq, ov)?;
            let weighted = tape.mul(rows, wv)?;
            let l = tape.sum(weighted)?;
            loss = tape.value(l).item();
            if !loss.is_finite() {
                return Err(Error::NonFinite("surrogate training loss".into()));
            }
            tape.backward(l)?;
            self.params.accumulate_grads(&tape, &bound)?;
            self.adam.step(&mut self.params);
        }
        if iterations > 0 {
            self.last_loss = Some(loss);
        }
        Ok(loss)
    }

    /// Fits the network on the pre-grid for `pre_it` steps and returns the
    /// final pre-grid MSE.
    pub fn pre_train(&mut self) -> Result<f64> {
        self.fit(self.config.pre_it)?;
        let mse = self.pre_grid_mse()?;
        self.last_loss = Some(mse);
        Ok(mse)
    }

    /// Adds a batch of true-model evaluations and refits for `upd_it` steps.
    pub fn update(&mut self, points: &Tensor, values: &Tensor) -> Result<f64> {
        let k = points.rows();
        if k == 0 {
            return Err(Error::InvalidArgument("surrogate update needs at least one point".into()));
        }
        if points.cols() != self.d || values.cols() != self.m || values.rows() != k {
            return Err(Error::Dimension(format!(
                "surrogate update expects {k}x{} points and {k}x{} values, got {:?} and {:?}",
                self.d,
                self.m,
                points.shape(),
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(Error::NonFinite("true model on surrogate update points".into()));
        }
        if !self.can_update(k) {
            return Err(Error::InvalidArgument(format!(
                "surrogate budget exceeded: {} used, {k} requested, budget {:?}",
                self.evaluations(),
                self.config.budget
            )));
        }
        self.round += 1;
        self.archive.push(ArchiveBatch {
            points: points.detached(),
            values: values.detached(),
            round: self.round,
        });
        self.fit(self.config.upd_it)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = SnapshotHeader {
            kind: SnapshotKind::Surrogate,
            input_dim: self.d,
            output_dim: self.m,
            limits: self.pre_grid.limits.clone(),
        };
        let c = &self.config;
        let mut arrays = vec![
            NamedArray::new(
                "config",
                vec![8],
                vec![
                    c.hidden_size as f64,
                    c.n_layers as f64,
                    c.lr,
                    c.pre_it as f64,
                    c.upd_it as f64,
                    c.gamma,
                    c.budget.map_or(-1.0, |b| b as f64),
                    self.round as f64,
                ],
            ),
            NamedArray::new(
                "pregrid.meta",
                vec![2],
                vec![
                    match self.pre_grid.kind {
                        GridKind::Tensor => 0.0,
                        GridKind::Sobol => 1.0,
                    },
                    self.pre_grid.gridnum as f64,
                ],
            ),
            tensor_array("pregrid.points", &self.pre_grid.points),
            tensor_array("pregrid.values", &self.pre_grid.values),
            NamedArray::new("out_mean", vec![self.m], self.out_mean.clone()),
            NamedArray::new("out_sd", vec![self.m], self.out_sd.clone()),
            NamedArray::new("archive.count", vec![1], vec![self.archive.len() as f64]),
        ];
        for (j, b) in self.archive.iter().enumerate() {
            arrays.push(tensor_array(&format!("archive{j}.points"), &b.points));
            arrays.push(tensor_array(&format!("archive{j}.values"), &b.values));
            arrays.push(NamedArray::new(format!("archive{j}.round"), vec![1], vec![b.round as f64]));
        }
        for (name, t) in self.params.iter() {
            arrays.push(tensor_array(name, t));
        }
        snapshot::write(path, &header, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, arrays) = snapshot::read(path)?;
        let field = |f: &str| Error::Snapshot {
            path: path.to_path_buf(),
            field: f.to_string(),
        };
        if header.kind != SnapshotKind::Surrogate {
            return Err(field("kind (not a surrogate snapshot)"));
        }
        let (d, m) = (header.input_dim, header.output_dim);
        if header.limits.len() != d {
            return Err(field("limits (count differs from d)"));
        }
        check_limits(&header.limits).map_err(|_| field("limits"))?;
        let cfg = snapshot::take_array(&arrays, "config", &[8], path)?.data.clone();
        let round = cfg[7] as usize;
        let config = SurrogateConfig {
            hidden_size: cfg[0] as usize,
            n_layers: cfg[1] as usize,
            lr: cfg[2],
            pre_it: cfg[3] as usize,
            upd_it: cfg[4] as usize,
            gamma: cfg[5],
            budget: (cfg[6] >= 0.0).then_some(cfg[6] as usize),
        };
        let meta = &snapshot::take_array(&arrays, "pregrid.meta", &[2], path)?.data;
        let kind = match meta[0] as u32 {
            0 => GridKind::Tensor,
            1 => GridKind::Sobol,
            _ => return Err(field("pregrid.meta (unknown grid kind)")),
        };
        let n_pre = arrays
            .iter()
            .find(|a| a.name == "pregrid.points")
            .and_then(|a| a.shape.first().copied())
            .ok_or_else(|| field("pregrid.points (missing)"))?;
        let take_tensor = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let a = snapshot::take_array(&arrays, name, shape, path)?;
            Ok(Tensor::matrix(shape[0], shape[1], a.data.clone())?)
        };
        let pre_grid = PreGrid {
            kind,
            gridnum: meta[1] as usize,
            limits: header.limits.clone(),
            points: take_tensor("pregrid.points", &[n_pre, d])?,
            values: take_tensor("pregrid.values", &[n_pre, m])?,
        };
        // rebuild the network skeleton, then overwrite every tensor
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(pre_grid, config, &mut rng).map_err(|e| field(&format!("config ({e})")))?;
        model.out_mean = snapshot::take_array(&arrays, "out_mean", &[m], path)?.data.clone();
        model.out_sd = snapshot::take_array(&arrays, "out_sd", &[m], path)?.data.clone();
        model.round = round;
        let count = snapshot::take_array(&arrays, "archive.count", &[1], path)?.data[0] as usize;
        for j in 0..count {
            let pts = arrays
                .iter()
                .find(|a| a.name == format!("archive{j}.points"))
                .ok_or_else(|| field(&format!("archive{j}.points (missing)")))?;
            let k = pts.shape.first().copied().unwrap_or(0);
            model.archive.push(ArchiveBatch {
                points: take_tensor(&format!("archive{j}.points"), &[k, d])?,
                values: take_tensor(&format!("archive{j}.values"), &[k, m])?,
                round: snapshot::take_array(&arrays, &format!("archive{j}.round"), &[1], path)?.data[0] as usize,
            });
        }
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let shape = model.params.get(id).shape().to_vec();
            let a = snapshot::take_array(&arrays, &name, &shape, path)?;
            model.params.get_mut(id).data_mut().copy_from_slice(&a.data);
        }
        Ok(model)
    }

    /// Loads a snapshot and checks its declared dimensions.
    pub fn load_checked(path: &Path, d: usize, m: usize) -> Result<Self> {
        let model = Self::load(path)?;
        if model.d != d || model.m != m {
            return Err(Error::Snapshot {
                path: path.to_path_buf(),
                field: format!("d/m (file has {}x{}, expected {d}x{m})", model.d, model.m),
            });
        }
        Ok(model)
    }
}

fn tensor_array(name: &str, t: &Tensor) -> NamedArray {
    NamedArray::new(name, t.shape().to_vec(), t.data().to_vec())
}
