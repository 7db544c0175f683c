//! Numerical checks shared by the property tests and the acceptance summary.
//! Each returns the worst error it measured so callers pick the threshold.

#![allow(dead_code)]

use flowinfer::flows::{draw_base, FlowConfig, FlowStack, FlowType, Mode};
use flowinfer::graph::{Tape, Tensor, Var};
use flowinfer::inference::free_energy_at;
use flowinfer::models::rk4_dae;
use flowinfer::rng::{SeedTree, Stream};
use flowinfer::surrogate::{GridKind, PreGrid, SurrogateConfig, SurrogateModel};
use flowinfer::transforms::{TransformKind, UnivariateTransform};
use flowinfer::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Scalar built from most tape ops. `inputs` are `x (3x4)`, `w (4x2)`,
/// `b (1x2)`, `p (3x4, positive)`.
fn composite(tape: &mut Tape, v: &[Var]) -> Result<Var> {
    let (x, w, b, p) = (v[0], v[1], v[2], v[3]);
    let h = tape.affine(x, w, b)?;
    let h = tape.tanh(h)?;
    let m = tape.matmul(x, w)?;
    let m = tape.sigmoid(m)?;
    let s = tape.mul(h, m)?;
    let lp = tape.log(p)?;
    let e = tape.exp(lp)?;
    let q = tape.div(x, e)?;
    let q = tape.pow(q, 2.0)?;
    let sp = tape.softplus(x)?;
    let sq = tape.sub(q, sp)?;
    let left = tape.slice(sq, 1, 0, 2)?;
    let mixed = tape.add(left, s)?;
    let br = tape.broadcast_rows(b, 3)?;
    let cat = tape.concat(&[mixed, br], 1)?;
    let var = tape.variance(cat, 0)?;
    let mean = tape.mean_axis(cat, 1)?;
    let nm = tape.neg(mean)?;
    let a = tape.sum(var)?;
    let c = tape.sum_axis(nm, 0)?;
    let c = tape.sum(c)?;
    let c = tape.scale(c, 0.37)?;
    let r = tape.add(a, c)?;
    Ok(tape.shift(r, 1.5)?)
}

/// Worst relative error of reverse-mode gradients against central differences.
pub fn autodiff_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        rand_tensor(&mut rng, 3, 4, -1.0, 1.0),
        rand_tensor(&mut rng, 4, 2, -1.0, 1.0),
        rand_tensor(&mut rng, 1, 2, -1.0, 1.0),
        rand_tensor(&mut rng, 3, 4, 0.5, 2.0),
    ];
    let eval = |ins: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = composite(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let out = composite(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let g = tape.grad(*v).unwrap().to_vec();
        for k in 0..g.len() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[i].data_mut()[k] += h;
            minus[i].data_mut()[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

/// A stack pushed away from its identity initialisation, with batch-norm
/// running statistics populated by a few training passes.
pub fn perturbed_stack(flow_type: FlowType, d: usize, batch_norm: bool, seed: u64) -> FlowStack {
    let cfg = FlowConfig {
        flow_type,
        n_blocks: 3,
        hidden_size: 8,
        batch_norm,
        ..Default::default()
    };
    let seeds = SeedTree::new(seed);
    let mut stack = FlowStack::new(d, &cfg, &seeds).unwrap();
    let mut rng = seeds.stream(Stream::Output);
    for t in stack.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += 0.2 * (rng.random::<f64>() - 0.5);
        }
    }
    for _ in 0..3 {
        stack.sample(64, &mut rng, Mode::Train).unwrap();
    }
    stack
}

fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

/// Worst |log-det - ln|det J_fd|| over a batch, in evaluation mode.
pub fn flow_log_det_error(flow_type: FlowType, d: usize, batch_norm: bool, seed: u64) -> f64 {
    let mut stack = perturbed_stack(flow_type, d, batch_norm, seed);
    let z0 = draw_base(8, d, &mut SeedTree::new(seed).stream(Stream::BaseSampling));
    let (_, log_det) = stack.transform(&z0, Mode::Eval).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for r in 0..z0.rows() {
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut p = Tensor::row(z0.row_slice(r).to_vec());
            let mut m = p.clone();
            p.data_mut()[j] += h;
            m.data_mut()[j] -= h;
            let (yp, _) = stack.transform(&p, Mode::Eval).unwrap();
            let (ym, _) = stack.transform(&m, Mode::Eval).unwrap();
            for (i, row) in jac.iter_mut().enumerate() {
                row[j] = (yp.data()[i] - ym.data()[i]) / (2.0 * h);
            }
        }
        worst = worst.max((log_abs_det(jac) - log_det[r]).abs());
    }
    worst
}

/// Worst absolute error of `inverse(forward(z0)) - z0`.
pub fn flow_round_trip_error(flow_type: FlowType, d: usize, batch_norm: bool, seed: u64) -> f64 {
    let mut stack = perturbed_stack(flow_type, d, batch_norm, seed);
    let z0 = draw_base(64, d, &mut SeedTree::new(seed).stream(Stream::BaseSampling));
    let (zk, _) = stack.transform(&z0, Mode::Eval).unwrap();
    let back = stack.inverse(&zk).unwrap();
    back.data().iter().zip(z0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Relative error of `exp(log_jacobian)` against a central difference of
/// `forward`, over a grid of points for each built-in transform kind.
pub fn transform_derivative_error() -> f64 {
    let transforms = [
        UnivariateTransform::new(TransformKind::Identity, 0.0, 1.0, 0.0, 1.0).unwrap(),
        UnivariateTransform::new(TransformKind::Linear, -2.0, 3.0, 10.0, 60.0).unwrap(),
        UnivariateTransform::new(TransformKind::Tanh, -7.0, 7.0, 100.0, 1500.0).unwrap(),
        UnivariateTransform::new(TransformKind::Tanh, -1.0, 1.0, -5.0, 5.0).unwrap(),
        UnivariateTransform::new(TransformKind::Exp, -7.0, 7.0, 1e-5, 1e-2).unwrap(),
    ];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for t in &transforms {
        for k in 0..=40 {
            let z = -4.0 + 0.2 * k as f64;
            let fd = (t.forward(z + h) - t.forward(z - h)) / (2.0 * h);
            let an = t.log_jacobian(z).exp();
            worst = worst.max((fd - an).abs() / an);
        }
    }
    worst
}

/// Observed RK4 order on the RC equation `C dP/dt = Q(t) - (P - Pd)/R`
/// with a smooth periodic inflow, from errors at `n` and `2n` steps
/// against a fine reference.
pub fn rk4_observed_order() -> f64 {
    let (r, c, pd) = (1000.0, 5e-5, 55.0 * 1333.22);
    let period = 60.0 / 72.0;
    let q = move |t: f64| 100.0 + 80.0 * (2.0 * std::f64::consts::PI * t / period).sin();
    let rhs = move |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = (q(t) - (y[0] - pd) / r) / c;
    let end = |n: usize| *rk4_dae(rhs, &[pd + 1.0e4], 0.0, period, n).unwrap().states[n].first().unwrap();
    let reference = end(20_000);
    let e1 = (end(100) - reference).abs();
    let e2 = (end(200) - reference).abs();
    (e1 / e2).log2()
}

/// Free energy of a flow against its own density (q = p). Returns the
/// estimate and its Monte Carlo standard error.
pub fn free_energy_at_exact_target(seed: u64) -> (f64, f64) {
    let d = 3;
    let stack = perturbed_stack(FlowType::Maf, d, true, seed);
    let frozen = stack.clone();
    // log q_K(z_K) = log q0(z0) - log|det|, with z0 recovered by inversion
    let hook = move |tape: &mut Tape, zk: Var| -> Result<Var> {
        let mut s = frozen.clone();
        let z0 = s.inverse(tape.value(zk))?;
        let (_, log_det) = s.transform(&z0, Mode::Eval)?;
        let lq0 = flowinfer::flows::base_log_density(&z0);
        let lq: Vec<f64> = lq0.iter().zip(&log_det).map(|(a, b)| a - b).collect();
        Ok(tape.constant(Tensor::column(lq)))
    };
    let n = 2000;
    let z0 = draw_base(n, d, &mut SeedTree::new(seed).stream(Stream::BaseSampling));
    let mut s = stack.clone();
    let fe = free_energy_at(&mut s, &hook, 1.0, z0.clone(), Mode::Eval).unwrap();
    let (_, log_det) = s.transform(&z0, Mode::Eval).unwrap();
    let lq0 = flowinfer::flows::base_log_density(&z0);
    let terms: Vec<f64> = (0..n).map(|i| lq0[i] - fe.log_p[i] - log_det[i]).collect();
    let mean = terms.iter().sum::<f64>() / n as f64;
    let var = terms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (fe.value(), (var / n as f64).sqrt())
}

/// Small surrogate of `(sin x, x y)` on a 3x3 grid over `[-1, 1]^2`.
pub fn quick_surrogate(budget: Option<usize>, seed: u64) -> SurrogateModel {
    let grid = PreGrid::evaluate(GridKind::Tensor, 3, &[[-1.0, 1.0]; 2], |p| {
        Tensor::matrix(
            p.rows(),
            2,
            (0..p.rows()).flat_map(|r| [p.get(r, 0).sin(), p.get(r, 0) * p.get(r, 1)]).collect(),
        )
        .map_err(Into::into)
    })
    .unwrap();
    let cfg = SurrogateConfig {
        hidden_size: 16,
        pre_it: 300,
        upd_it: 60,
        budget,
        ..Default::default()
    };
    let mut s = SurrogateModel::new(grid, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    s.pre_train().unwrap();
    s
}

/// Mean and unbiased SD of each column.
pub fn column_stats(t: &Tensor) -> Vec<(f64, f64)> {
    flowinfer::inference::marginal_stats(t).unwrap()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
