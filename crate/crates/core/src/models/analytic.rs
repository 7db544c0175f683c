//! Closed-form benchmark maps: the two-parameter toy map, the
//! over-parameterized Sobol map, and the modified Friedman regression.

use std::f64::consts::PI;

use super::Model;
use crate::error::{Error, Result};
use crate::graph::{Tape, Tensor, Var};

fn check_cols(params: &Tensor, d: usize, who: &str) -> Result<()> {
    if params.cols() != d {
        return Err(Error::Dimension(format!("{who} expects {d} parameters per row, got {}", params.cols())));
    }
    Ok(())
}

/// `f(z) = (z1^3/10 + exp(z2/3), z1^3/10 - exp(z2/3))`.
#[derive(Clone, Debug, Default)]
pub struct Trivial;

pub fn trivial_solve(z: &Tensor) -> Result<Tensor> {
    check_cols(z, 2, "trivial")?;
    let mut out = Vec::with_capacity(z.rows() * 2);
    for r in 0..z.rows() {
        let row = z.row_slice(r);
        let cube = row[0].powi(3) / 10.0;
        let e = (row[1] / 3.0).exp();
        out.push(cube + e);
        out.push(cube - e);
    }
    Ok(Tensor::matrix(z.rows(), 2, out)?)
}

impl Model for Trivial {
    fn name(&self) -> &str {
        "trivial"
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn solve_t(&self, params: &Tensor) -> Result<Tensor> {
        trivial_solve(params)
    }
    fn solve_tape(&self, tape: &mut Tape, z: Var) -> Option<Result<Var>> {
        Some((|| {
            check_cols(tape.value(z), 2, "trivial")?;
            let z1 = tape.slice(z, 1, 0, 1)?;
            let z2 = tape.slice(z, 1, 1, 2)?;
            let c = tape.pow(z1, 3.0)?;
            let c = tape.scale(c, 0.1)?;
            let s = tape.scale(z2, 1.0 / 3.0)?;
            let e = tape.exp(s)?;
            let f1 = tape.add(c, e)?;
            let f2 = tape.sub(c, e)?;
            Ok(tape.concat(&[f1, f2], 1)?)
        })())
    }
}

pub const HIGHDIM_A: [f64; 5] = [0.084, 0.229, 0.913, 0.152, 0.826];

/// `f(z) = A g(e^z)` with `g_i(r) = (2|2a_i - 1| + r_i)/(1 + r_i)` and a
/// bidiagonal `4 x 5` matrix `A` scaled by `1/sqrt(2)`. `A` has the null
/// vector `(1, -1, 1, -1, 1)`.
#[derive(Clone, Debug, Default)]
pub struct Highdim;

impl Highdim {
    pub fn matrix() -> [[f64; 5]; 4] {
        let s = 1.0 / 2f64.sqrt();
        let mut a = [[0.0; 5]; 4];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = s;
            row[i + 1] = s;
        }
        a
    }

    pub fn offsets() -> [f64; 5] {
        HIGHDIM_A.map(|a| 2.0 * (2.0 * a - 1.0f64).abs())
    }

    /// `g(e^z)` written with logistic functions, stable for any `z`.
    pub fn g(z: f64, i: usize) -> f64 {
        let c = Self::offsets()[i];
        c * crate::graph::sigmoid(-z) + crate::graph::sigmoid(z)
    }

    /// Inverse of `g(e^z)` for the `i`-th coordinate.
    pub fn g_inverse(g: f64, i: usize) -> f64 {
        let c = Self::offsets()[i];
        // g = (c + r)/(1 + r)  =>  r = (g - c)/(1 - g)
        ((g - c) / (1.0 - g)).ln()
    }
}

pub fn highdim_solve(z: &Tensor) -> Result<Tensor> {
    check_cols(z, 5, "highdim")?;
    let a = Highdim::matrix();
    let mut out = Vec::with_capacity(z.rows() * 4);
    for r in 0..z.rows() {
        let g: Vec<f64> = z.row_slice(r).iter().enumerate().map(|(i, &v)| Highdim::g(v, i)).collect();
        for row in &a {
            out.push(row.iter().zip(&g).map(|(x, y)| x * y).sum());
        }
    }
    Ok(Tensor::matrix(z.rows(), 4, out)?)
}

impl Model for Highdim {
    fn name(&self) -> &str {
        "highdim"
    }
    fn input_dim(&self) -> usize {
        5
    }
    fn output_dim(&self) -> usize {
        4
    }
    fn solve_t(&self, params: &Tensor) -> Result<Tensor> {
        highdim_solve(params)
    }
    fn solve_tape(&self, tape: &mut Tape, z: Var) -> Option<Result<Var>> {
        Some((|| {
            check_cols(tape.value(z), 5, "highdim")?;
            let a = Highdim::matrix();
            let c = Highdim::offsets();
            // f = sigmoid(-z) (diag(c) A^T) + sigmoid(z) A^T
            let mut at = Vec::with_capacity(20);
            let mut cat = Vec::with_capacity(20);
            for (j, cj) in c.iter().enumerate() {
                for row in &a {
                    at.push(row[j]);
                    cat.push(cj * row[j]);
                }
            }
            let at = tape.constant(Tensor::matrix(5, 4, at)?);
            let cat = tape.constant(Tensor::matrix(5, 4, cat)?);
            let pos = tape.sigmoid(z)?;
            let nz = tape.neg(z)?;
            let neg = tape.sigmoid(nz)?;
            let p1 = tape.matmul(neg, cat)?;
            let p2 = tape.matmul(pos, at)?;
            Ok(tape.add(p1, p2)?)
        })())
    }
}

/// Covariate matrix `X` (`n x 10`, entries in `[0, 1]`) of the Friedman
/// regression.
#[derive(Clone, Debug)]
pub struct Friedman {
    x: Tensor,
    /// Basis rows `[sin(pi x1 x2); x3^2; x3; 1; x4..x10]`, `11 x n`.
    basis: Tensor,
}

impl Friedman {
    pub fn new(x: Tensor) -> Result<Self> {
        check_cols(&x, 10, "friedman design")?;
        let n = x.rows();
        let mut basis = vec![0.0; 11 * n];
        for i in 0..n {
            let r = x.row_slice(i);
            basis[i] = (PI * r[0] * r[1]).sin();
            basis[n + i] = r[2] * r[2];
            basis[2 * n + i] = r[2];
            basis[3 * n + i] = 1.0;
            for j in 3..10 {
                basis[(j + 1) * n + i] = r[j];
            }
        }
        Ok(Self {
            basis: Tensor::matrix(11, n, basis)?,
            x,
        })
    }

    pub fn design(&self) -> &Tensor {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// Coefficients on the basis rows: `[b1, b2^2, -2 b2^2 b3, b2^2 b3^2, b4..b10]`.
    /// `b2` only enters through `b2 * b2`, so flipping its sign is exact.
    fn coefficients(beta: &[f64]) -> [f64; 11] {
        let b2sq = beta[1] * beta[1];
        let mut c = [0.0; 11];
        c[0] = beta[0];
        c[1] = b2sq;
        c[2] = -2.0 * b2sq * beta[2];
        c[3] = b2sq * beta[2] * beta[2];
        c[4..].copy_from_slice(&beta[3..10]);
        c
    }
}

/// `mu_i = b1 sin(pi x_i1 x_i2) + b2^2 (x_i3 - b3)^2 + sum_{j>=4} b_j x_ij`,
/// one row per `beta` row, one column per observation.
pub fn friedman_mu(model: &Friedman, beta: &Tensor) -> Result<Tensor> {
    check_cols(beta, 10, "friedman")?;
    let n = model.n();
    let mut out = vec![0.0; beta.rows() * n];
    for b in 0..beta.rows() {
        let c = Friedman::coefficients(beta.row_slice(b));
        let row = &mut out[b * n..(b + 1) * n];
        for (k, ck) in c.iter().enumerate() {
            let basis = &model.basis.data()[k * n..(k + 1) * n];
            for (o, v) in row.iter_mut().zip(basis) {
                *o += ck * v;
            }
        }
    }
    Ok(Tensor::matrix(beta.rows(), n, out)?)
}

/// Friedman mean with the unmodified linear `b2` term, used only to
/// generate alternative data.
pub fn friedman_mu_original(x: &[f64], beta: &[f64]) -> f64 {
    beta[0] * (PI * x[0] * x[1]).sin()
        + beta[1] * (x[2] - beta[2]).powi(2)
        + (3..10).map(|j| beta[j] * x[j]).sum::<f64>()
}

impl Model for Friedman {
    fn name(&self) -> &str {
        "adaann"
    }
    fn input_dim(&self) -> usize {
        10
    }
    fn output_dim(&self) -> usize {
        self.n()
    }
    fn solve_t(&self, params: &Tensor) -> Result<Tensor> {
        friedman_mu(self, params)
    }
    fn solve_tape(&self, tape: &mut Tape, beta: Var) -> Option<Result<Var>> {
        Some((|| {
            check_cols(tape.value(beta), 10, "friedman")?;
            let b1 = tape.slice(beta, 1, 0, 1)?;
            let b2 = tape.slice(beta, 1, 1, 2)?;
            let b3 = tape.slice(beta, 1, 2, 3)?;
            let rest = tape.slice(beta, 1, 3, 10)?;
            let b2sq = tape.mul(b2, b2)?;
            let t = tape.mul(b2sq, b3)?;
            let c2 = tape.scale(t, -2.0)?;
            let c3 = tape.mul(t, b3)?;
            let coeffs = tape.concat(&[b1, b2sq, c2, c3, rest], 1)?;
            let basis = tape.constant(self.basis.clone());
            Ok(tape.matmul(coeffs, basis)?)
        })())
    }
}
