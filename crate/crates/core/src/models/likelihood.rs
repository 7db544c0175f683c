//! Independent Gaussian observation likelihood.

use std::f64::consts::PI;

use super::ObservationSet;
use crate::error::{Error, Result};
use crate::graph::{Tape, Tensor, Var};

/// Per-sample `sum_i sum_r log N(x_ir; f_i, sd_i^2)`, constants included.
pub fn gaussian_log_density(outputs: &Tensor, obs: &ObservationSet) -> Result<Vec<f64>> {
    obs.check_outputs(outputs.cols())?;
    let m = obs.output_dim();
    Ok((0..outputs.rows())
        .map(|b| {
            let f = outputs.row_slice(b);
            (0..m)
                .map(|i| {
                    let sd = obs.sd[i];
                    let norm = -0.5 * (2.0 * PI * sd * sd).ln();
                    obs.x[i]
                        .iter()
                        .map(|&x| norm - 0.5 * ((x - f[i]) / sd).powi(2))
                        .sum::<f64>()
                })
                .sum()
        })
        .collect())
}

/// Precomputed sufficient statistics for the tape version: with `R` repeats,
/// `sum_r (x_r - f)^2 = R f^2 - 2 f S1 + S2`.
#[derive(Clone, Debug)]
pub struct GaussianLikelihood {
    quad: Tensor,
    lin: Tensor,
    constant: f64,
    m: usize,
}

impl GaussianLikelihood {
    pub fn new(obs: &ObservationSet) -> Self {
        let m = obs.output_dim();
        let mut quad = Vec::with_capacity(m);
        let mut lin = Vec::with_capacity(m);
        let mut constant = 0.0;
        for i in 0..m {
            let var = obs.sd[i] * obs.sd[i];
            let r = obs.x[i].len() as f64;
            let s1: f64 = obs.x[i].iter().sum();
            let s2: f64 = obs.x[i].iter().map(|v| v * v).sum();
            quad.push(-r / (2.0 * var));
            lin.push(s1 / var);
            constant += -s2 / (2.0 * var) - 0.5 * r * (2.0 * PI * var).ln();
        }
        Self {
            quad: Tensor::column(quad),
            lin: Tensor::column(lin),
            constant,
            m,
        }
    }

    /// `batch x m` outputs to a `batch x 1` log-likelihood column.
    pub fn log_density(&self, tape: &mut Tape, outputs: Var) -> Result<Var> {
        if tape.value(outputs).cols() != self.m {
            return Err(Error::Dimension(format!(
                "likelihood expects {} outputs, got {}",
                self.m,
                tape.value(outputs).cols()
            )));
        }
        let sq = tape.mul(outputs, outputs)?;
        let quad = tape.constant(self.quad.clone());
        let lin = tape.constant(self.lin.clone());
        let a = tape.matmul(sq, quad)?;
        let b = tape.matmul(outputs, lin)?;
        let s = tape.add(a, b)?;
        Ok(tape.shift(s, self.constant)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: Vec<Vec<f64>>, sd: Vec<f64>) -> ObservationSet {
        ObservationSet::new(x, sd, None).unwrap()
    }

    #[test]
    fn zero_residual_single_observation() {
        let o = obs(vec![vec![1.7]], vec![0.3]);
        let lp = gaussian_log_density(&Tensor::row(vec![1.7]), &o).unwrap();
        assert!((lp[0] + 0.5 * (2.0 * PI * 0.09f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn matches_direct_density_formula() {
        let (sd, r) = (0.4f64, 0.9f64);
        let o = obs(vec![vec![0.0]], vec![sd]);
        let density = |res: f64| (-(res * res) / (2.0 * sd * sd)).exp() / (2.0 * PI * sd * sd).sqrt();
        let lp = gaussian_log_density(&Tensor::column(vec![r, 2.0 * r]), &o).unwrap();
        assert!((lp[0] - density(r).ln()).abs() < 1e-12);
        assert!((lp[0] - lp[1] - 3.0 * r * r / (2.0 * sd * sd)).abs() < 1e-12);
    }

    #[test]
    fn identical_repeats_scale_linearly() {
        let one = obs(vec![vec![2.0], vec![-1.0]], vec![0.5, 0.2]);
        let fifty = obs(vec![vec![2.0; 50], vec![-1.0; 50]], vec![0.5, 0.2]);
        let f = Tensor::row(vec![2.3, -0.8]);
        let a = gaussian_log_density(&f, &one).unwrap()[0];
        let b = gaussian_log_density(&f, &fifty).unwrap()[0];
        assert!((b - 50.0 * a).abs() < 1e-10 * b.abs());
    }

    #[test]
    fn tape_form_matches_direct_sum() {
        let o = obs(
            vec![vec![100.2, 101.9, 99.0], vec![147.0, 149.5, 148.8], vec![116.0, 117.1, 115.2]],
            vec![5.05, 7.40, 5.83],
        );
        let f = Tensor::from_rows(&[vec![101.0, 148.0, 116.5], vec![90.0, 160.0, 110.0]]).unwrap();
        let direct = gaussian_log_density(&f, &o).unwrap();
        let lik = GaussianLikelihood::new(&o);
        let mut tape = Tape::new();
        let fv = tape.constant(f);
        let lp = lik.log_density(&mut tape, fv).unwrap();
        for (a, b) in direct.iter().zip(tape.value(lp).data()) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}
