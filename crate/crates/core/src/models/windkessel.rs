//! Lumped-parameter circulation models integrated with fixed-step RK4.
//!
//! Parameters are CGS (resistance in Barye s/ml, capacitance in ml/Barye);
//! reported pressures are mmHg.

use std::path::Path;
use std::sync::Arc;

use super::Model;
use crate::error::{Error, Result};
use crate::graph::Tensor;

pub const MMHG_TO_BARYE: f64 = 1333.22;
pub const DISTAL_PRESSURE_MMHG: f64 = 55.0;
pub const CYCLE_LENGTH: f64 = 60.0 / 72.0;
pub const SYSTOLE: f64 = 0.3;
pub const PEAK_FLOW: f64 = 485.0;
pub const STEPS_PER_CYCLE: usize = 1000;
pub const N_CYCLES: usize = 10;

/// Periodic inflow `Q_p(t)` in ml/s.
#[derive(Clone, Debug)]
pub enum Waveform {
    /// `peak * sin^2(pi t / systole)` during systole, zero otherwise.
    Pulse { peak: f64, systole: f64, period: f64 },
    Constant { flow: f64, period: f64 },
    /// Tabulated `(t, Q)` over one period, linearly interpolated and wrapped.
    Table { t: Arc<[f64]>, q: Arc<[f64]> },
}

impl Default for Waveform {
    fn default() -> Self {
        Waveform::Pulse {
            peak: PEAK_FLOW,
            systole: SYSTOLE,
            period: CYCLE_LENGTH,
        }
    }
}

impl Waveform {
    pub fn period(&self) -> f64 {
        match self {
            Waveform::Pulse { period, .. } | Waveform::Constant { period, .. } => *period,
            Waveform::Table { t, .. } => t[t.len() - 1] - t[0],
        }
    }

    pub fn flow(&self, time: f64) -> f64 {
        match self {
            Waveform::Pulse { peak, systole, period } => {
                let s = time.rem_euclid(*period);
                if s < *systole {
                    peak * (std::f64::consts::PI * s / systole).sin().powi(2)
                } else {
                    0.0
                }
            }
            Waveform::Constant { flow, .. } => *flow,
            Waveform::Table { t, q } => {
                let s = t[0] + (time - t[0]).rem_euclid(self.period());
                let k = t.partition_point(|&v| v <= s).clamp(1, t.len() - 1);
                let (t0, t1) = (t[k - 1], t[k]);
                let w = (s - t0) / (t1 - t0);
                q[k - 1] + w * (q[k] - q[k - 1])
            }
        }
    }

    /// Reads a two-column `t,Q` CSV (an optional header row is skipped).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::DataFile {
            path: path.to_path_buf(),
            detail,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| bad(e.to_string()))?;
        let (mut ts, mut qs) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 2 {
                return Err(bad(format!("row {} has {} columns, expected 2", i + 1, rec.len())));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(t), Ok(q)) => {
                    ts.push(t);
                    qs.push(q);
                }
                _ if i == 0 => continue,
                _ => return Err(bad(format!("row {} is not numeric", i + 1))),
            }
        }
        if ts.len() < 2 {
            return Err(bad("need at least two samples".into()));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("time column must be strictly increasing".into()));
        }
        Ok(Waveform::Table {
            t: ts.into(),
            q: qs.into(),
        })
    }
}

/// Fixed-step RK4 result: `times[k]` and `states[k]` for `k = 0..=steps`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Classical RK4 with `steps` equal steps on `[t0, t1]`. `rhs(t, y, dy)`
/// evaluates any algebraic variables inline and writes `dy/dt`.
pub fn rk4_dae<F>(rhs: F, y0: &[f64], t0: f64, t1: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
    };
    traj.times.push(t0);
    traj.states.push(y0.to_vec());
    rk4_for_each(rhs, y0, t0, t1, steps, |t, y| {
        traj.times.push(t);
        traj.states.push(y.to_vec());
    })?;
    Ok(traj)
}

/// Streaming RK4: calls `observe(t, y)` after every step.
pub fn rk4_for_each<F, O>(mut rhs: F, y0: &[f64], t0: f64, t1: f64, steps: usize, mut observe: O) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    if steps == 0 {
        return Err(Error::InvalidArgument("RK4 needs at least one step".into()));
    }
    let n = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        rhs(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("RK4 state at step {}", step + 1)));
        }
        observe(t0 + (step + 1) as f64 * h, &y);
    }
    Ok(y)
}

/// `(min, max, mean)` of proximal pressure over the last of `N_CYCLES`
/// cycles. `pressure(t, state)` maps the ODE state to `P_p` in Barye.
fn final_cycle_stats<F, P>(rhs: F, pressure: P, waveform: &Waveform) -> Result<[f64; 3]>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    P: Fn(f64, &[f64]) -> f64,
{
    let period = waveform.period();
    let y0 = [DISTAL_PRESSURE_MMHG * MMHG_TO_BARYE];
    let total = STEPS_PER_CYCLE * N_CYCLES;
    let start = total - STEPS_PER_CYCLE;
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let mut k = 0usize;
    let mut last = 0.0;
    let mut first = None;
    rk4_for_each(rhs, &y0, 0.0, period * N_CYCLES as f64, total, |t, y| {
        k += 1;
        if k >= start {
            let p = pressure(t, y);
            lo = lo.min(p);
            hi = hi.max(p);
            if first.is_none() {
                first = Some(p);
            } else {
                sum += last;
            }
            last = p;
        }
    })?;
    // trapezoid over the STEPS_PER_CYCLE intervals of the final cycle
    let first = first.expect("final cycle observed");
    let interior = sum - first;
    let mean = (0.5 * (first + last) + interior) / STEPS_PER_CYCLE as f64;
    Ok([lo / MMHG_TO_BARYE, hi / MMHG_TO_BARYE, mean / MMHG_TO_BARYE])
}

fn check_params(params: &Tensor, d: usize, who: &str) -> Result<()> {
    if params.cols() != d {
        return Err(Error::Dimension(format!("{who} expects {d} parameters per row, got {}", params.cols())));
    }
    if !params.all_finite() {
        return Err(Error::NonFinite(format!("{who} parameters")));
    }
    Ok(())
}

/// Two-element model: `Q_d = (P_p - P_d)/R`, `dP_p/dt = (Q_p - Q_d)/C`.
pub fn rc_solve_with(params: &Tensor, waveform: &Waveform) -> Result<Tensor> {
    check_params(params, 2, "rc")?;
    let pd = DISTAL_PRESSURE_MMHG * MMHG_TO_BARYE;
    let mut out = Vec::with_capacity(params.rows() * 3);
    for r in 0..params.rows() {
        let (res, cap) = (params.get(r, 0), params.get(r, 1));
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let qd = (y[0] - pd) / res;
            dy[0] = (waveform.flow(t) - qd) / cap;
        };
        let stats = final_cycle_stats(rhs, |_, y| y[0], waveform)
            .map_err(|e| Error::Model(format!("rc at R={res}, C={cap}: {e}")))?;
        out.extend_from_slice(&stats);
    }
    Ok(Tensor::matrix(params.rows(), 3, out)?)
}

pub fn rc_solve(params: &Tensor) -> Result<Tensor> {
    rc_solve_with(params, &Waveform::default())
}

/// Three-element model with capacitor pressure `P_c` as state:
/// `Q_d = (P_c - P_d)/R_d`, `dP_c/dt = (Q_p - Q_d)/C`, `P_p = P_c + Q_p R_p`.
pub fn rcr_solve_with(params: &Tensor, waveform: &Waveform) -> Result<Tensor> {
    check_params(params, 3, "rcr")?;
    let pd = DISTAL_PRESSURE_MMHG * MMHG_TO_BARYE;
    let mut out = Vec::with_capacity(params.rows() * 3);
    for r in 0..params.rows() {
        let (rp, rd, cap) = (params.get(r, 0), params.get(r, 1), params.get(r, 2));
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let qd = (y[0] - pd) / rd;
            dy[0] = (waveform.flow(t) - qd) / cap;
        };
        let stats = final_cycle_stats(rhs, |t, y| y[0] + waveform.flow(t) * rp, waveform)
            .map_err(|e| Error::Model(format!("rcr at Rp={rp}, Rd={rd}, C={cap}: {e}")))?;
        out.extend_from_slice(&stats);
    }
    Ok(Tensor::matrix(params.rows(), 3, out)?)
}

pub fn rcr_solve(params: &Tensor) -> Result<Tensor> {
    rcr_solve_with(params, &Waveform::default())
}

#[derive(Clone, Debug, Default)]
pub struct Rc {
    pub waveform: Waveform,
}

impl Model for Rc {
    fn name(&self) -> &str {
        "rc"
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn solve_t(&self, params: &Tensor) -> Result<Tensor> {
        rc_solve_with(params, &self.waveform)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Rcr {
    pub waveform: Waveform,
}

impl Model for Rcr {
    fn name(&self) -> &str {
        "rcr"
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn solve_t(&self, params: &Tensor) -> Result<Tensor> {
        rcr_solve_with(params, &self.waveform)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let traj = rk4_dae(|_, y, dy| dy[0] = -y[0], &[1.0], 0.0, 1.0, 100).unwrap();
        assert!((traj.states[100][0] - (-1f64).exp()).abs() < 1e-8);
        assert_eq!(traj.times.len(), 101);
        let flat = rk4_dae(|_, _, dy| dy[0] = 0.0, &[2.5], 0.0, 3.0, 7).unwrap();
        assert!(flat.states.iter().all(|s| s[0] == 2.5));
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let err = |n| (rk4_dae(|_, y, dy| dy[0] = -y[0], &[1.0], 0.0, 1.0, n).unwrap().states[n][0] - (-1f64).exp()).abs();
        let ratio = err(10) / err(20);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_reports_blow_up_step() {
        let err = rk4_dae(|_, y, dy| dy[0] = y[0] * y[0], &[1.0], 0.0, 5.0, 50).unwrap_err();
        assert!(err.to_string().contains("step"), "{err}");
    }

    #[test]
    fn waveform_stroke_volume() {
        let w = Waveform::default();
        let n = 100_000;
        let h = w.period() / n as f64;
        let sv: f64 = (0..n).map(|k| w.flow((k as f64 + 0.5) * h) * h).sum();
        assert!((sv - 72.75).abs() < 1e-3, "{sv}");
        assert_eq!(w.flow(0.5), 0.0);
        assert!((w.flow(0.15 + CYCLE_LENGTH) - PEAK_FLOW).abs() < 1e-9);
    }

    #[test]
    fn table_waveform_interpolates_and_wraps() {
        let w = Waveform::Table {
            t: vec![0.0, 0.5, 1.0].into(),
            q: vec![0.0, 10.0, 0.0].into(),
        };
        assert!((w.flow(0.25) - 5.0).abs() < 1e-12);
        assert!((w.flow(1.75) - 5.0).abs() < 1e-12);
        assert!((w.flow(-0.25) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn constant_inflow_steady_state() {
        let q = 90.0;
        let w = Waveform::Constant { flow: q, period: CYCLE_LENGTH };
        let out = rc_solve_with(&Tensor::row(vec![1000.0, 5e-5]), &w).unwrap();
        let expect = DISTAL_PRESSURE_MMHG + q * 1000.0 / MMHG_TO_BARYE;
        for v in out.data() {
            assert!((v - expect).abs() < 1e-9 * expect, "{v} vs {expect}");
        }
        let rcr = rcr_solve_with(&Tensor::from_rows(&[vec![400.0, 600.0, 5e-5], vec![600.0, 400.0, 5e-5]]).unwrap(), &w).unwrap();
        for v in rcr.data() {
            assert!((v - expect).abs() < 1e-9 * expect);
        }
    }

    #[test]
    fn larger_capacitance_smooths_pulse() {
        let out = rc_solve(&Tensor::from_rows(&[vec![1000.0, 5e-5], vec![1000.0, 5e-4]]).unwrap()).unwrap();
        let swing = |r: usize| out.get(r, 1) - out.get(r, 0);
        assert!(swing(1) < swing(0));
        for r in 0..2 {
            assert!(out.get(r, 0) <= out.get(r, 2) && out.get(r, 2) <= out.get(r, 1));
        }
    }

    #[test]
    fn rcr_mean_depends_on_total_resistance() {
        let out = rcr_solve(&Tensor::from_rows(&[vec![1000.0, 1000.0, 5e-5], vec![1100.0, 900.0, 5e-5]]).unwrap()).unwrap();
        let rel = (out.get(0, 2) - out.get(1, 2)).abs() / out.get(0, 2);
        assert!(rel < 0.01, "{rel}");
    }
}
