//! Per-coordinate maps from the flow's normalized space to the model's
//! physical space, with their log-Jacobians.
//!
//! For `(a, b, c, d)`:
//!
//! * `identity`: `y = z`
//! * `linear`: `y = c + (d - c)(z - a)/(b - a)`
//! * `tanh`: `y = c + (d - c)(tanh(z) + 1)/2`. `(a, b)` only documents the
//!   nominal normalized support; `[-7, 7]` already saturates to `[c, d]`.
//! * `exp`: `y = exp(m z + q)` with `m = ln(d/c)/(b - a)`, `q = ln c - m a`,
//!   so `a -> c` and `b -> d` exactly.
//!
//! Inputs outside `[a, b]` are allowed: `tanh` saturates, the others
//! extrapolate.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{softplus, Tape, Tensor, Var};

/// Extension point for user-defined monotone maps.
pub trait ScalarMap: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, z: f64) -> f64;
    fn log_jacobian(&self, z: f64) -> f64;
    /// Column-wise version on the tape: returns `(y, log_jacobian)`.
    fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)>;
}

#[derive(Clone)]
pub enum TransformKind {
    Identity,
    Tanh,
    Linear,
    Exp,
    Custom(Arc<dyn ScalarMap>),
}

impl fmt::Debug for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformKind::Identity => write!(f, "identity"),
            TransformKind::Tanh => write!(f, "tanh"),
            TransformKind::Linear => write!(f, "linear"),
            TransformKind::Exp => write!(f, "exp"),
            TransformKind::Custom(m) => write!(f, "custom({})", m.name()),
        }
    }
}

impl TransformKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "tanh" => Ok(Self::Tanh),
            "linear" => Ok(Self::Linear),
            "exp" => Ok(Self::Exp),
            other => Err(Error::Config(format!(
                "unknown transform kind '{other}' (expected identity, tanh, linear, exp)"
            ))),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Identity => "identity",
            Self::Tanh => "tanh",
            Self::Linear => "linear",
            Self::Exp => "exp",
            Self::Custom(m) => m.name(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct UnivariateTransform {
    kind: TransformKind,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

const LN_4: f64 = std::f64::consts::LN_2 * 2.0;

/// `ln(1 - tanh(z)^2)` without cancellation for large `|z|`.
fn log_sech2(z: f64) -> f64 {
    LN_4 - softplus(-2.0 * z) - softplus(2.0 * z)
}

impl UnivariateTransform {
    pub fn new(kind: TransformKind, a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("transform bounds must be finite".into()));
        }
        if !(a < b) {
            return Err(Error::InvalidArgument(format!("normalized interval needs a < b (got {a}, {b})")));
        }
        if matches!(kind, TransformKind::Linear | TransformKind::Exp | TransformKind::Tanh) && !(c < d) {
            return Err(Error::InvalidArgument(format!("physical interval needs c < d (got {c}, {d})")));
        }
        if matches!(kind, TransformKind::Exp) && !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("exp transform needs c > 0 (got {c})")));
        }
        Ok(Self { kind, a, b, c, d })
    }

    pub fn identity() -> Self {
        Self {
            kind: TransformKind::Identity,
            a: 0.0,
            b: 1.0,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn kind(&self) -> &TransformKind {
        &self.kind
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.a, self.b, self.c, self.d)
    }

    fn exp_coeffs(&self) -> (f64, f64) {
        let m = (self.d / self.c).ln() / (self.b - self.a);
        (m, self.c.ln() - m * self.a)
    }

    pub fn forward(&self, z: f64) -> f64 {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        match &self.kind {
            TransformKind::Identity => z,
            TransformKind::Linear => c + (d - c) * (z - a) / (b - a),
            TransformKind::Tanh => c + (d - c) * (z.tanh() + 1.0) / 2.0,
            TransformKind::Exp => {
                let (m, q) = self.exp_coeffs();
                (m * z + q).exp()
            }
            TransformKind::Custom(f) => f.forward(z),
        }
    }

    pub fn log_jacobian(&self, z: f64) -> f64 {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        match &self.kind {
            TransformKind::Identity => 0.0,
            TransformKind::Linear => ((d - c) / (b - a)).ln(),
            TransformKind::Tanh => ((d - c) / 2.0).ln() + log_sech2(z),
            TransformKind::Exp => {
                let (m, q) = self.exp_coeffs();
                m.ln() + m * z + q
            }
            TransformKind::Custom(f) => f.log_jacobian(z),
        }
    }

    /// Applies the map to a `batch x 1` column on the tape.
    pub fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        let n = tape.value(z).rows();
        let zeros = |tape: &mut Tape| tape.constant(Tensor::zeros(&[n, 1]));
        match &self.kind {
            TransformKind::Identity => Ok((z, zeros(tape))),
            TransformKind::Linear => {
                let slope = (d - c) / (b - a);
                let scaled = tape.scale(z, slope)?;
                let y = tape.shift(scaled, c - slope * a)?;
                let lj = tape.constant(Tensor::full(&[n, 1], slope.ln()));
                Ok((y, lj))
            }
            TransformKind::Tanh => {
                let t = tape.tanh(z)?;
                let scaled = tape.scale(t, (d - c) / 2.0)?;
                let y = tape.shift(scaled, (c + d) / 2.0)?;
                let m2 = tape.scale(z, -2.0)?;
                let p2 = tape.scale(z, 2.0)?;
                let s1 = tape.softplus(m2)?;
                let s2 = tape.softplus(p2)?;
                let s = tape.add(s1, s2)?;
                let neg = tape.neg(s)?;
                let lj = tape.shift(neg, ((d - c) / 2.0).ln() + LN_4)?;
                Ok((y, lj))
            }
            TransformKind::Exp => {
                let (m, q) = self.exp_coeffs();
                let scaled = tape.scale(z, m)?;
                let arg = tape.shift(scaled, q)?;
                let y = tape.exp(arg)?;
                let lj = tape.shift(arg, m.ln())?;
                Ok((y, lj))
            }
            TransformKind::Custom(f) => f.forward_tape(tape, z),
        }
    }
}

/// One independent [`UnivariateTransform`] per input coordinate.
#[derive(Clone, Debug)]
pub struct InputTransformation {
    dims: Vec<UnivariateTransform>,
}

impl InputTransformation {
    pub fn new(dims: Vec<UnivariateTransform>) -> Self {
        Self { dims }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            dims: vec![UnivariateTransform::identity(); d],
        }
    }

    /// Parses rows of `(kind, a, b, c, d)`.
    pub fn from_rows(rows: &[(String, f64, f64, f64, f64)]) -> Result<Self> {
        let dims = rows
            .iter()
            .map(|(k, a, b, c, d)| UnivariateTransform::new(TransformKind::parse(k)?, *a, *b, *c, *d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn get(&self, i: usize) -> &UnivariateTransform {
        &self.dims[i]
    }

    pub fn is_identity(&self) -> bool {
        self.dims.iter().all(|t| matches!(t.kind, TransformKind::Identity))
    }

    /// Normalized intervals `[a, b]`, the default surrogate limits.
    pub fn normalized_box(&self) -> Vec<[f64; 2]> {
        self.dims.iter().map(|t| [t.a, t.b]).collect()
    }

    fn check(&self, z: &Tensor) -> Result<()> {
        if z.cols() != self.dims.len() {
            return Err(Error::Dimension(format!(
                "transform has {} coordinates, input has {}",
                self.dims.len(),
                z.cols()
            )));
        }
        Ok(())
    }

    /// Normalized to physical space, row by row.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.check(z)?;
        let cols = self.dims.len();
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.dims[i % cols].forward(v))
            .collect();
        Ok(Tensor::matrix(z.rows(), cols, data)?)
    }

    /// Sum over coordinates of the log-derivative, one value per row.
    pub fn log_jacobian(&self, z: &Tensor) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok((0..z.rows())
            .map(|r| {
                z.row_slice(r)
                    .iter()
                    .zip(&self.dims)
                    .map(|(&v, t)| t.log_jacobian(v))
                    .sum()
            })
            .collect())
    }

    /// Tape version returning `(physical batch, log-Jacobian column)`.
    pub fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
        self.check(tape.value(z))?;
        let n = tape.value(z).rows();
        if self.is_identity() {
            let zeros = tape.constant(Tensor::zeros(&[n, 1]));
            return Ok((z, zeros));
        }
        let mut cols = Vec::with_capacity(self.dims.len());
        let mut log_jac: Option<Var> = None;
        for (i, t) in self.dims.iter().enumerate() {
            let col = tape.slice(z, 1, i, i + 1)?;
            let (y, lj) = t.forward_tape(tape, col)?;
            cols.push(y);
            if !matches!(t.kind, TransformKind::Identity) {
                log_jac = Some(match log_jac {
                    Some(acc) => tape.add(acc, lj)?,
                    None => lj,
                });
            }
        }
        let y = tape.concat(&cols, 1)?;
        let lj = log_jac.expect("at least one non-identity coordinate");
        Ok((y, lj))
    }
}
