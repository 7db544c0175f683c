//! Benchmark forward models, observation files, and the Gaussian likelihood.

mod analytic;
mod likelihood;
mod windkessel;

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

pub use analytic::{
    friedman_mu, friedman_mu_original, highdim_solve, trivial_solve, Friedman, Highdim, Trivial, HIGHDIM_A,
};
pub use likelihood::{gaussian_log_density, GaussianLikelihood};
pub use windkessel::{
    rc_solve, rc_solve_with, rcr_solve, rcr_solve_with, rk4_dae, rk4_for_each, Rc, Rcr, Trajectory, Waveform,
    CYCLE_LENGTH, DISTAL_PRESSURE_MMHG, MMHG_TO_BARYE, N_CYCLES, STEPS_PER_CYCLE,
};

use crate::error::{Error, Result};
use crate::graph::{Tape, Tensor, Var};
use crate::transforms::{InputTransformation, TransformKind, UnivariateTransform};

/// A forward map from physical parameters (`batch x d`) to outputs
/// (`batch x m`). Implementations are pure and row-independent.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn solve_t(&self, params: &Tensor) -> Result<Tensor>;
    /// Differentiable evaluation, if the model supports it.
    fn solve_tape(&self, _tape: &mut Tape, _params: Var) -> Option<Result<Var>> {
        None
    }
}

/// Repeated noisy measurements of the model outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    /// `x[i][r]`: repeat `r` of output `i`.
    pub x: Vec<Vec<f64>>,
    /// Noise standard deviation per output.
    pub sd: Vec<f64>,
    /// Generating mean, when known.
    pub truth: Option<Vec<f64>>,
}

impl ObservationSet {
    pub fn new(x: Vec<Vec<f64>>, sd: Vec<f64>, truth: Option<Vec<f64>>) -> Result<Self> {
        if x.is_empty() || x.len() != sd.len() {
            return Err(Error::Dimension(format!("{} output rows but {} noise levels", x.len(), sd.len())));
        }
        let r = x[0].len();
        if r == 0 || x.iter().any(|row| row.len() != r) {
            return Err(Error::Dimension("every output needs the same number (>= 1) of repeats".into()));
        }
        if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("noise standard deviations must be positive".into()));
        }
        Ok(Self { x, sd, truth })
    }

    pub fn output_dim(&self) -> usize {
        self.x.len()
    }

    pub fn n_repeats(&self) -> usize {
        self.x[0].len()
    }

    pub fn means(&self) -> Vec<f64> {
        self.x.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect()
    }

    pub(crate) fn check_outputs(&self, m: usize) -> Result<()> {
        if m != self.output_dim() {
            return Err(Error::Dimension(format!("model has {m} outputs, observations have {}", self.output_dim())));
        }
        Ok(())
    }

    /// One row per output: `index,obs_1,...,obs_R`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.n_repeats()).map(|r| format!("obs_{r}")));
        write_record(&mut w, path, header)?;
        for (i, row) in self.x.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            write_record(&mut w, path, rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, sd: Vec<f64>, truth: Option<Vec<f64>>) -> Result<Self> {
        let rows = read_numeric_csv(path)?;
        let mut x = Vec::with_capacity(rows.len());
        for (k, row) in rows.into_iter().enumerate() {
            if row.first().map(|v| *v as usize) != Some(k) {
                return Err(data_err(path, format!("row {} must start with output index {k}", k + 1)));
            }
            x.push(row[1..].to_vec());
        }
        if x.len() != sd.len() {
            return Err(data_err(path, format!("{} output rows, benchmark has {}", x.len(), sd.len())));
        }
        Self::new(x, sd, truth).map_err(|e| data_err(path, e.to_string()))
    }
}

fn data_err(path: &Path, detail: String) -> Error {
    Error::DataFile {
        path: path.to_path_buf(),
        detail,
    }
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_io(path, e))
}

pub(crate) fn write_record<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, rec: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| csv_io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => data_err(path, format!("{other:?}")),
    }
}

/// Reads a CSV with a header row and numeric cells.
pub(crate) fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data_err(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| data_err(path, format!("row {} is not numeric", i + 2)))?;
        out.push(row);
    }
    if out.is_empty() {
        return Err(data_err(path, "no data rows".into()));
    }
    Ok(out)
}

/// Synthetic observations `x_r = f(truth) + sd * e_r`, `e_r ~ N(0, I)`.
pub fn gen_data(
    model: &dyn Model,
    truth_params: &[f64],
    noise_sd: impl Fn(&[f64]) -> Vec<f64>,
    n_repeats: usize,
    rng: &mut impl Rng,
) -> Result<ObservationSet> {
    if n_repeats == 0 {
        return Err(Error::InvalidArgument("need at least one repeat".into()));
    }
    let x_star = model.solve_t(&Tensor::row(truth_params.to_vec()))?.into_data();
    let sd = noise_sd(&x_star);
    if sd.len() != x_star.len() {
        return Err(Error::Dimension("noise vector length differs from output dimension".into()));
    }
    let mut x = vec![Vec::with_capacity(n_repeats); x_star.len()];
    // column-major draws: one full output vector per repeat
    for _ in 0..n_repeats {
        for (i, row) in x.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            row.push(x_star[i] + sd[i] * e);
        }
    }
    // zero noise is allowed for generation; the likelihood needs positive sd
    Ok(ObservationSet {
        x,
        sd,
        truth: Some(x_star),
    })
}

/// Regression data `(X, y)` for the Friedman benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct FriedmanData {
    pub x: Tensor,
    pub y: Vec<f64>,
}

impl FriedmanData {
    /// `X ~ U(0,1)^10`, `y = mu(beta) + N(0, 1)`.
    pub fn generate(beta: &[f64], n: usize, rng: &mut impl Rng) -> Result<Self> {
        let u = Uniform::new(0.0, 1.0).expect("valid range");
        let xs: Vec<f64> = (0..n * 10).map(|_| rng.sample(u)).collect();
        let x = Tensor::matrix(n, 10, xs)?;
        let model = Friedman::new(x.clone())?;
        let mu = friedman_mu(&model, &Tensor::row(beta.to_vec()))?;
        let y = mu
            .data()
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self { x, y })
    }

    pub fn model(&self) -> Result<Friedman> {
        Friedman::new(self.x.clone())
    }

    /// Each response is one output with a single repeat and unit noise.
    pub fn observations(&self) -> ObservationSet {
        ObservationSet {
            x: self.y.iter().map(|&v| vec![v]).collect(),
            sd: vec![1.0; self.y.len()],
            truth: None,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header: Vec<String> = (1..=10).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        write_record(&mut w, path, header)?;
        for (i, y) in self.y.iter().enumerate() {
            let mut rec: Vec<String> = self.x.row_slice(i).iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            write_record(&mut w, path, rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = read_numeric_csv(path)?;
        if rows.iter().any(|r| r.len() != 11) {
            return Err(data_err(path, "expected 11 columns (x1..x10, y)".into()));
        }
        let n = rows.len();
        let x = Tensor::matrix(n, 10, rows.iter().flat_map(|r| r[..10].iter().copied()).collect())?;
        let y = rows.iter().map(|r| r[10]).collect();
        Ok(Self { x, y })
    }
}

/// The built-in benchmark problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Trivial,
    Highdim,
    Rc,
    Rcr,
    Adaann,
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const FRIEDMAN_N: usize = 1000;
pub const N_REPEATS: usize = 50;

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Trivial,
        Benchmark::Highdim,
        Benchmark::Rc,
        Benchmark::Rcr,
        Benchmark::Adaann,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Trivial => "trivial",
            Benchmark::Highdim => "highdim",
            Benchmark::Rc => "rc",
            Benchmark::Rcr => "rcr",
            Benchmark::Adaann => "adaann",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Benchmark::Trivial => "closed-form 2 -> 2 map, recovers z = (3, 5)",
            Benchmark::Highdim => "non-identifiable Sobol-function map 5 -> 4",
            Benchmark::Rc => "two-element Windkessel model (R, C) -> pressure min/max/mean",
            Benchmark::Rcr => "three-element Windkessel model (Rp, Rd, C) -> pressure min/max/mean",
            Benchmark::Adaann => "modified Friedman regression with a bimodal posterior (10 coefficients)",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "trivial" => Ok(Benchmark::Trivial),
            "highdim" => Ok(Benchmark::Highdim),
            "rc" => Ok(Benchmark::Rc),
            "rcr" => Ok(Benchmark::Rcr),
            "adaann" | "friedman" => Ok(Benchmark::Adaann),
            other => Err(Error::Config(format!(
                "unknown benchmark '{other}'; valid names: {}",
                Self::ALL.map(Self::name).join(", ")
            ))),
        }
    }

    pub fn input_dim(self) -> usize {
        self.truth_params().len()
    }

    /// Parameters used to generate synthetic data. The Friedman coefficient
    /// `b2` is taken as `+sqrt(20)`.
    pub fn truth_params(self) -> Vec<f64> {
        match self {
            Benchmark::Trivial => vec![3.0, 5.0],
            Benchmark::Highdim => vec![2.75, -1.5, 0.25, -2.5, 1.75],
            Benchmark::Rc => vec![1000.0, 5e-5],
            Benchmark::Rcr => vec![1000.0, 1000.0, 5e-5],
            Benchmark::Adaann => vec![10.0, 20f64.sqrt(), 0.5, 10.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        }
    }

    /// Observation noise standard deviations given the noiseless outputs.
    pub fn noise_sd(self, x_star: &[f64]) -> Vec<f64> {
        match self {
            Benchmark::Trivial => x_star.iter().map(|v| 0.05 * v.abs()).collect(),
            Benchmark::Highdim => x_star.iter().map(|v| 0.01 * v.abs()).collect(),
            Benchmark::Rc => x_star.iter().map(|v| 0.05 * v).collect(),
            Benchmark::Rcr => vec![5.05, 7.40, 5.83],
            Benchmark::Adaann => vec![1.0; x_star.len()],
        }
    }

    /// Normalized-to-physical map used when the config gives none.
    pub fn default_transform(self) -> InputTransformation {
        let tanh_r = || UnivariateTransform::new(TransformKind::Tanh, -7.0, 7.0, 100.0, 1500.0).expect("valid");
        let exp_c = || UnivariateTransform::new(TransformKind::Exp, -7.0, 7.0, 1e-5, 1e-2).expect("valid");
        match self {
            Benchmark::Rc => InputTransformation::new(vec![tanh_r(), exp_c()]),
            Benchmark::Rcr => InputTransformation::new(vec![tanh_r(), tanh_r(), exp_c()]),
            other => InputTransformation::identity(other.input_dim()),
        }
    }

    /// Models with closed-form derivatives can run without a surrogate.
    pub fn differentiable(self) -> bool {
        !matches!(self, Benchmark::Rc | Benchmark::Rcr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_data_means_near_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Benchmark::Trivial;
        let obs = gen_data(&Trivial, &b.truth_params(), |x| b.noise_sd(x), 50, &mut rng).unwrap();
        assert_eq!((obs.output_dim(), obs.n_repeats()), (2, 50));
        let truth = obs.truth.clone().unwrap();
        for (m, (t, s)) in obs.means().iter().zip(truth.iter().zip(&obs.sd)) {
            assert!((m - t).abs() < 3.0 * s / 50f64.sqrt());
        }
    }

    #[test]
    fn zero_noise_reproduces_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = gen_data(&Highdim, &Benchmark::Highdim.truth_params(), |x| vec![0.0; x.len()], 5, &mut rng).unwrap();
        let truth = obs.truth.unwrap();
        for (row, t) in obs.x.iter().zip(&truth) {
            assert!(row.iter().all(|v| v == t));
        }
    }

    #[test]
    fn observation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = Benchmark::Rcr;
        let obs = gen_data(&Rcr::default(), &b.truth_params(), |x| b.noise_sd(x), 50, &mut rng).unwrap();
        assert_eq!((obs.output_dim(), obs.n_repeats()), (3, 50));
        obs.write_csv(&path).unwrap();
        let back = ObservationSet::read_csv(&path, obs.sd.clone(), obs.truth.clone()).unwrap();
        assert_eq!(back, obs);
        assert!(ObservationSet::read_csv(&path, vec![1.0; 2], None).is_err());
    }

    #[test]
    fn friedman_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("friedman.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = FriedmanData::generate(&Benchmark::Adaann.truth_params(), FRIEDMAN_N, &mut rng).unwrap();
        assert_eq!(data.x.shape(), &[1000, 10]);
        assert!(data.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        data.write_csv(&path).unwrap();
        assert_eq!(FriedmanData::read_csv(&path).unwrap(), data);
    }

    #[test]
    fn benchmark_names() {
        for b in Benchmark::ALL {
            assert_eq!(Benchmark::parse(b.name()).unwrap(), b);
            assert_eq!(b.default_transform().dim(), b.input_dim());
        }
        assert_eq!(Benchmark::parse("friedman").unwrap(), Benchmark::Adaann);
        let err = Benchmark::parse("bogus").unwrap_err().to_string();
        assert!(err.contains("trivial, highdim, rc, rcr, adaann"), "{err}");
    }
}
