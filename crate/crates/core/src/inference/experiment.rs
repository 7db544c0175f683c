use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::models::{
    gen_data, Benchmark, FriedmanData, Highdim, Model, ObservationSet, Rc, Rcr, Trivial, Waveform, FRIEDMAN_N,
    N_REPEATS,
};
use crate::rng::{SeedTree, Stream};
use crate::surrogate::{PreGrid, SurrogateModel};
use crate::transforms::{InputTransformation, TransformKind};

use super::config::ExperimentConfig;
use super::train::{surrogate_file, train, RunOutputs, TrainSetup};

/// Posterior-predictive files are written for models with at most this
/// many outputs (the regression benchmark has one output per data row).
pub const DEFAULT_OUTPUTS_MAX_DIM: usize = 64;

/// Synthetic data for one benchmark.
#[derive(Clone, Debug)]
pub enum Dataset {
    Observations(ObservationSet),
    Regression(FriedmanData),
}

impl Dataset {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        match self {
            Dataset::Observations(o) => o.write_csv(path),
            Dataset::Regression(d) => d.write_csv(path),
        }
    }
}

fn circulation_waveform(cfg: &ExperimentConfig, config_dir: &Path) -> Result<Waveform> {
    match &cfg.model.waveform_file {
        Some(f) => Waveform::from_csv(&config_dir.join(f)),
        None => Ok(Waveform::default()),
    }
}

/// Forward model for a benchmark. The regression benchmark needs its design.
pub fn build_model(b: Benchmark, waveform: &Waveform, data: Option<&FriedmanData>) -> Result<Box<dyn Model>> {
    Ok(match b {
        Benchmark::Trivial => Box::new(Trivial),
        Benchmark::Highdim => Box::new(Highdim),
        Benchmark::Rc => Box::new(Rc {
            waveform: waveform.clone(),
        }),
        Benchmark::Rcr => Box::new(Rcr {
            waveform: waveform.clone(),
        }),
        Benchmark::Adaann => {
            let d = data.ok_or_else(|| Error::InvalidArgument("the regression benchmark needs a dataset".into()))?;
            Box::new(d.model()?)
        }
    })
}

/// Noiseless outputs at the benchmark's true parameters.
pub fn truth_outputs(model: &dyn Model, b: Benchmark) -> Result<Vec<f64>> {
    Ok(model.solve_t(&Tensor::row(b.truth_params()))?.into_data())
}

/// Draws synthetic observations from the `DataNoise` stream of `seed`.
pub fn generate_dataset(b: Benchmark, seed: u64, waveform: &Waveform) -> Result<(Box<dyn Model>, Dataset)> {
    let mut rng = SeedTree::new(seed).stream(Stream::DataNoise);
    if b == Benchmark::Adaann {
        let data = FriedmanData::generate(&b.truth_params(), FRIEDMAN_N, &mut rng)?;
        let model = build_model(b, waveform, Some(&data))?;
        return Ok((model, Dataset::Regression(data)));
    }
    let model = build_model(b, waveform, None)?;
    let obs = gen_data(model.as_ref(), &b.truth_params(), |x| b.noise_sd(x), N_REPEATS, &mut rng)?;
    Ok((model, Dataset::Observations(obs)))
}

/// A fully resolved experiment: model, observations and transform.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub benchmark: Benchmark,
    pub model: Box<dyn Model>,
    pub obs: ObservationSet,
    pub transform: InputTransformation,
    pub dataset: Dataset,
    pub obs_path: PathBuf,
    /// Directory that relative `[model]` paths were resolved against.
    pub config_dir: PathBuf,
}

impl Experiment {
    /// Relative paths in `[model]` resolve against `config_dir`. With
    /// `gen_data` the observation file is (re)generated from the seed;
    /// otherwise it must exist.
    pub fn build(config: ExperimentConfig, config_dir: &Path, gen_data: bool) -> Result<Self> {
        config.validate()?;
        let benchmark = config.benchmark()?;
        let transform = config.transform()?;
        let waveform = circulation_waveform(&config, config_dir)?;
        let obs_path = config_dir.join(
            config
                .model
                .obs_file
                .clone()
                .unwrap_or_else(|| format!("{}_obs.csv", benchmark.name())),
        );
        let (model, dataset) = if gen_data {
            let (model, data) = generate_dataset(benchmark, config.output.seed, &waveform)?;
            data.write_csv(&obs_path)?;
            (model, data)
        } else {
            if !obs_path.is_file() {
                return Err(Error::Config(format!(
                    "observation file {} not found (generate it with --gen-data)",
                    obs_path.display()
                )));
            }
            if benchmark == Benchmark::Adaann {
                let data = FriedmanData::read_csv(&obs_path)?;
                (build_model(benchmark, &waveform, Some(&data))?, Dataset::Regression(data))
            } else {
                let model = build_model(benchmark, &waveform, None)?;
                let x_star = truth_outputs(model.as_ref(), benchmark)?;
                let obs = ObservationSet::read_csv(&obs_path, benchmark.noise_sd(&x_star), Some(x_star))?;
                (model, Dataset::Observations(obs))
            }
        };
        let obs = match &dataset {
            Dataset::Observations(o) => o.clone(),
            Dataset::Regression(d) => d.observations(),
        };
        if obs.sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::DataFile {
                path: obs_path,
                detail: "noise standard deviations must be positive".into(),
            });
        }
        Ok(Self {
            config,
            benchmark,
            model,
            obs,
            transform,
            dataset,
            obs_path,
            config_dir: config_dir.to_path_buf(),
        })
    }

    pub fn from_file(path: &Path, gen_data: bool) -> Result<Self> {
        let cfg = ExperimentConfig::from_file(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::build(cfg, dir, gen_data)
    }

    /// Surrogate box: configured limits, else the transform's normalized
    /// intervals (required when any coordinate is untransformed).
    pub fn surrogate_limits(&self) -> Result<Vec<[f64; 2]>> {
        if let Some(l) = &self.config.surrogate.limits {
            return Ok(l.clone());
        }
        let identity = (0..self.transform.dim()).any(|i| matches!(self.transform.get(i).kind(), TransformKind::Identity));
        if identity {
            return Err(Error::Config(
                "surrogate.limits is required when a coordinate has no transformation".into(),
            ));
        }
        Ok(self.transform.normalized_box())
    }

    /// Loads the stored surrogate (`use_new_surr = false` and a snapshot
    /// exists) or builds and pre-trains a new one. `None` when disabled.
    pub fn prepare_surrogate(&self, output_dir: Option<&Path>) -> Result<Option<SurrogateModel>> {
        let s = &self.config.surrogate;
        if !s.enabled {
            return Ok(None);
        }
        let surr_cfg = self.config.surrogate_config();
        if !s.use_new_surr {
            if let Some(path) = output_dir.map(|d| surrogate_file(&self.config, d)).filter(|p| p.is_file()) {
                let mut loaded = SurrogateModel::load_checked(&path, self.transform.dim(), self.model.output_dim())?;
                let c = loaded.config_mut();
                c.budget = surr_cfg.budget;
                c.pre_it = surr_cfg.pre_it;
                c.upd_it = surr_cfg.upd_it;
                return Ok(Some(loaded));
            }
        }
        let limits = self.surrogate_limits()?;
        let n = PreGrid::design(s.grid_type, s.gridnum, &limits)?.rows();
        if let Some(b) = s.budget {
            if n > b {
                return Err(Error::Config(format!("surrogate pre-grid has {n} points but the budget is {b}")));
            }
        }
        let grid = PreGrid::evaluate(s.grid_type, s.gridnum, &limits, |pts| {
            self.model.solve_t(&self.transform.forward(pts)?)
        })?;
        let mut rng = SeedTree::new(self.config.output.seed).stream(Stream::SurrogateInit);
        let mut model = SurrogateModel::new(grid, surr_cfg, &mut rng)?;
        model.pre_train()?;
        Ok(Some(model))
    }

    /// The config with defaults filled in and data paths made absolute, so
    /// it can be run again from any directory.
    pub fn resolved_config(&self) -> ExperimentConfig {
        let mut cfg = self.config.clone();
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        cfg.model.obs_file = Some(abs(&self.obs_path).to_string_lossy().into_owned());
        if let Some(w) = &cfg.model.waveform_file {
            cfg.model.waveform_file = Some(abs(&self.config_dir.join(w)).to_string_lossy().into_owned());
        }
        cfg
    }

    /// Echoes the resolved config and observations, then trains.
    pub fn run(&self, output_dir: Option<&Path>) -> Result<RunOutputs> {
        if let Some(dir) = output_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("config_resolved.toml");
            std::fs::write(&p, self.resolved_config().to_toml_string()).map_err(|e| Error::io(&p, e))?;
            self.dataset
                .write_csv(&dir.join(format!("{}_observations.csv", self.config.general.name)))?;
        }
        let surrogate = self.prepare_surrogate(output_dir)?;
        train(TrainSetup {
            config: &self.config,
            model: self.model.as_ref(),
            obs: &self.obs,
            transform: &self.transform,
            surrogate,
            output_dir,
            outputs_max_dim: DEFAULT_OUTPUTS_MAX_DIM,
        })
    }
}
