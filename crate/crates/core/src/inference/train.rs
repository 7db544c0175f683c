use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flows::{FlowSample, FlowStack, Mode};
use crate::graph::Tensor;
use crate::models::{GaussianLikelihood, Model, ObservationSet};
use crate::optim::Adam;
use crate::rng::{standard_normals, SeedTree, Stream, StreamRng};
use crate::surrogate::SurrogateModel;
use crate::transforms::InputTransformation;

use super::config::ExperimentConfig;
use super::output::{columns, write_matrix_csv, write_rows};
use super::{free_energy, marginal_stats, ForwardMap, LogDensityHook, PosteriorHook};

/// Everything the training loop needs. Files are written only when
/// `output_dir` is set.
pub struct TrainSetup<'a> {
    pub config: &'a ExperimentConfig,
    pub model: &'a dyn Model,
    pub obs: &'a ObservationSet,
    pub transform: &'a InputTransformation,
    /// Pre-trained (or loaded) surrogate; replaces the model in the likelihood.
    pub surrogate: Option<SurrogateModel>,
    pub output_dir: Option<&'a Path>,
    /// Posterior-predictive files are skipped above this many outputs.
    pub outputs_max_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub t: f64,
    pub loss: f64,
}

pub struct RunOutputs {
    pub history: Vec<LossRecord>,
    pub stack: FlowStack,
    pub surrogate: Option<SurrogateModel>,
    /// Final `n_sample` evaluation-mode draws (normalized space).
    pub samples: FlowSample,
    /// The same draws in physical space.
    pub params: Tensor,
    /// Posterior-predictive draws (forward map plus observation noise).
    pub predictive: Tensor,
    /// Temperatures in the order they were visited.
    pub temperatures: Vec<f64>,
    /// True-model evaluations spent on surrogate calibration.
    pub calibration_evaluations: usize,
    pub written: Vec<PathBuf>,
}

impl RunOutputs {
    pub fn final_t(&self) -> f64 {
        self.temperatures.last().copied().unwrap_or(1.0)
    }
}

fn hook<'b>(
    surrogate: &'b Option<SurrogateModel>,
    model: &'b dyn Model,
    likelihood: &'b GaussianLikelihood,
    transform: &'b InputTransformation,
) -> PosteriorHook<'b> {
    let forward = match surrogate {
        Some(s) => ForwardMap::Surrogate(s),
        None => ForwardMap::Model(model),
    };
    PosteriorHook {
        forward,
        likelihood,
        transform,
    }
}

struct Snapshot {
    iter: usize,
    samples: FlowSample,
    params: Tensor,
    predictive: Tensor,
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a dyn Model,
    obs: &'a ObservationSet,
    transform: &'a InputTransformation,
    out_dir: Option<&'a Path>,
    outputs_max_dim: usize,
    stack: FlowStack,
    surrogate: Option<SurrogateModel>,
    likelihood: GaussianLikelihood,
    adam: Adam,
    base_rng: StreamRng,
    calib_rng: StreamRng,
    anneal_rng: StreamRng,
    out_rng: StreamRng,
    history: Vec<LossRecord>,
    temperatures: Vec<f64>,
    log: Option<(PathBuf, BufWriter<File>)>,
    calibration_evaluations: usize,
    last: Option<Snapshot>,
    written: Vec<PathBuf>,
}

impl Trainer<'_> {
    fn file(&self, name: String) -> Option<PathBuf> {
        self.out_dir.map(|d| d.join(name))
    }

    fn step(&mut self, iter: usize, t: f64, batch: usize) -> Result<()> {
        let h = hook(&self.surrogate, self.model, &self.likelihood, self.transform);
        let fe = free_energy(&mut self.stack, &h, t, batch, &mut self.base_rng, Mode::Train).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at iteration {iter}")),
            other => other,
        })?;
        let loss = fe.backward(&mut self.stack)?;
        self.adam.step(self.stack.params_mut());
        self.history.push(LossRecord { iter, t, loss });

        if (iter - 1) % self.cfg.optimizer.log_interval == 0 {
            if let Some((path, w)) = &mut self.log {
                writeln!(w, "{iter},{t},{loss}").map_err(|e| Error::io(path.as_path(), e))?;
            }
        }
        if iter % self.cfg.surrogate.calibrate_interval == 0 {
            self.calibrate()?;
        }
        if let (Some(k), Some(s)) = (self.cfg.surrogate.store_surr_interval, &self.surrogate) {
            if iter % k == 0 {
                if let Some(p) = self.surrogate_path() {
                    s.save(&p)?;
                }
            }
        }
        if self.cfg.general.save_interval.is_some_and(|k| iter % k == 0) {
            self.save(iter)?;
        }
        Ok(())
    }

    /// Evaluates the true model at fresh flow samples and refits the
    /// surrogate, while the budget allows.
    fn calibrate(&mut self) -> Result<()> {
        let k = self.cfg.general.true_data_num;
        let Some(s) = &self.surrogate else {
            return Ok(());
        };
        if !s.can_update(k) {
            return Ok(());
        }
        let draw = self.stack.sample(k, &mut self.calib_rng, Mode::Eval)?;
        let phys = self.transform.forward(&draw.zk)?;
        let values = self.model.solve_t(&phys)?;
        self.calibration_evaluations += k;
        if let Some(s) = &mut self.surrogate {
            s.update(&draw.zk, &values)?;
        }
        Ok(())
    }

    fn surrogate_path(&self) -> Option<PathBuf> {
        self.out_dir.map(|d| surrogate_file(self.cfg, d))
    }

    fn predictive(&mut self, zk: &Tensor, params: &Tensor) -> Result<Tensor> {
        let f = match &self.surrogate {
            Some(s) => s.forward(zk)?,
            None => self.model.solve_t(params)?,
        };
        let (n, m) = (f.rows(), f.cols());
        let noise = standard_normals(&mut self.out_rng, n * m);
        let data = f
            .data()
            .iter()
            .zip(&noise)
            .enumerate()
            .map(|(i, (v, e))| v + self.obs.sd[i % m] * e)
            .collect();
        Ok(Tensor::matrix(n, m, data)?)
    }

    fn save(&mut self, iter: usize) -> Result<()> {
        let n = self.cfg.surrogate.n_sample;
        let samples = self.stack.sample(n, &mut self.out_rng, Mode::Eval)?;
        let params = self.transform.forward(&samples.zk)?;
        let predictive = self.predictive(&samples.zk, &params)?;
        if let Some(dir) = self.out_dir {
            let name = &self.cfg.general.name;
            let d = samples.zk.cols();
            let p = dir.join(format!("{name}_samples_{iter}.csv"));
            write_matrix_csv(&p, &columns("z", d), &samples.zk)?;
            self.written.push(p);
            let p = dir.join(format!("{name}_params_{iter}.csv"));
            write_matrix_csv(&p, &columns("p", d), &params)?;
            self.written.push(p);

            let h = hook(&self.surrogate, self.model, &self.likelihood, self.transform);
            let log_p = h.values(&samples.zk)?;
            let log_q = samples.log_qk();
            let p = dir.join(format!("{name}_logdensity_{iter}.csv"));
            write_rows(
                &p,
                &["log_q", "log_p"],
                log_q.iter().zip(&log_p).map(|(a, b)| vec![a.to_string(), b.to_string()]),
            )?;
            self.written.push(p);

            if predictive.cols() <= self.outputs_max_dim {
                let p = dir.join(format!("{name}_outputs_{iter}.csv"));
                write_matrix_csv(&p, &columns("y", predictive.cols()), &predictive)?;
                self.written.push(p);
            }

            let stats = marginal_stats(&params)?;
            let p = dir.join(format!("{name}_marginal_stats_{iter}.csv"));
            write_rows(
                &p,
                &["param", "mean", "sd"],
                stats
                    .iter()
                    .enumerate()
                    .map(|(i, (m, s))| vec![format!("p{}", i + 1), m.to_string(), s.to_string()]),
            )?;
            self.written.push(p);
            self.write_loss()?;
        }
        self.last = Some(Snapshot {
            iter,
            samples,
            params,
            predictive,
        });
        Ok(())
    }

    fn write_loss(&mut self) -> Result<()> {
        if let Some(p) = self.file(format!("{}_loss.csv", self.cfg.general.name)) {
            write_rows(
                &p,
                &["iter", "t", "loss"],
                self.history
                    .iter()
                    .map(|r| vec![r.iter.to_string(), r.t.to_string(), r.loss.to_string()]),
            )?;
            if !self.written.contains(&p) {
                self.written.push(p);
            }
        }
        Ok(())
    }

    fn run_non_annealed(&mut self) -> Result<()> {
        self.temperatures.push(1.0);
        for i in 1..=self.cfg.general.n_iter {
            self.step(i, 1.0, self.cfg.general.batch_size)?;
        }
        Ok(())
    }

    fn run_annealed(&mut self) -> Result<()> {
        let mut state = self.cfg.annealing.state()?;
        let mut iter = 0;
        loop {
            self.temperatures.push(state.t);
            let (steps, batch) = state.schedule_params();
            for _ in 0..steps {
                iter += 1;
                self.step(iter, state.t, batch)?;
            }
            if state.is_final() {
                return Ok(());
            }
            match state.scheduler {
                crate::annealing::Scheduler::Linear => {
                    state.linear_next();
                }
                crate::annealing::Scheduler::AdaAnn => {
                    let draw = self.stack.sample(state.m, &mut self.anneal_rng, Mode::Eval)?;
                    let h = hook(&self.surrogate, self.model, &self.likelihood, self.transform);
                    let lp = h.values(&draw.zk)?;
                    state.adaann_next(&lp)?;
                }
            }
        }
    }
}

pub(crate) fn surrogate_file(cfg: &ExperimentConfig, output_dir: &Path) -> PathBuf {
    output_dir
        .join(&cfg.surrogate.surr_folder)
        .join(format!("{}_surrogate.snap", cfg.general.name))
}

/// Runs the optimization: `n_iter` steps at `t = 1`, or the annealing
/// schedule when enabled. Save points fall on multiples of `save_interval`
/// and always on the last iteration.
pub fn train(setup: TrainSetup<'_>) -> Result<RunOutputs> {
    let cfg = setup.config;
    cfg.validate()?;
    setup.obs.check_outputs(setup.model.output_dim())?;
    if setup.transform.dim() != cfg.general.input_size || setup.model.input_dim() != cfg.general.input_size {
        return Err(Error::Dimension(format!(
            "input_size {} but model has {} and transform {} coordinates",
            cfg.general.input_size,
            setup.model.input_dim(),
            setup.transform.dim()
        )));
    }
    if let Some(s) = &setup.surrogate {
        if s.input_dim() != cfg.general.input_size || s.output_dim() != setup.model.output_dim() {
            return Err(Error::Dimension("surrogate dimensions differ from the model".into()));
        }
    }
    let seeds = SeedTree::new(cfg.output.seed);
    let stack = FlowStack::new(cfg.general.input_size, &cfg.flow_config(), &seeds)?;
    let log = match setup.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let name = cfg.output.log_file.clone().unwrap_or_else(|| format!("{}.log", cfg.general.name));
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(f)))
        }
        None => None,
    };
    let mut tr = Trainer {
        cfg,
        model: setup.model,
        obs: setup.obs,
        transform: setup.transform,
        out_dir: setup.output_dir,
        outputs_max_dim: setup.outputs_max_dim,
        stack,
        surrogate: setup.surrogate,
        likelihood: GaussianLikelihood::new(setup.obs),
        adam: Adam::new(cfg.optimizer.lr, cfg.lr_schedule()),
        base_rng: seeds.stream(Stream::BaseSampling),
        calib_rng: seeds.stream(Stream::Calibration),
        anneal_rng: seeds.stream(Stream::Annealing),
        out_rng: seeds.stream(Stream::Output),
        history: Vec::new(),
        temperatures: Vec::new(),
        log,
        calibration_evaluations: 0,
        last: None,
        written: Vec::new(),
    };
    if cfg.annealing.annealing {
        tr.run_annealed()?;
    } else {
        tr.run_non_annealed()?;
    }
    let total = tr.history.len();
    if tr.last.as_ref().is_none_or(|s| s.iter != total) {
        tr.save(total)?;
    }
    tr.write_loss()?;
    if let Some((path, w)) = &mut tr.log {
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        tr.written.push(path.clone());
    }
    if let Some(dir) = tr.out_dir {
        let p = dir.join(format!("{}_flow.snap", cfg.general.name));
        tr.stack.save(&p)?;
        tr.written.push(p);
        if let Some(s) = &tr.surrogate {
            let p = surrogate_file(cfg, dir);
            s.save(&p)?;
            tr.written.push(p);
        }
    }
    let last = tr.last.take().expect("final save always runs");
    Ok(RunOutputs {
        history: tr.history,
        stack: tr.stack,
        surrogate: tr.surrogate,
        samples: last.samples,
        params: last.params,
        predictive: last.predictive,
        temperatures: tr.temperatures,
        calibration_evaluations: tr.calibration_evaluations,
        written: tr.written,
    })
}
