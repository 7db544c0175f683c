//! Experiment configuration (TOML).
//!
//! Sections and keys:
//!
//! * `[general]`: name, flow_type, n_blocks, hidden_size, n_hidden,
//!   activation_fn, input_order, batch_norm_order, save_interval,
//!   input_size, batch_size, true_data_num, n_iter
//! * `[optimizer]`: optimizer, lr, lr_decay, lr_scheduler, lr_step, log_interval
//! * `[output]`: output_dir, log_file, seed
//! * `[surrogate]`: enabled, grid_type, gridnum, limits, n_sample,
//!   calibrate_interval, budget, surr_pre_it, surr_upd_it, surr_folder,
//!   use_new_surr, store_surr_interval
//! * `[annealing]`: annealing, scheduler, tol, t0, N, N_1, T_0, T, T_1, M, K
//! * `[device]`: no_cuda (accepted; everything runs on the CPU)
//! * `[model]`: benchmark, obs_file, waveform_file, trsf_info
//!
//! Unknown keys are rejected. `scheduler = "fixed"` and `"Linear"` both
//! select constant increments of `(1 - t0)/K`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annealing::{AnnealingState, Scheduler};
use crate::error::{Error, Result};
use crate::flows::{Activation, FlowConfig, FlowType, InputOrder};
use crate::models::Benchmark;
use crate::optim::{LrSchedule, LrScheduler, STEP_LR_GAMMA};
use crate::surrogate::{GridKind, SurrogateConfig};
use crate::transforms::InputTransformation;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub general: GeneralConfig,
    pub optimizer: OptimizerConfig,
    pub output: OutputConfig,
    pub surrogate: SurrogateSection,
    pub annealing: AnnealingSection,
    pub device: DeviceConfig,
    pub model: ModelSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneralConfig {
    pub name: String,
    pub flow_type: FlowType,
    pub n_blocks: usize,
    pub hidden_size: usize,
    pub n_hidden: usize,
    pub activation_fn: Activation,
    pub input_order: InputOrder,
    pub batch_norm_order: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_interval: Option<usize>,
    pub input_size: usize,
    pub batch_size: usize,
    pub true_data_num: usize,
    pub n_iter: usize,
}

impl Default for GeneralConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            flow_type: FlowType::Maf,
            n_blocks: 5,
            hidden_size: 100,
            n_hidden: 1,
            activation_fn: Activation::Relu,
            input_order: InputOrder::Sequential,
            batch_norm_order: true,
            save_interval: None,
            input_size: 2,
            batch_size: 100,
            true_data_num: 2,
            n_iter: 25001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub optimizer: String,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_scheduler: LrScheduler,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_step: Option<usize>,
    pub log_interval: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            optimizer: "Adam".into(),
            lr: 0.003,
            lr_decay: 0.9999,
            lr_scheduler: LrScheduler::ExponentialLR,
            lr_step: None,
            log_interval: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub output_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_file: Option<String>,
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            output_dir: "results".into(),
            log_file: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub enabled: bool,
    pub grid_type: GridKind,
    pub gridnum: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limits: Option<Vec<[f64; 2]>>,
    pub n_sample: usize,
    pub calibrate_interval: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub surr_pre_it: usize,
    pub surr_upd_it: usize,
    pub surr_folder: String,
    pub use_new_surr: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store_surr_interval: Option<usize>,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        Self {
            enabled: false,
            grid_type: GridKind::Tensor,
            gridnum: 4,
            limits: None,
            n_sample: 5000,
            calibrate_interval: 1000,
            budget: None,
            surr_pre_it: 40000,
            surr_upd_it: 6000,
            surr_folder: "./".into(),
            use_new_surr: true,
            store_surr_interval: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealingSection {
    pub annealing: bool,
    pub scheduler: Scheduler,
    pub tol: f64,
    pub t0: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_1")]
    pub n_1: usize,
    #[serde(rename = "T_0")]
    pub t_0: usize,
    #[serde(rename = "T")]
    pub t_mid: usize,
    #[serde(rename = "T_1")]
    pub t_1: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

impl Default for AnnealingSection {
    fn default() -> Self {
        Self {
            annealing: false,
            scheduler: Scheduler::AdaAnn,
            tol: 0.01,
            t0: 0.05,
            n: 100,
            n_1: 100,
            t_0: 500,
            t_mid: 5,
            t_1: 5000,
            m: 1000,
            k: 10,
        }
    }
}

impl AnnealingSection {
    pub fn state(&self) -> Result<AnnealingState> {
        AnnealingState::new(
            self.scheduler,
            self.t0,
            self.tol,
            self.m,
            self.k,
            self.t_0,
            self.t_mid,
            self.t_1,
            self.n,
            self.n_1,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    pub no_cuda: bool,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self { no_cuda: true }
    }
}

/// One `[kind, a, b, c, d]` row of `trsf_info`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrsfEntry(pub String, pub f64, pub f64, pub f64, pub f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub benchmark: String,
    /// Observation CSV (regression dataset for `adaann`), relative to the
    /// config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_file: Option<String>,
    /// Optional two-column `t,Q` inflow table for the circulation models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waveform_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trsf_info: Option<Vec<TrsfEntry>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            benchmark: "trivial".into(),
            obs_file: None,
            waveform_file: None,
            trsf_info: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        Benchmark::parse(&self.model.benchmark)
    }

    pub fn flow_config(&self) -> FlowConfig {
        let g = &self.general;
        FlowConfig {
            flow_type: g.flow_type,
            n_blocks: g.n_blocks,
            hidden_size: g.hidden_size,
            n_hidden: g.n_hidden,
            activation: g.activation_fn,
            input_order: g.input_order,
            batch_norm: g.batch_norm_order,
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        match self.optimizer.lr_scheduler {
            LrScheduler::ExponentialLR => LrSchedule::Exponential {
                gamma: self.optimizer.lr_decay,
            },
            LrScheduler::StepLR => LrSchedule::Step {
                step_size: self.optimizer.lr_step.unwrap_or(1),
                gamma: STEP_LR_GAMMA,
            },
        }
    }

    pub fn surrogate_config(&self) -> SurrogateConfig {
        let s = &self.surrogate;
        SurrogateConfig {
            pre_it: s.surr_pre_it,
            upd_it: s.surr_upd_it,
            budget: s.budget,
            ..Default::default()
        }
    }

    /// Configured transformation, or the benchmark default.
    pub fn transform(&self) -> Result<InputTransformation> {
        match &self.model.trsf_info {
            Some(rows) => {
                let rows: Vec<_> = rows.iter().map(|r| (r.0.clone(), r.1, r.2, r.3, r.4)).collect();
                InputTransformation::from_rows(&rows).map_err(|e| Error::Config(format!("trsf_info: {e}")))
            }
            None => Ok(self.benchmark()?.default_transform()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let b = self.benchmark()?;
        let g = &self.general;
        if g.input_size != b.input_dim() {
            return bad(format!(
                "general.input_size = {} but benchmark '{}' has {} parameters",
                g.input_size,
                b,
                b.input_dim()
            ));
        }
        for (key, v) in [
            ("general.n_blocks", g.n_blocks),
            ("general.hidden_size", g.hidden_size),
            ("general.n_hidden", g.n_hidden),
            ("general.batch_size", g.batch_size),
            ("general.true_data_num", g.true_data_num),
            ("optimizer.log_interval", self.optimizer.log_interval),
            ("surrogate.n_sample", self.surrogate.n_sample),
            ("surrogate.calibrate_interval", self.surrogate.calibrate_interval),
            ("surrogate.gridnum", self.surrogate.gridnum),
        ] {
            if v == 0 {
                return bad(format!("{key} must be positive"));
            }
        }
        if self.surrogate.n_sample < 2 {
            return bad("surrogate.n_sample must be at least 2".into());
        }
        if !self.annealing.annealing && g.n_iter == 0 {
            return bad("general.n_iter must be positive".into());
        }
        if g.save_interval == Some(0) || self.surrogate.store_surr_interval == Some(0) {
            return bad("save intervals must be positive".into());
        }
        if !self.optimizer.optimizer.eq_ignore_ascii_case("adam") {
            return bad(format!("optimizer.optimizer '{}' is not supported (use 'Adam')", self.optimizer.optimizer));
        }
        if !(self.optimizer.lr > 0.0) || !(self.optimizer.lr_decay > 0.0) {
            return bad("optimizer.lr and optimizer.lr_decay must be positive".into());
        }
        if self.optimizer.lr_scheduler == LrScheduler::StepLR && self.optimizer.lr_step.unwrap_or(0) == 0 {
            return bad("optimizer.lr_step must be a positive integer with StepLR".into());
        }
        let t = self.transform()?;
        if t.dim() != g.input_size {
            return bad(format!("model.trsf_info has {} rows, expected {}", t.dim(), g.input_size));
        }
        if let Some(l) = &self.surrogate.limits {
            if l.len() != g.input_size {
                return bad(format!("surrogate.limits has {} rows, expected {}", l.len(), g.input_size));
            }
            if l.iter().any(|[lo, hi]| !(lo < hi)) {
                return bad("surrogate.limits rows need low < high".into());
            }
        }
        if !b.differentiable() && !self.surrogate.enabled {
            return bad(format!("benchmark '{b}' has no differentiable solver; set surrogate.enabled = true"));
        }
        if self.annealing.annealing {
            self.annealing.state()?;
        }
        Ok(())
    }
}
