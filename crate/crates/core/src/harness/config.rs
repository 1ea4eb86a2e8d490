//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::{Activation, Loss, DEFAULT_CLAMP};
use crate::optim::{HyperParams, OptimizerKind, StepSchedule};

/// Environment variable that replaces `run.output_dir` when set.
pub const OUT_DIR_ENV: &str = "INDIAN_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    pub optimizers: Vec<OptimizerKind>,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    RosenbrockNs,
    PowerAbs {
        c: f64,
    },
    /// `½ θᵀQθ + bᵀθ` with `Q` given either by its diagonal or by rows.
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diag: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<f64>>,
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: Activation,
        #[serde(default = "default_loss")]
        loss: Loss,
        #[serde(default = "default_clamp")]
        clamp: f64,
        data: DataConfig,
    },
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_loss() -> Loss {
    Loss::CrossEntropy
}

fn default_clamp() -> f64 {
    DEFAULT_CLAMP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// IDX files; the first `n_train` training and first `n_test` test
    /// samples are used.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_train: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_test: Option<usize>,
    },
    Blobs {
        n_train: usize,
        n_test: usize,
        classes: usize,
        dim: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent uniform draws (the default).
    #[default]
    WithReplacement,
    /// Shuffled passes over the training set.
    WithoutReplacement,
    /// Every term in index order at every step.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to the number of training terms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Interval logging period; 0 disables it.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Log at every epoch boundary as well.
    #[serde(default = "default_true")]
    pub log_epochs: bool,
    #[serde(default)]
    pub sampling: Sampling,
    /// Explicit starting point shared by every seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    /// Compute the full selection at log rows for the steady-set residual.
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_log_every() -> u64 {
    100
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch_size: None,
            iterations: None,
            epochs: None,
            seeds: default_seeds(),
            log_every: default_log_every(),
            log_epochs: true,
            sampling: Sampling::default(),
            theta0: None,
            residual: true,
            record_wall_time: false,
            output_dir: default_output_dir(),
        }
    }
}

impl RunConfig {
    /// `output_dir`, unless overridden through [`OUT_DIR_ENV`].
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid")]
    pub gamma0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_epochs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_iterations: Option<u64>,
    /// Seed of the search runs; defaults to the first run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Nine log-spaced values from `1e-4` to `1`.
pub fn default_grid() -> Vec<f64> {
    (0..9).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            gamma0: default_grid(),
            budget_epochs: None,
            budget_iterations: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub h: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    /// Defaults to the initialization that makes the first step `−h ∇J(θ₀)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi0: Option<Vec<f64>>,
    /// Fit window; defaults to `[t_end/10, t_end]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Stored states are thinned to every `stride`-th one in the CSV.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.optimizers.is_empty() {
            return bad("at least one optimizer is required".into());
        }
        for o in &self.optimizers {
            o.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.schedule.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let run = &self.run;
        if run.seeds.is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        match (run.iterations, run.epochs) {
            (Some(_), Some(_)) => return bad("set only one of run.iterations and run.epochs".into()),
            (None, None) => return bad("one of run.iterations or run.epochs is required".into()),
            _ => {}
        }
        if run.batch_size == Some(0) {
            return bad("run.batch_size must be positive".into());
        }
        if run.sampling == Sampling::Full && run.batch_size.is_some() {
            return bad("run.batch_size cannot be combined with full sampling".into());
        }
        match &self.objective {
            ObjectiveConfig::PowerAbs { c } if !(*c > 1.0) => return bad(format!("power_abs needs c > 1, got {c}")),
            ObjectiveConfig::Quadratic { diag, rows, .. } => {
                if diag.is_some() == rows.is_some() {
                    return bad("quadratic needs exactly one of diag or rows".into());
                }
            }
            ObjectiveConfig::Mlp { clamp, .. } if !(*clamp > 0.0 && *clamp < 1.0) => {
                return bad(format!("mlp clamp must lie in (0, 1), got {clamp}"));
            }
            _ => {}
        }
        if let Some(g) = &self.grid {
            if g.gamma0.is_empty() {
                return bad("grid.gamma0 must not be empty".into());
            }
            if g.gamma0.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return bad("grid.gamma0 values must be positive and finite".into());
            }
            if g.budget_epochs.is_some() && g.budget_iterations.is_some() {
                return bad("set only one of grid.budget_epochs and grid.budget_iterations".into());
            }
        }
        if let Some(f) = &self.flow {
            if !(f.h > 0.0) || !(f.t_end >= f.h) {
                return bad("flow needs h > 0 and t_end >= h".into());
            }
            if f.stride == 0 {
                return bad("flow.stride must be positive".into());
            }
            if f.alpha.is_some() != f.beta.is_some() {
                return bad("flow.alpha and flow.beta go together".into());
            }
        }
        Ok(())
    }

    /// Damping used by the `flow` command: explicit values, else those of the
    /// first INDIAN optimizer, else the defaults.
    pub fn flow_hyper_params(&self) -> Result<HyperParams, HarnessError> {
        if let Some(FlowConfig {
            alpha: Some(a),
            beta: Some(b),
            ..
        }) = &self.flow
        {
            return HyperParams::new(*a, *b).map_err(|e| HarnessError::Config(e.to_string()));
        }
        Ok(self
            .optimizers
            .iter()
            .find_map(|o| o.hyper_params())
            .unwrap_or_default())
    }
}
