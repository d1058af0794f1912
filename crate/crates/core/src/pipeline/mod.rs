//! Stage 1 and Stage 2 training, evaluation on balanced held-out sets,
//! checkpointing and ablations.

mod ablation;
mod dataset;
mod evaluate;
mod train;

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Container, RngState, TensorData};
use crate::corpus::AttributeScaler;
use crate::error::{Error, Result};
use crate::network::{DeepSerConfig, DeepSerParams, Parameters};
use crate::optim::{AdamW, AdamWConfig};

pub use ablation::{run_ablation, run_pipeline, AblationRow, AblationTable, Variant};
pub use dataset::{Dataset, Sample};
pub use evaluate::{evaluate, evaluate_sets, Evaluation, SetEvaluation};
pub use train::{train_stage1, train_stage2, StageOutcome, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Train on the one-hot of each soft target's argmax.
    pub one_hot_targets: bool,
    /// Fuse only the pooled unimodal vectors.
    pub late_fusion: bool,
    pub no_mixup: bool,
    /// Drop the attribute-regression term.
    pub no_multitask: bool,
    pub no_stage2: bool,
}

fn d_batch() -> usize {
    16
}
fn d_lr() -> f64 {
    1e-5
}
fn d_wd() -> f64 {
    0.01
}
fn d_p() -> f64 {
    0.3
}
fn d_epochs() -> usize {
    100
}
fn d_patience() -> usize {
    10
}
fn d_sets() -> usize {
    5
}
fn d_lce() -> f64 {
    1.5
}
fn d_lmse() -> f64 {
    0.4
}
fn d_eval_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: u8,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    /// Probability that a training batch is mixed.
    #[serde(default = "d_p")]
    pub mixup_p: f64,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of balanced validation resamples averaged for model selection.
    #[serde(default = "d_sets")]
    pub eval_sets: usize,
    #[serde(default = "d_lce")]
    pub lambda_ce: f64,
    #[serde(default = "d_lmse")]
    pub lambda_mse: f64,
    #[serde(default = "d_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl StageConfig {
    pub fn stage1(seed: u64) -> Self {
        Self {
            stage: 1,
            batch_size: d_batch(),
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            mixup_p: d_p(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            seed,
            eval_sets: d_sets(),
            lambda_ce: d_lce(),
            lambda_mse: d_lmse(),
            eval_batch_size: d_eval_batch(),
            ablation: AblationFlags::default(),
        }
    }

    pub fn stage2(seed: u64) -> Self {
        Self {
            stage: 2,
            ..Self::stage1(seed)
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !matches!(self.stage, 1 | 2) {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.mixup_p) {
            return bad(format!("mixup_p {} outside [0, 1]", self.mixup_p));
        }
        if self.eval_sets == 0 {
            return bad("eval_sets must be >= 1".into());
        }
        if self.weight_decay < 0.0 || self.lambda_ce < 0.0 || self.lambda_mse < 0.0 {
            return bad("weight_decay and loss weights must be >= 0".into());
        }
        Ok(())
    }
}

/// Per-epoch log line. Epoch 0 is the evaluation before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_macro_f1: f64,
    pub val_macro_f1_std: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DeepSerParams,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
}

/// Parameters plus training provenance, tagged with the stage that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub stage: u8,
    pub model: DeepSerConfig,
    pub stage_config: StageConfig,
    pub scaler: AttributeScaler,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    model: DeepSerConfig,
    stage_config: StageConfig,
    scaler: AttributeScaler,
    epoch: usize,
    best_metric: Option<f64>,
    best_epoch: usize,
    bad_epochs: usize,
    rng: RngState,
    optimizer: AdamWConfig,
    optimizer_step: u64,
    history: Vec<EpochRecord>,
}

const MODEL_KIND: &str = "deepser";

impl ModelCheckpoint {
    pub fn params(&self) -> &DeepSerParams {
        &self.state.params
    }

    pub fn to_container(&self) -> Result<Container> {
        let s = &self.state;
        let meta = Meta {
            kind: MODEL_KIND.into(),
            model: self.model.clone(),
            stage_config: self.stage_config.clone(),
            scaler: self.scaler,
            epoch: s.epoch,
            best_metric: s.best_metric,
            best_epoch: s.best_epoch,
            bad_epochs: s.bad_epochs,
            rng: RngState::capture(&s.rng),
            optimizer: s.optimizer.config,
            optimizer_step: s.optimizer.step,
            history: s.history.clone(),
        };
        let mut c = Container::new(self.stage, serde_json::to_value(meta)?);
        c.push_params("params", &s.params);
        c.push(
            "optim.m",
            vec![s.optimizer.m.len()],
            TensorData::F64(s.optimizer.m.clone()),
        );
        c.push(
            "optim.v",
            vec![s.optimizer.v.len()],
            TensorData::F64(s.optimizer.v.clone()),
        );
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: Meta = serde_json::from_value(c.metadata.clone())?;
        if meta.kind != MODEL_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a `{MODEL_KIND}` checkpoint, found `{}`",
                meta.kind
            )));
        }
        let mut params = DeepSerParams::init(&meta.model, 0);
        c.load_params("params", &mut params)?;
        let n = params.num_params();
        let mut optimizer = AdamW::new(meta.optimizer, n);
        optimizer.step = meta.optimizer_step;
        optimizer.m = c.flat("optim.m")?;
        optimizer.v = c.flat("optim.v")?;
        if optimizer.m.len() != n || optimizer.v.len() != n {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameter count".into(),
            ));
        }
        Ok(Self {
            stage: c.stage,
            model: meta.model,
            stage_config: meta.stage_config,
            scaler: meta.scaler,
            state: TrainState {
                params,
                optimizer,
                epoch: meta.epoch,
                best_metric: meta.best_metric,
                best_epoch: meta.best_epoch,
                bad_epochs: meta.bad_epochs,
                rng: meta.rng.restore()?,
                history: meta.history,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
