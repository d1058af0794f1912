use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::evaluate::{evaluate_index_sets, SetEvaluation};
use super::{Dataset, EpochRecord, ModelCheckpoint, StageConfig, TrainState};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::network::{backward, forward, DeepSerConfig, DeepSerParams, FusionKind, MixPlan, Mode};
use crate::objective::{total_loss_with_grad, LossBreakdown, LossConfig};
use crate::optim::AdamW;
use crate::sampling::{
    balanced_eval_indices, balanced_indices, class_weights, label_counts, ClassWeights,
};

/// Best and final checkpoints of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub best: ModelCheckpoint,
    pub last: ModelCheckpoint,
}

/// Owns one training run over a dataset.
pub struct Trainer<'a> {
    pub model: DeepSerConfig,
    pub config: StageConfig,
    data: &'a Dataset,
    train: Vec<usize>,
    val_sets: Vec<Vec<usize>>,
    loss: LossConfig,
    pub state: TrainState,
    best: Option<TrainState>,
}

fn rng_for(seed: u64, stage: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - u64::from(stage));
    rng
}

impl<'a> Trainer<'a> {
    /// Fresh run. `params` continues from existing weights (Stage 2); when
    /// absent they are initialized from the stage seed.
    pub fn new(
        mut model: DeepSerConfig,
        config: StageConfig,
        data: &'a Dataset,
        params: Option<DeepSerParams>,
    ) -> Result<Self> {
        config.validate()?;
        if config.ablation.late_fusion && params.is_none() {
            model.fusion = FusionKind::Late;
        }
        let params = params.unwrap_or_else(|| DeepSerParams::init(&model, config.seed));
        let optimizer = AdamW::for_params(config.optimizer(), &params);
        let state = TrainState {
            params,
            optimizer,
            epoch: 0,
            best_metric: None,
            best_epoch: 0,
            bad_epochs: 0,
            rng: rng_for(config.seed, config.stage),
            history: Vec::new(),
        };
        Self::with_state(model, config, data, state, None)
    }

    /// Continues an interrupted run from its last checkpoint; `best` restores
    /// the best-so-far weights when the two differ.
    pub fn resume(
        last: ModelCheckpoint,
        best: Option<ModelCheckpoint>,
        data: &'a Dataset,
    ) -> Result<Self> {
        Self::with_state(
            last.model,
            last.stage_config,
            data,
            last.state,
            best.map(|b| b.state),
        )
    }

    fn with_state(
        model: DeepSerConfig,
        config: StageConfig,
        data: &'a Dataset,
        state: TrainState,
        best: Option<TrainState>,
    ) -> Result<Self> {
        model.validate()?;
        for m in &model.modalities {
            if !data.modalities.contains(&m.name) {
                return Err(Error::ModalityMissing(m.name.clone()));
            }
        }
        if data.modalities.len() != model.modalities.len()
            || data
                .modalities
                .iter()
                .zip(&model.modalities)
                .any(|(a, b)| *a != b.name)
        {
            return Err(Error::Config(format!(
                "dataset modalities {:?} do not match model order",
                data.modalities
            )));
        }
        let train = data.indices_in(Split::Train);
        if train.is_empty() {
            return Err(Error::Config("train split is empty".into()));
        }
        let counts = label_counts(data.labels(&train));
        let weights = match config.stage {
            1 => class_weights(&counts)?,
            _ => {
                class_weights(&counts)?;
                ClassWeights::uniform()
            }
        };
        let val = data.indices_in(Split::Val);
        if val.is_empty() {
            return Err(Error::Config("validation split is empty".into()));
        }
        let val_sets = balanced_eval_indices(&data.labels(&val), config.eval_sets, config.seed)?
            .into_iter()
            .map(|set| set.into_iter().map(|i| val[i]).collect())
            .collect();
        let loss = LossConfig {
            lambda_ce: config.lambda_ce,
            lambda_mse: config.lambda_mse,
            class_weights: weights,
            multitask: !config.ablation.no_multitask,
        };
        let best = best.or_else(|| (!state.history.is_empty()).then(|| state.clone()));
        Ok(Self {
            model,
            config,
            data,
            train,
            val_sets,
            loss,
            state,
            best,
        })
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn val_sets(&self) -> &[Vec<usize>] {
        &self.val_sets
    }

    fn mixup_p(&self) -> f64 {
        if self.model.mixup.enabled && !self.config.ablation.no_mixup {
            self.config.mixup_p
        } else {
            0.0
        }
    }

    /// Dataset indices visited in `epoch`: a shuffle of the train split in
    /// Stage 1, a fresh balanced subset in Stage 2.
    pub fn epoch_order(&self, epoch: usize) -> Result<Vec<usize>> {
        if self.config.stage == 1 {
            let mut order = self.train.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            Ok(order)
        } else {
            let labels = self.data.labels(&self.train);
            Ok(balanced_indices(&labels, epoch as u64, self.config.seed)?
                .into_iter()
                .map(|i| self.train[i])
                .collect())
        }
    }

    /// One optimizer update on the samples `idx`.
    pub fn step(&mut self, idx: &[usize]) -> Result<LossBreakdown> {
        let batch = self.data.batch(idx, self.config.ablation.one_hot_targets)?;
        let p = self.mixup_p();
        let state = &mut self.state;
        let plan = if p > 0.0 && state.rng.random::<f64>() < p {
            Some(MixPlan::draw(
                batch.len(),
                self.model.mixup.alpha,
                &mut state.rng,
            ))
        } else {
            None
        };
        let pass = forward(
            &state.params,
            &self.model,
            &batch,
            Mode::Train,
            plan.as_ref(),
            &mut state.rng,
        )?;
        let o = &pass.outputs;
        let (loss, dl, da) = total_loss_with_grad(
            &o.logits,
            &o.attributes,
            &o.targets,
            &o.attr_targets,
            &self.loss,
        );
        if !loss.total.is_finite() {
            let ids: Vec<&str> = idx
                .iter()
                .map(|&i| self.data.samples[i].id.as_str())
                .collect();
            return Err(Error::NonFiniteLoss {
                epoch: state.epoch,
                step: state.optimizer.step as usize + 1,
                dump: format!(
                    "ce={} mse={} mixed={} params_finite={} ids={}",
                    loss.ce,
                    loss.mse,
                    plan.is_some(),
                    crate::network::Parameters::all_finite(&state.params),
                    ids.join(",")
                ),
            });
        }
        let grads = backward(&state.params, &self.model, &pass, &dl, &da);
        state.optimizer.update(&mut state.params, &grads);
        Ok(loss)
    }

    /// Model-selection metric on the balanced validation resamples.
    pub fn validate(&self) -> Result<SetEvaluation> {
        evaluate_index_sets(
            &self.state.params,
            &self.model,
            self.data,
            &self.val_sets,
            self.config.eval_batch_size,
        )
    }

    fn record(&mut self, train_loss: Option<f64>) -> Result<()> {
        let v = self.validate()?;
        let s = &mut self.state;
        s.history.push(EpochRecord {
            epoch: s.epoch,
            train_loss,
            val_macro_f1: v.mean_macro_f1,
            val_macro_f1_std: v.std_macro_f1,
        });
        info!(
            "stage {} epoch {}: loss {} val macro-F1 {:.4} ± {:.4}",
            self.config.stage,
            s.epoch,
            train_loss.map_or("-".to_string(), |l| format!("{l:.4}")),
            v.mean_macro_f1,
            v.std_macro_f1
        );
        if s.best_metric.is_none_or(|b| v.mean_macro_f1 > b) {
            s.best_metric = Some(v.mean_macro_f1);
            s.best_epoch = s.epoch;
            s.bad_epochs = 0;
            self.best = Some(s.clone());
        } else {
            s.bad_epochs += 1;
        }
        Ok(())
    }

    /// Trains one epoch and evaluates; returns the mean training loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.state.epoch += 1;
        let order = self.epoch_order(self.state.epoch)?;
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let l = self.step(chunk)?;
            debug!("step {} loss {:.5}", self.state.optimizer.step, l.total);
            total += l.total * chunk.len() as f64;
        }
        let mean = total / order.len() as f64;
        self.record(Some(mean))?;
        Ok(mean)
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.config.max_epochs || self.state.bad_epochs >= self.config.patience
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            stage: self.config.stage,
            model: self.model.clone(),
            stage_config: self.config.clone(),
            scaler: self.data.scaler,
            state: self.state.clone(),
        }
    }

    /// Trains until early stopping or `max_epochs`.
    pub fn run(mut self) -> Result<StageOutcome> {
        if self.state.history.is_empty() {
            self.record(None)?;
        }
        while !self.finished() {
            self.run_epoch()?;
        }
        let last = self.checkpoint();
        let mut best_state = self.best.take().unwrap_or_else(|| self.state.clone());
        best_state.history = self.state.history.clone();
        best_state.best_metric = self.state.best_metric;
        let best = ModelCheckpoint {
            state: best_state,
            ..last.clone()
        };
        Ok(StageOutcome { best, last })
    }
}

/// Stage 1: full train split, formula class weights.
pub fn train_stage1(
    data: &Dataset,
    model: &DeepSerConfig,
    config: &StageConfig,
) -> Result<StageOutcome> {
    if config.stage != 1 {
        return Err(Error::StageMismatch {
            expected: 1,
            found: config.stage,
        });
    }
    Trainer::new(model.clone(), config.clone(), data, None)?.run()
}

/// Stage 2: continues a Stage 1 checkpoint on balanced per-epoch subsets with
/// uniform class weights and fresh optimizer moments.
pub fn train_stage2(
    stage1: &ModelCheckpoint,
    data: &Dataset,
    config: &StageConfig,
) -> Result<StageOutcome> {
    if stage1.stage != 1 {
        return Err(Error::StageMismatch {
            expected: 1,
            found: stage1.stage,
        });
    }
    if config.stage != 2 {
        return Err(Error::StageMismatch {
            expected: 2,
            found: config.stage,
        });
    }
    let mut config = config.clone();
    config.ablation.late_fusion = stage1.model.fusion == FusionKind::Late;
    Trainer::new(
        stage1.model.clone(),
        config,
        data,
        Some(stage1.params().clone()),
    )?
    .run()
}
