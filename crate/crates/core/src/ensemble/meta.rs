use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PosteriorSet;
use crate::checkpoint::Container;
use crate::corpus::{argmax, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::network::{Linear, Parameters};
use crate::objective::{ce_soft_with_grad, metrics, softmax};
use crate::optim::{AdamW, AdamWConfig};
use crate::sampling::{balanced_eval_indices, balanced_indices, label_counts, ClassWeights};

/// Linear map from stacked member posteriors (M·8) to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    /// (M·8, 8)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Parameters for MetaParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [f64])) {
        let p = if prefix.is_empty() {
            String::new()
        } else {
            format!("{prefix}.")
        };
        f(
            format!("{p}weight"),
            self.weight.shape(),
            self.weight.as_slice().unwrap(),
        );
        f(
            format!("{p}bias"),
            self.bias.shape(),
            self.bias.as_slice().unwrap(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [f64])) {
        let p = if prefix.is_empty() {
            String::new()
        } else {
            format!("{prefix}.")
        };
        let shape = self.weight.shape().to_vec();
        f(
            format!("{p}weight"),
            &shape,
            self.weight.as_slice_mut().unwrap(),
        );
        let shape = self.bias.shape().to_vec();
        f(
            format!("{p}bias"),
            &shape,
            self.bias.as_slice_mut().unwrap(),
        );
    }
}

impl MetaParams {
    pub fn zeros(members: usize) -> Self {
        Self {
            weight: Array2::zeros((members * NUM_CLASSES, NUM_CLASSES)),
            bias: Array1::zeros(NUM_CLASSES),
        }
    }

    /// Fan-in uniform initialization.
    pub fn init(members: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = Linear::init(members * NUM_CLASSES, NUM_CLASSES, &mut rng);
        Self {
            weight: l.weight,
            bias: l.bias,
        }
    }

    /// Every member block is `scale · I`, so the logits are the scaled sum
    /// of member posteriors.
    pub fn block_identity(members: usize, scale: f64) -> Self {
        let mut p = Self::zeros(members);
        for k in 0..members {
            for c in 0..NUM_CLASSES {
                p.weight[[k * NUM_CLASSES + c, c]] = scale;
            }
        }
        p
    }

    pub fn members(&self) -> usize {
        self.weight.nrows() / NUM_CLASSES
    }

    /// Frobenius norm of member `k`'s block.
    pub fn block_norm(&self, k: usize) -> f64 {
        self.weight
            .slice(ndarray::s![k * NUM_CLASSES..(k + 1) * NUM_CLASSES, ..])
            .iter()
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            3,
            serde_json::json!({ "kind": "meta", "members": self.members() }),
        );
        c.push_params("meta", self);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let members = c
            .metadata
            .get("members")
            .and_then(|m| m.as_u64())
            .ok_or_else(|| Error::Checkpoint("meta checkpoint lacks a member count".into()))?
            as usize;
        let mut p = Self::zeros(members);
        c.load_params("meta", &mut p)?;
        Ok(p)
    }
}

fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    1e-3
}
fn d_wd() -> f64 {
    0.01
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

/// Starting point of meta-classifier training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MetaInit {
    /// Fan-in uniform weights drawn from the run seed.
    #[default]
    Random,
    /// [`MetaParams::block_identity`], i.e. soft voting.
    BlockIdentity { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_sets")]
    pub eval_sets: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: MetaInit,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            batch_size: d_batch(),
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            eval_sets: d_sets(),
            seed: 0,
            init: MetaInit::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaOutcome {
    pub params: MetaParams,
    pub best_epoch: usize,
    /// Mean balanced-val macro-F1 per epoch, starting with the initial weights.
    pub history: Vec<f64>,
}

/// Posteriors and argmax predictions of the meta-classifier.
pub fn meta_predict(params: &MetaParams, ps: &PosteriorSet) -> Result<(Array2<f64>, Vec<usize>)> {
    if params.weight.dim() != (ps.num_members() * NUM_CLASSES, NUM_CLASSES)
        || params.bias.len() != NUM_CLASSES
    {
        return Err(Error::ShapeMismatch(format!(
            "meta weights {:?} do not fit {} members",
            params.weight.dim(),
            ps.num_members()
        )));
    }
    let post = softmax(&params.logits(&ps.stacked()));
    let preds = post
        .axis_iter(Axis(0))
        .map(|r| argmax(&r.to_vec()))
        .collect();
    Ok((post, preds))
}

fn balanced_score(
    params: &MetaParams,
    ps: &PosteriorSet,
    sets: &[Vec<usize>],
    labels: &[usize],
) -> Result<f64> {
    let (_, preds) = meta_predict(params, ps)?;
    let mut total = 0.0;
    for set in sets {
        let p: Vec<usize> = set.iter().map(|&i| preds[i]).collect();
        let t: Vec<usize> = set.iter().map(|&i| labels[i]).collect();
        total += metrics(&p, &t)?.macro_f1;
    }
    Ok(total / sets.len() as f64)
}

/// Trains the meta-classifier with soft-target cross-entropy (uniform class
/// weights) on balanced per-epoch subsets of `train`, selecting the epoch
/// with the best mean macro-F1 on balanced resamples of `val` (of `train`
/// when no validation set is given).
pub fn train_meta(
    train: &PosteriorSet,
    val: Option<&PosteriorSet>,
    config: &MetaConfig,
) -> Result<MetaOutcome> {
    let labels = train.labels();
    let counts = label_counts(labels.iter().copied());
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass(crate::corpus::CATEGORIES[c]));
    }
    if config.batch_size == 0 || config.eval_sets == 0 {
        return Err(Error::Config(
            "meta batch_size and eval_sets must be >= 1".into(),
        ));
    }
    let val = val.unwrap_or(train);
    let val_labels = val.labels();
    let val_sets = balanced_eval_indices(&val_labels, config.eval_sets, config.seed)?;

    let m = train.num_members();
    let x = train.stacked();
    let mut params = match config.init {
        MetaInit::Random => MetaParams::init(m, config.seed),
        MetaInit::BlockIdentity { scale } => MetaParams::block_identity(m, scale),
    };
    let mut opt = AdamW::for_params(
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &params,
    );
    let uniform = ClassWeights::uniform();

    let mut best = params.clone();
    let mut best_score = balanced_score(&params, val, &val_sets, &val_labels)?;
    let mut best_epoch = 0;
    let mut history = vec![best_score];
    let mut bad = 0;
    for epoch in 1..=config.max_epochs {
        if bad >= config.patience {
            break;
        }
        let order = balanced_indices(&labels, epoch as u64, config.seed)?;
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let tb = train.targets.select(Axis(0), chunk);
            let (_, dlogits) = ce_soft_with_grad(&params.logits(&xb), &tb, &uniform);
            let grads = MetaParams {
                weight: xb.t().dot(&dlogits),
                bias: dlogits.sum_axis(Axis(0)),
            };
            opt.update(&mut params, &grads);
        }
        let score = balanced_score(&params, val, &val_sets, &val_labels)?;
        history.push(score);
        if score > best_score {
            best_score = score;
            best = params.clone();
            best_epoch = epoch;
            bad = 0;
        } else {
            bad += 1;
        }
    }
    Ok(MetaOutcome {
        params: best,
        best_epoch,
        history,
    })
}

/// Elementwise arithmetic mean of equally shaped parameter sets.
///
/// Each coordinate is averaged over its sorted values as `a + Σ(x - a) / k`
/// with `a` the smallest, which is independent of input order and returns
/// `a` exactly when all inputs agree.
pub fn soup(sets: &[MetaParams]) -> Result<MetaParams> {
    let first = sets
        .first()
        .ok_or_else(|| Error::ShapeMismatch("soup needs at least one parameter set".into()))?;
    if sets
        .iter()
        .any(|p| p.weight.dim() != first.weight.dim() || p.bias.len() != first.bias.len())
    {
        return Err(Error::ShapeMismatch("soup inputs differ in shape".into()));
    }
    let flats: Vec<Vec<f64>> = sets.iter().map(|p| p.to_flat()).collect();
    let k = sets.len() as f64;
    let mean: Vec<f64> = (0..flats[0].len())
        .map(|i| {
            let mut vals: Vec<f64> = flats.iter().map(|f| f[i]).collect();
            vals.sort_by(f64::total_cmp);
            let a = vals[0];
            a + vals.iter().map(|v| v - a).sum::<f64>() / k
        })
        .collect();
    let mut out = first.clone();
    out.load_flat(&mean);
    Ok(out)
}
