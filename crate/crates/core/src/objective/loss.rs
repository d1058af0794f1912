use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::sampling::ClassWeights;

fn default_lambda_ce() -> f64 {
    1.5
}
fn default_lambda_mse() -> f64 {
    0.4
}
fn default_true() -> bool {
    true
}

/// Weights of the multitask objective `lambda_ce * CE + lambda_mse * MSE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(default = "default_lambda_ce")]
    pub lambda_ce: f64,
    #[serde(default = "default_lambda_mse")]
    pub lambda_mse: f64,
    #[serde(default)]
    pub class_weights: ClassWeights,
    /// When false the regression term is dropped (equivalent to `lambda_mse = 0`).
    #[serde(default = "default_true")]
    pub multitask: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_ce: default_lambda_ce(),
            lambda_mse: default_lambda_mse(),
            class_weights: ClassWeights::uniform(),
            multitask: true,
        }
    }
}

impl LossConfig {
    pub fn effective_lambda_mse(&self) -> f64 {
        if self.multitask {
            self.lambda_mse
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub mse: f64,
}

pub(crate) fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Batch-mean of `-sum_c w_c t_c log softmax(z)_c`.
pub fn ce_soft(logits: &Array2<f64>, targets: &Array2<f64>, weights: &ClassWeights) -> f64 {
    ce_soft_with_grad(logits, targets, weights).0
}

/// Loss and its gradient with respect to the logits.
pub fn ce_soft_with_grad(
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &ClassWeights,
) -> (f64, Array2<f64>) {
    let b = logits.nrows() as f64;
    let w = Array1::from_vec(weights.weights.to_vec());
    let logp = log_softmax(logits);
    let weighted = targets * &w;
    let loss = -(&weighted * &logp).sum() / b;
    // d/dz_j = (sum_c w_c t_c) p_j - w_j t_j
    let mass = weighted.sum_axis(Axis(1)).insert_axis(Axis(1));
    let grad = (logp.mapv(f64::exp) * &mass - &weighted) / b;
    (loss, grad)
}

/// Mean over all entries of the squared error.
pub fn mse_attr(preds: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    mse_attr_with_grad(preds, targets).0
}

pub fn mse_attr_with_grad(preds: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = preds.len() as f64;
    let diff = preds - targets;
    let loss = diff.mapv(|d| d * d).sum() / n;
    (loss, diff * (2.0 / n))
}

pub fn total_loss(
    logits: &Array2<f64>,
    attr_preds: &Array2<f64>,
    targets: &Array2<f64>,
    attr_targets: &Array2<f64>,
    config: &LossConfig,
) -> LossBreakdown {
    total_loss_with_grad(logits, attr_preds, targets, attr_targets, config).0
}

/// Loss plus gradients with respect to logits and attribute predictions.
pub fn total_loss_with_grad(
    logits: &Array2<f64>,
    attr_preds: &Array2<f64>,
    targets: &Array2<f64>,
    attr_targets: &Array2<f64>,
    config: &LossConfig,
) -> (LossBreakdown, Array2<f64>, Array2<f64>) {
    let (ce, dce) = ce_soft_with_grad(logits, targets, &config.class_weights);
    let (mse, dmse) = mse_attr_with_grad(attr_preds, attr_targets);
    let l2 = config.effective_lambda_mse();
    let total = config.lambda_ce * ce + l2 * mse;
    (
        LossBreakdown { total, ce, mse },
        dce * config.lambda_ce,
        dmse * l2,
    )
}
