use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Dataset, ModelCheckpoint};
use crate::corpus::{argmax, NUM_ATTRIBUTES, NUM_CLASSES};
use crate::error::Result;
use crate::network::{predict, DeepSerConfig, DeepSerParams};
use crate::objective::{metrics, softmax, Metrics};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub ids: Vec<String>,
    /// Softmax posteriors (n, 8).
    pub posteriors: Array2<f64>,
    /// Standardized attribute predictions (n, 3).
    pub attributes: Array2<f64>,
    pub preds: Vec<usize>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEvaluation {
    pub per_set: Vec<Metrics>,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub mean_accuracy: f64,
}

/// Eval-mode posteriors and attribute predictions for `idx`, in order.
pub(crate) fn predict_indices(
    params: &DeepSerParams,
    model: &DeepSerConfig,
    data: &Dataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut post = Array2::zeros((idx.len(), NUM_CLASSES));
    let mut attrs = Array2::zeros((idx.len(), NUM_ATTRIBUTES));
    for (k, chunk) in idx.chunks(batch_size.max(1)).enumerate() {
        let out = predict(params, model, &data.batch(chunk, false)?)?;
        let start = k * batch_size.max(1);
        post.slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&softmax(&out.logits));
        attrs
            .slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&out.attributes);
    }
    Ok((post, attrs))
}

pub(crate) fn hard_preds(posteriors: &Array2<f64>) -> Vec<usize> {
    posteriors
        .axis_iter(Axis(0))
        .map(|r| argmax(r.as_slice().expect("row-major")))
        .collect()
}

/// Eval-mode forward over `ids`: posteriors, argmax predictions and metrics.
pub fn evaluate(ckpt: &ModelCheckpoint, ids: &[String], data: &Dataset) -> Result<Evaluation> {
    let idx = data.positions(ids)?;
    let (posteriors, attributes) = predict_indices(
        ckpt.params(),
        &ckpt.model,
        data,
        &idx,
        ckpt.stage_config.eval_batch_size,
    )?;
    let preds = hard_preds(&posteriors);
    let metrics = metrics(&preds, &data.labels(&idx))?;
    Ok(Evaluation {
        ids: ids.to_vec(),
        posteriors,
        attributes,
        preds,
        metrics,
    })
}

pub(crate) fn summarize(per_set: Vec<Metrics>) -> SetEvaluation {
    let n = per_set.len().max(1) as f64;
    let mean = per_set.iter().map(|m| m.macro_f1).sum::<f64>() / n;
    let var = per_set
        .iter()
        .map(|m| (m.macro_f1 - mean).powi(2))
        .sum::<f64>()
        / n;
    let mean_accuracy = per_set.iter().map(|m| m.accuracy).sum::<f64>() / n;
    SetEvaluation {
        per_set,
        mean_macro_f1: mean,
        std_macro_f1: var.sqrt(),
        mean_accuracy,
    }
}

/// Metrics on several index sets from one prediction pass over their union.
pub(crate) fn evaluate_index_sets(
    params: &DeepSerParams,
    model: &DeepSerConfig,
    data: &Dataset,
    sets: &[Vec<usize>],
    batch_size: usize,
) -> Result<SetEvaluation> {
    let union: Vec<usize> = {
        let mut u: Vec<usize> = sets.iter().flatten().copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    let (post, _) = predict_indices(params, model, data, &union, batch_size)?;
    let preds = hard_preds(&post);
    let pred_of: BTreeMap<usize, usize> = union.iter().copied().zip(preds).collect();
    let per_set = sets
        .iter()
        .map(|set| {
            let p: Vec<usize> = set.iter().map(|i| pred_of[i]).collect();
            metrics(&p, &data.labels(set))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per_set))
}

/// Mean and standard deviation of metrics across several id lists.
pub fn evaluate_sets(
    ckpt: &ModelCheckpoint,
    sets: &[Vec<String>],
    data: &Dataset,
) -> Result<SetEvaluation> {
    let idx = sets
        .iter()
        .map(|s| data.positions(s))
        .collect::<Result<Vec<_>>>()?;
    evaluate_index_sets(
        ckpt.params(),
        &ckpt.model,
        data,
        &idx,
        ckpt.stage_config.eval_batch_size,
    )
}
