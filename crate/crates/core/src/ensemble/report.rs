use serde::{Deserialize, Serialize};

use super::{
    hard_vote, meta_predict, soft_vote, soup, train_meta, MetaConfig, MetaParams, PosteriorSet,
};
use crate::error::{Error, Result};
use crate::objective::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleComparison {
    pub rows: Vec<ComparisonRow>,
    /// Evaluation macro-F1 of each single meta run, in seed order.
    pub meta_runs: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl EnsembleComparison {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<26} {:>9} {:>9} {:>9}\n",
            "Method", "Macro-F1", "Micro-F1", "Accuracy"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<26} {:>9.4} {:>9.4} {:>9.4}\n",
                r.method, r.macro_f1, r.micro_f1, r.accuracy
            ));
        }
        s
    }
}

pub const MAJORITY: &str = "Majority Voting";
pub const SOFT: &str = "Soft Voting";
pub const META_SINGLE: &str = "Meta-classifier (Single)";
pub const META_SOUP: &str = "Meta-classifier (Soup)";

fn row(method: &str, preds: &[usize], truth: &[usize]) -> Result<ComparisonRow> {
    let m = metrics(preds, truth)?;
    Ok(ComparisonRow {
        method: method.into(),
        macro_f1: m.macro_f1,
        micro_f1: m.micro_f1,
        accuracy: m.accuracy,
    })
}

/// Majority voting, soft voting, one meta-classifier (first seed) and the
/// soup of meta-classifiers over all `seeds`, scored on `eval`.
pub fn compare(
    train: &PosteriorSet,
    val: Option<&PosteriorSet>,
    eval: &PosteriorSet,
    config: &MetaConfig,
    seeds: &[u64],
) -> Result<(EnsembleComparison, MetaParams)> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one meta seed is required".into()));
    }
    let truth = eval.labels();
    let mut rows = vec![
        row(MAJORITY, &hard_vote(eval), &truth)?,
        row(SOFT, &soft_vote(eval), &truth)?,
    ];
    let runs = seeds
        .iter()
        .map(|&seed| {
            train_meta(
                train,
                val,
                &MetaConfig {
                    seed,
                    ..config.clone()
                },
            )
            .map(|o| o.params)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta_runs = Vec::with_capacity(runs.len());
    for p in &runs {
        meta_runs.push(metrics(&meta_predict(p, eval)?.1, &truth)?.macro_f1);
    }
    rows.push(row(META_SINGLE, &meta_predict(&runs[0], eval)?.1, &truth)?);
    let souped = soup(&runs)?;
    rows.push(row(META_SOUP, &meta_predict(&souped, eval)?.1, &truth)?);
    Ok((
        EnsembleComparison {
            rows,
            meta_runs,
            seeds: seeds.to_vec(),
        },
        souped,
    ))
}
