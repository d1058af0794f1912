use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeTriple, Corpus, Split, NUM_ATTRIBUTES};
use crate::error::{Error, Result};

/// Per-attribute mean and standard deviation estimated on the train split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeScaler {
    pub mean: [f64; NUM_ATTRIBUTES],
    pub std: [f64; NUM_ATTRIBUTES],
}

impl Default for AttributeScaler {
    fn default() -> Self {
        Self::identity()
    }
}

impl AttributeScaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_ATTRIBUTES],
            std: [1.0; NUM_ATTRIBUTES],
        }
    }

    /// Population statistics; a zero deviation is replaced by 1.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a AttributeTriple>) -> Option<Self> {
        let rows: Vec<[f64; NUM_ATTRIBUTES]> = samples.into_iter().map(|a| a.to_array()).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; NUM_ATTRIBUTES];
        for r in &rows {
            for k in 0..NUM_ATTRIBUTES {
                mean[k] += r[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; NUM_ATTRIBUTES];
        for r in &rows {
            for k in 0..NUM_ATTRIBUTES {
                std[k] += (r[k] - mean[k]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Some(Self { mean, std })
    }

    pub fn transform(&self, a: &AttributeTriple) -> AttributeTriple {
        let v = a.to_array();
        AttributeTriple::from_array(std::array::from_fn(|k| (v[k] - self.mean[k]) / self.std[k]))
    }

    pub fn inverse(&self, a: &AttributeTriple) -> AttributeTriple {
        let v = a.to_array();
        AttributeTriple::from_array(std::array::from_fn(|k| v[k] * self.std[k] + self.mean[k]))
    }
}

/// Standardizes attributes of every split with statistics from the train split.
pub fn standardize_attributes(corpus: &Corpus) -> Result<(Corpus, AttributeScaler)> {
    let scaler = AttributeScaler::fit(corpus.in_split(Split::Train).map(|u| &u.attributes))
        .ok_or_else(|| {
            Error::Config("cannot standardize attributes: train split is empty".into())
        })?;
    let mut out = corpus.clone();
    for u in &mut out.utterances {
        u.attributes = scaler.transform(&u.attributes);
    }
    Ok((out, scaler))
}
