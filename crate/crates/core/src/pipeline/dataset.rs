use std::collections::HashMap;

use crate::corpus::{
    read_feature_file, AttributeScaler, Corpus, FeatureSequence, SoftTarget, Split, NUM_ATTRIBUTES,
    NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::network::Batch;

/// One utterance with its features loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// One sequence per modality, in dataset modality order.
    pub features: Vec<FeatureSequence>,
    pub target: [f64; NUM_CLASSES],
    /// Standardized attributes.
    pub attributes: [f64; NUM_ATTRIBUTES],
    pub label: usize,
    pub split: Split,
}

/// In-memory training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<String>,
    pub samples: Vec<Sample>,
    pub scaler: AttributeScaler,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(modalities: Vec<String>, samples: Vec<Sample>, scaler: AttributeScaler) -> Self {
        let index = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        Self {
            modalities,
            samples,
            scaler,
            index,
        }
    }

    /// Reads feature files for `modalities` (all corpus modalities when
    /// empty) and standardizes attributes with train-split statistics.
    pub fn load(corpus: &Corpus, modalities: &[String]) -> Result<Self> {
        let modalities = if modalities.is_empty() {
            corpus.modalities.clone()
        } else {
            modalities.to_vec()
        };
        corpus.validate_features(&modalities)?;
        let scaler = AttributeScaler::fit(corpus.in_split(Split::Train).map(|u| &u.attributes))
            .unwrap_or_else(AttributeScaler::identity);
        let mut samples = Vec::with_capacity(corpus.len());
        for u in &corpus.utterances {
            let features = modalities
                .iter()
                .map(|m| read_feature_file(&corpus.feature_path(u, m)?))
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                id: u.id.clone(),
                features,
                target: u.target.probs,
                attributes: scaler.transform(&u.attributes).to_array(),
                label: u.hard_label,
                split: u.split,
            });
        }
        Ok(Self::new(modalities, samples, scaler))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn positions(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter().map(|id| self.position(id)).collect()
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn ids_in(&self, split: Split) -> Vec<String> {
        self.indices_in(split)
            .into_iter()
            .map(|i| self.samples[i].id.clone())
            .collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].label).collect()
    }

    /// Keeps only samples for which `keep` holds.
    pub fn retain(&mut self, keep: impl FnMut(&Sample) -> bool) {
        self.samples.retain(keep);
        self.index = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
    }

    /// Collates `idx` into a padded batch; `one_hot` replaces soft targets by
    /// the one-hot of their argmax.
    pub fn batch(&self, idx: &[usize], one_hot: bool) -> Result<Batch> {
        let hard: Vec<[f64; NUM_CLASSES]> = idx
            .iter()
            .map(|&i| SoftTarget::one_hot(self.samples[i].label).probs)
            .collect();
        Batch::collate(idx.iter().enumerate().map(|(k, &i)| {
            let s = &self.samples[i];
            let t = if one_hot { &hard[k] } else { &s.target };
            (&s.features[..], t, &s.attributes)
        }))
    }
}
