//! Data model: emotion categories, annotator votes, soft targets, attribute
//! triples, utterances, and the on-disk manifest and feature formats.

mod features;
mod manifest;
mod scaler;
mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{
    read_feature_file, write_feature_file, FeatureSequence, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{load_manifest, write_exclusion_report, write_manifest, Exclusion};
pub use scaler::{standardize_attributes, AttributeScaler};
pub use synthetic::{
    generate_synthetic, GeneratedCorpus, ModalitySpec, SignalLayout, SyntheticSpec,
};

/// Number of emotion categories.
pub const NUM_CLASSES: usize = 8;

/// Number of regressed emotional attributes (arousal, valence, dominance).
pub const NUM_ATTRIBUTES: usize = 3;

/// The fixed category order. Every class-indexed vector in the crate uses it.
pub const CATEGORIES: [&str; NUM_CLASSES] = [
    "anger",
    "happiness",
    "sadness",
    "fear",
    "surprise",
    "contempt",
    "disgust",
    "neutral",
];

pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] = ["arousal", "valence", "dominance"];

/// The ordered emotion label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmotionLabelSet;

impl EmotionLabelSet {
    pub fn categories(&self) -> &'static [&'static str; NUM_CLASSES] {
        &CATEGORIES
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        CATEGORIES.iter().position(|c| *c == name)
    }

    pub fn name(&self, index: usize) -> &'static str {
        CATEGORIES[index]
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Raw annotator decisions for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteVector {
    pub counts: [u32; NUM_CLASSES],
    /// Votes cast for categories outside the eight-way label set.
    pub extra_count: u32,
}

impl VoteVector {
    pub fn new(counts: [u32; NUM_CLASSES], extra_count: u32) -> Self {
        Self {
            counts,
            extra_count,
        }
    }

    pub fn in_category_total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn is_usable(&self) -> bool {
        self.in_category_total() > 0
    }
}

/// Normalized annotator distribution over the eight categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub probs: [f64; NUM_CLASSES],
}

impl SoftTarget {
    pub fn one_hot(class: usize) -> Self {
        let mut probs = [0.0; NUM_CLASSES];
        probs[class] = 1.0;
        Self { probs }
    }

    /// Argmax with lowest-index tie-break.
    pub fn hard_label(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Turns vote counts into a soft target. Out-of-category votes are dropped
/// and the remaining in-category counts renormalized.
pub fn normalize_votes(votes: &VoteVector) -> Result<SoftTarget> {
    let total = votes.in_category_total();
    if total == 0 {
        return Err(Error::ZeroVotes);
    }
    let total = total as f64;
    let mut probs = [0.0; NUM_CLASSES];
    for (p, &c) in probs.iter_mut().zip(&votes.counts) {
        *p = f64::from(c) / total;
    }
    Ok(SoftTarget { probs })
}

/// Arousal, valence and dominance. Raw values live on the 1 to 7 scale;
/// after standardization they are z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeTriple {
    pub arousal: f64,
    pub valence: f64,
    pub dominance: f64,
}

impl AttributeTriple {
    pub const RAW_MIN: f64 = 1.0;
    pub const RAW_MAX: f64 = 7.0;

    pub fn new(arousal: f64, valence: f64, dominance: f64) -> Self {
        Self {
            arousal,
            valence,
            dominance,
        }
    }

    pub fn to_array(self) -> [f64; NUM_ATTRIBUTES] {
        [self.arousal, self.valence, self.dominance]
    }

    pub fn from_array(a: [f64; NUM_ATTRIBUTES]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn in_raw_range(&self) -> bool {
        self.to_array()
            .iter()
            .all(|v| (Self::RAW_MIN..=Self::RAW_MAX).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One labelled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    /// Modality name to feature-file path, relative to the corpus root.
    pub features: BTreeMap<String, PathBuf>,
    pub votes: VoteVector,
    pub target: SoftTarget,
    pub attributes: AttributeTriple,
    pub hard_label: usize,
    pub split: Split,
}

impl Utterance {
    /// Builds an utterance from raw votes, deriving the soft target and hard label.
    pub fn from_votes(
        id: impl Into<String>,
        split: Split,
        votes: VoteVector,
        attributes: AttributeTriple,
        features: BTreeMap<String, PathBuf>,
    ) -> Result<Self> {
        let target = normalize_votes(&votes)?;
        Ok(Self {
            id: id.into(),
            features,
            votes,
            hard_label: target.hard_label(),
            target,
            attributes,
            split,
        })
    }
}

/// A loaded manifest: usable utterances plus the rows that were excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Directory that feature paths are resolved against.
    pub root: PathBuf,
    /// Modality names in manifest column order.
    pub modalities: Vec<String>,
    pub utterances: Vec<Utterance>,
    pub exclusions: Vec<Exclusion>,
}

impl Corpus {
    pub fn new(
        root: impl Into<PathBuf>,
        modalities: Vec<String>,
        utterances: Vec<Utterance>,
    ) -> Self {
        Self {
            root: root.into(),
            modalities,
            utterances,
            exclusions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn ids_in(&self, split: Split) -> Vec<String> {
        self.utterances
            .iter()
            .filter(|u| u.split == split)
            .map(|u| u.id.clone())
            .collect()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn feature_path(&self, utterance: &Utterance, modality: &str) -> Result<PathBuf> {
        utterance
            .features
            .get(modality)
            .map(|p| resolve(&self.root, p))
            .ok_or_else(|| Error::ModalityMissing(modality.to_string()))
    }

    /// Checks that every utterance has an existing feature file for each
    /// of `modalities`; the error lists every offending id.
    pub fn validate_features(&self, modalities: &[String]) -> Result<()> {
        let mut missing = Vec::new();
        for u in &self.utterances {
            let ok = modalities.iter().all(|m| {
                u.features
                    .get(m)
                    .map(|p| resolve(&self.root, p).is_file())
                    .unwrap_or(false)
            });
            if !ok {
                missing.push(u.id.clone());
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingFeatureFile { ids: missing })
        }
    }

    /// Per-class hard-label counts over a split.
    pub fn class_counts(&self, split: Split) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for u in self.in_split(split) {
            counts[u.hard_label] += 1;
        }
        counts
    }
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}
