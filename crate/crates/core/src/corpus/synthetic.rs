//! Desk-scale stand-in for a real emotion corpus: class-mean-plus-noise
//! feature sequences with simulated annotator votes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_manifest, AttributeTriple, Corpus, FeatureSequence, Split, Utterance, VoteVector,
    NUM_ATTRIBUTES, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::sampling::split_corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    /// Feature dimension.
    pub dim: usize,
    /// Mean sequence length.
    pub mean_len: usize,
}

/// How the class signal is distributed over modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalLayout {
    /// Every modality carries a class-specific direction for every class.
    #[default]
    Shared,
    /// Modality `m` carries the class direction only for classes with
    /// `c % n_modalities == m`; for the remaining classes it shows a shared
    /// decoy direction, so no single modality identifies every class.
    Complementary,
    /// Classes `2k` and `2k + 1` share one direction per modality. On top of
    /// it every utterance draws a random content vector: the first modality
    /// shows it on every frame, the others show it (negated for odd classes)
    /// on even frames and a fixed marker on odd frames. Each modality alone
    /// identifies only the pair; the member is encoded in whether the content
    /// agrees across modalities.
    Interaction,
}

fn default_annotators() -> u32 {
    5
}

fn default_split_ratio() -> f64 {
    0.9
}

fn default_attribute_noise() -> f64 {
    0.5
}

fn default_content_dim() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Samples per class, in category order.
    pub n_per_class: Vec<usize>,
    pub modalities: Vec<ModalitySpec>,
    pub class_separation: f64,
    /// Probability that an annotator votes for the utterance's confuser
    /// class instead of its true class.
    pub disagreement_rate: f64,
    pub seed: u64,
    #[serde(default = "default_annotators")]
    pub annotators: u32,
    /// Fraction of every class assigned to the train split.
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub signal: SignalLayout,
    #[serde(default = "default_attribute_noise")]
    pub attribute_noise: f64,
    /// Width of the per-utterance content vector of the interaction layout.
    #[serde(default = "default_content_dim")]
    pub content_dim: usize,
}

impl SyntheticSpec {
    /// A balanced spec with the given modalities as `(name, dim, mean_len)`.
    pub fn balanced(
        per_class: usize,
        modalities: &[(&str, usize, usize)],
        class_separation: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_per_class: vec![per_class; NUM_CLASSES],
            modalities: modalities
                .iter()
                .map(|&(name, dim, mean_len)| ModalitySpec {
                    name: name.into(),
                    dim,
                    mean_len,
                })
                .collect(),
            class_separation,
            disagreement_rate: 0.0,
            seed,
            annotators: default_annotators(),
            split_ratio: default_split_ratio(),
            signal: SignalLayout::Shared,
            attribute_noise: default_attribute_noise(),
            content_dim: default_content_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_per_class.len() != NUM_CLASSES {
            return bad(format!(
                "n_per_class needs {NUM_CLASSES} entries, got {}",
                self.n_per_class.len()
            ));
        }
        if self.n_per_class.iter().all(|&n| n == 0) {
            return bad("corpus would be empty".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        let mut names: Vec<&str> = Vec::new();
        for m in &self.modalities {
            if m.dim == 0 || m.mean_len == 0 {
                return bad(format!(
                    "modality `{}` needs dim >= 1 and mean_len >= 1",
                    m.name
                ));
            }
            if m.name.is_empty()
                || m.name
                    .contains(|c: char| c.is_whitespace() || c == '/' || c == ':')
            {
                return bad(format!("invalid modality name `{}`", m.name));
            }
            if names.contains(&m.name.as_str()) {
                return bad(format!("duplicate modality `{}`", m.name));
            }
            names.push(&m.name);
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return bad("class_separation must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.disagreement_rate) {
            return bad("disagreement_rate must lie in [0, 1]".into());
        }
        if self.signal == SignalLayout::Interaction {
            if self.modalities.len() < 2 {
                return bad("the interaction layout needs at least 2 modalities".into());
            }
            if self.content_dim == 0 || self.modalities.iter().any(|m| m.dim < self.content_dim) {
                return bad(format!(
                    "content_dim {} must be >= 1 and <= every modality dim",
                    self.content_dim
                ));
            }
        }
        if self.annotators == 0 {
            return bad("annotators must be >= 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)".into());
        }
        if !(self.attribute_noise.is_finite() && self.attribute_noise >= 0.0) {
            return bad("attribute_noise must be finite and >= 0".into());
        }
        Ok(())
    }
}

/// Result of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub manifest_path: PathBuf,
    /// Files whose contents were created or changed by this run.
    pub files_written: usize,
    /// Files that already existed with identical contents.
    pub files_unchanged: usize,
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `k` orthonormal vectors of length `dim` (`k <= dim`).
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = unit_direction(rng, dim);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn write_if_changed(
    path: &Path,
    bytes: &[u8],
    written: &mut usize,
    unchanged: &mut usize,
) -> Result<()> {
    if fs::read(path).map(|old| old == bytes).unwrap_or(false) {
        *unchanged += 1;
    } else {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        *written += 1;
    }
    Ok(())
}

/// Generates a corpus under `out_dir`: `manifest.tsv` plus one feature file
/// per (utterance, modality) in `features/`. The output is a pure function
/// of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_mod = spec.modalities.len();

    let directions: Vec<Vec<Vec<f64>>> = spec
        .modalities
        .iter()
        .map(|m| {
            (0..NUM_CLASSES)
                .map(|_| unit_direction(&mut rng, m.dim))
                .collect()
        })
        .collect();
    let decoys: Vec<Vec<f64>> = spec
        .modalities
        .iter()
        .map(|m| unit_direction(&mut rng, m.dim))
        .collect();
    let content_dim = spec.content_dim;
    let embed: Vec<Vec<Vec<f64>>> = match spec.signal {
        SignalLayout::Interaction => spec
            .modalities
            .iter()
            .map(|m| orthonormal(&mut rng, m.dim, content_dim))
            .collect(),
        _ => Vec::new(),
    };
    let attribute_means: Vec<[f64; NUM_ATTRIBUTES]> = (0..NUM_CLASSES)
        .map(|_| std::array::from_fn(|_| rng.random_range(2.0..6.0)))
        .collect();
    let attr_noise =
        Normal::new(0.0, spec.attribute_noise).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut utterances = Vec::new();
    let mut sequences: Vec<Vec<FeatureSequence>> = Vec::new();
    let mut index = 0usize;
    for (class, &count) in spec.n_per_class.iter().enumerate() {
        for _ in 0..count {
            let id = format!("utt{index:05}");
            index += 1;

            let confuser = {
                let k = rng.random_range(0..NUM_CLASSES - 1);
                if k >= class {
                    k + 1
                } else {
                    k
                }
            };
            let mut counts = [0u32; NUM_CLASSES];
            for _ in 0..spec.annotators {
                if rng.random::<f64>() < spec.disagreement_rate {
                    counts[confuser] += 1;
                } else {
                    counts[class] += 1;
                }
            }

            let attrs: [f64; NUM_ATTRIBUTES] = std::array::from_fn(|k| {
                (attribute_means[class][k] + attr_noise.sample(&mut rng))
                    .clamp(AttributeTriple::RAW_MIN, AttributeTriple::RAW_MAX)
            });

            let content = match spec.signal {
                SignalLayout::Interaction => unit_direction(&mut rng, content_dim),
                _ => Vec::new(),
            };
            let mut seqs = Vec::with_capacity(n_mod);
            let mut paths = BTreeMap::new();
            for (m, modality) in spec.modalities.iter().enumerate() {
                let half = modality.mean_len / 2;
                let len =
                    rng.random_range((modality.mean_len - half).max(1)..=modality.mean_len + half);
                let amplitude = spec.class_separation;
                let frames: Vec<Vec<f64>> = match spec.signal {
                    SignalLayout::Shared => vec![directions[m][class].clone()],
                    SignalLayout::Complementary if class % n_mod == m => {
                        vec![directions[m][class].clone()]
                    }
                    SignalLayout::Complementary => vec![decoys[m].clone()],
                    SignalLayout::Interaction => {
                        let pair = &directions[m][class - class % 2];
                        let flip = if m > 0 && class % 2 == 1 { -1.0 } else { 1.0 };
                        let shown: Vec<f64> = (0..modality.dim)
                            .map(|j| {
                                pair[j]
                                    + flip
                                        * (0..content_dim)
                                            .map(|k| embed[m][k][j] * content[k])
                                            .sum::<f64>()
                            })
                            .collect();
                        if m == 0 {
                            vec![shown]
                        } else {
                            vec![
                                shown,
                                pair.iter().zip(&decoys[m]).map(|(p, d)| p + d).collect(),
                            ]
                        }
                    }
                };
                let values = Array2::from_shape_fn((len, modality.dim), |(t, j)| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (amplitude * frames[t % frames.len()][j] + noise) as f32
                });
                seqs.push(FeatureSequence::new(values)?);
                paths.insert(
                    modality.name.clone(),
                    PathBuf::from(format!("features/{id}.{}.mdsf", modality.name)),
                );
            }
            sequences.push(seqs);
            utterances.push(Utterance::from_votes(
                id,
                Split::Train,
                VoteVector::new(counts, 0),
                AttributeTriple::from_array(attrs),
                paths,
            )?);
        }
    }

    let split = split_corpus(&utterances, spec.split_ratio, spec.seed)?;
    let val: std::collections::HashSet<&String> = split.val.iter().collect();
    for u in &mut utterances {
        if val.contains(&u.id) {
            u.split = Split::Val;
        }
    }

    let corpus = Corpus::new(
        out_dir,
        spec.modalities.iter().map(|m| m.name.clone()).collect(),
        utterances,
    );
    let mut written = 0;
    let mut unchanged = 0;
    for (u, seqs) in corpus.utterances.iter().zip(&sequences) {
        for (modality, seq) in spec.modalities.iter().zip(seqs) {
            let path = corpus.feature_path(u, &modality.name)?;
            write_if_changed(&path, &seq.to_bytes(), &mut written, &mut unchanged)?;
        }
    }

    let manifest_path = out_dir.join("manifest.tsv");
    let tmp = out_dir.join(".manifest.tsv.tmp");
    write_manifest(&tmp, &corpus)?;
    let bytes = fs::read(&tmp)?;
    fs::remove_file(&tmp)?;
    write_if_changed(&manifest_path, &bytes, &mut written, &mut unchanged)?;

    Ok(GeneratedCorpus {
        corpus,
        manifest_path,
        files_written: written,
        files_unchanged: unchanged,
    })
}
