//! Stratified splitting, inverse-frequency class weights and balanced
//! per-epoch resampling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Utterance, CATEGORIES, NUM_CLASSES};
use crate::error::{Error, Result};

/// Stream id reserved for evaluation-set draws so they never collide with
/// training epochs drawn from the same seed.
const EVAL_STREAM_OFFSET: u64 = 1 << 32;

/// Per-class cross-entropy weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: [f64; NUM_CLASSES],
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            weights: [1.0; NUM_CLASSES],
        }
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

/// `weights[c] = (N / (|C| * f_c))^0.5`.
pub fn class_weights(counts: &[usize; NUM_CLASSES]) -> Result<ClassWeights> {
    if let Some(c) = counts.iter().position(|&f| f == 0) {
        return Err(Error::MissingClass(CATEGORIES[c]));
    }
    let n: usize = counts.iter().sum();
    let weights = counts.map(|f| (n as f64 / (NUM_CLASSES as f64 * f as f64)).powf(0.5));
    Ok(ClassWeights { weights })
}

pub fn label_counts(labels: impl IntoIterator<Item = usize>) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for l in labels {
        counts[l] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub warnings: Vec<String>,
}

/// Stratified split: every hard-label class is divided independently with
/// `ceil(ratio * n_c)` members going to train. Output lists keep corpus order.
pub fn split_corpus(utterances: &[Utterance], ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if utterances.is_empty() {
        return Err(Error::Config("cannot split an empty corpus".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = vec![false; utterances.len()];
    let mut warnings = Vec::new();
    for class in 0..NUM_CLASSES {
        let mut members: Vec<usize> = (0..utterances.len())
            .filter(|&i| utterances[i].hard_label == class)
            .collect();
        if members.len() < 2 {
            let msg = format!(
                "class `{}` has {} member(s); it cannot appear on both sides of the split",
                CATEGORIES[class],
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        members.shuffle(&mut rng);
        let n_train = (ratio * members.len() as f64 - 1e-9).ceil() as usize;
        for &i in &members[..n_train.min(members.len())] {
            is_train[i] = true;
        }
    }
    let mut split = CorpusSplit {
        warnings,
        ..Default::default()
    };
    for (u, train) in utterances.iter().zip(is_train) {
        if train {
            split.train.push(u.id.clone());
        } else {
            split.val.push(u.id.clone());
        }
    }
    Ok(split)
}

/// Ordered ids for one pass over (a subset of) the training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub ids: Vec<String>,
    pub epoch: usize,
    pub seed: u64,
}

/// Indices into `labels` forming a balanced, shuffled subset: every class
/// contributes exactly `min_c f_c` items drawn without replacement.
pub fn balanced_indices(labels: &[usize], epoch: u64, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass(CATEGORIES[c]));
    }
    let per_class = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for mut members in by_class {
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..per_class]);
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Balanced subset of `pool` (id, hard label) for one epoch.
pub fn balanced_epoch(pool: &[(String, usize)], epoch: usize, seed: u64) -> Result<EpochPlan> {
    let labels: Vec<usize> = pool.iter().map(|(_, l)| *l).collect();
    let idx = balanced_indices(&labels, epoch as u64, seed)?;
    Ok(EpochPlan {
        ids: idx.into_iter().map(|i| pool[i].0.clone()).collect(),
        epoch,
        seed,
    })
}

/// Index form of [`balanced_eval_sets`].
pub fn balanced_eval_indices(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    (0..k as u64)
        .map(|i| balanced_indices(labels, EVAL_STREAM_OFFSET + i, seed))
        .collect()
}

/// `k` independent balanced resamples of a validation pool.
pub fn balanced_eval_sets(
    pool: &[(String, usize)],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let labels: Vec<usize> = pool.iter().map(|(_, l)| *l).collect();
    Ok(balanced_eval_indices(&labels, k, seed)?
        .into_iter()
        .map(|set| set.into_iter().map(|i| pool[i].0.clone()).collect())
        .collect())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttributeTriple, Split, VoteVector};
    use proptest::prelude::*;
    use std::collections::{BTreeMap, HashSet};

    fn utterances(per_class: &[usize]) -> Vec<Utterance> {
        let mut out = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let mut counts = [0; NUM_CLASSES];
                counts[c] = 1;
                out.push(
                    Utterance::from_votes(
                        format!("c{c}_{i}"),
                        Split::Train,
                        VoteVector::new(counts, 0),
                        AttributeTriple::new(4.0, 4.0, 4.0),
                        BTreeMap::new(),
                    )
                    .unwrap(),
                );
            }
        }
        out
    }

    fn pool(per_class: &[usize]) -> Vec<(String, usize)> {
        utterances(per_class)
            .into_iter()
            .map(|u| (u.id, u.hard_label))
            .collect()
    }

    #[test]
    fn ninety_ten_split() {
        let u = utterances(&[100; 8]);
        let s = split_corpus(&u, 0.9, 3).unwrap();
        assert_eq!(s.train.len(), 720);
        assert_eq!(s.val.len(), 80);
        for c in 0..8 {
            let prefix = format!("c{c}_");
            assert_eq!(
                s.train.iter().filter(|id| id.starts_with(&prefix)).count(),
                90
            );
        }
        assert!(s.warnings.is_empty());
        assert_eq!(split_corpus(&u, 0.9, 3).unwrap(), s);
        assert_ne!(split_corpus(&u, 0.9, 4).unwrap().val, s.val);
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let u = utterances(&[10, 1, 10, 10, 10, 10, 10, 10]);
        let s = split_corpus(&u, 0.9, 1).unwrap();
        assert!(s.train.contains(&"c1_0".to_string()));
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(class_weights(&[100; 8]).unwrap().weights, [1.0; 8]);
        // N = 800 with class 0 at 25 and class 1 at 400
        let counts = [25, 400, 75, 60, 60, 60, 60, 60];
        assert_eq!(counts.iter().sum::<usize>(), 800);
        let w = class_weights(&counts).unwrap().weights;
        assert_eq!(w[0], 2.0);
        let oracle = (800.0f64 / (8.0 * 400.0)).sqrt();
        assert!((w[1] - oracle).abs() < 1e-15);
        assert_eq!(w[1], 0.5);
        assert!(matches!(
            class_weights(&[1, 1, 1, 0, 1, 1, 1, 1]),
            Err(Error::MissingClass("fear"))
        ));
    }

    #[test]
    fn balanced_plan_uses_minority_count() {
        let p = pool(&[100, 50, 50, 50, 50, 50, 50, 10]);
        let plan = balanced_epoch(&p, 1, 9).unwrap();
        assert_eq!(plan.ids.len(), 80);
        let labels: Vec<usize> = plan
            .ids
            .iter()
            .map(|id| p.iter().find(|(i, _)| i == id).unwrap().1)
            .collect();
        assert_eq!(label_counts(labels), [10; 8]);
    }

    #[test]
    fn balanced_corpus_plan_is_a_permutation() {
        let p = pool(&[7; 8]);
        let plan = balanced_epoch(&p, 0, 2).unwrap();
        let mut got = plan.ids.clone();
        got.sort();
        let mut all: Vec<String> = p.iter().map(|(i, _)| i.clone()).collect();
        all.sort();
        assert_eq!(got, all);
    }

    #[test]
    fn epochs_resample_majority_but_keep_minority() {
        let p = pool(&[100, 50, 50, 50, 50, 50, 50, 10]);
        let e1 = balanced_epoch(&p, 1, 5).unwrap();
        let e2 = balanced_epoch(&p, 2, 5).unwrap();
        let class_set = |plan: &EpochPlan, c: usize| -> HashSet<String> {
            let prefix = format!("c{c}_");
            plan.ids
                .iter()
                .filter(|id| id.starts_with(&prefix))
                .cloned()
                .collect()
        };
        assert_eq!(class_set(&e1, 7), class_set(&e2, 7));
        assert_eq!(class_set(&e1, 7).len(), 10);
        assert_ne!(class_set(&e1, 0), class_set(&e2, 0));
        assert_eq!(balanced_epoch(&p, 1, 5).unwrap(), e1);
    }

    #[test]
    fn missing_class_is_an_error() {
        let p = pool(&[3, 3, 3, 3, 3, 3, 3, 0]);
        assert!(matches!(
            balanced_epoch(&p, 0, 0),
            Err(Error::MissingClass("neutral"))
        ));
        assert!(balanced_eval_sets(&p, 2, 0).is_err());
    }

    #[test]
    fn eval_sets() {
        let p = pool(&[5; 8]);
        let one = balanced_eval_sets(&p, 1, 0).unwrap();
        let mut got = one[0].clone();
        got.sort();
        let mut all: Vec<String> = p.iter().map(|(i, _)| i.clone()).collect();
        all.sort();
        assert_eq!(got, all);

        let p = pool(&[9, 5, 6, 7, 8, 9, 10, 11]);
        let five = balanced_eval_sets(&p, 5, 4).unwrap();
        assert_eq!(five.len(), 5);
        for set in &five {
            assert_eq!(set.len(), 40);
        }
        assert_eq!(balanced_eval_sets(&p, 5, 4).unwrap(), five);
    }

    #[test]
    fn id_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ids.txt");
        let ids = vec!["a".to_string(), "b c".to_string()];
        write_id_list(&path, &ids).unwrap();
        assert_eq!(read_id_list(&path).unwrap(), ids);
    }

    proptest! {
        #[test]
        fn weight_identity(counts in prop::array::uniform8(1usize..500)) {
            let w = class_weights(&counts).unwrap().weights;
            let n: usize = counts.iter().sum();
            let lhs: f64 = counts.iter().zip(&w).map(|(&f, &a)| f as f64 * a * a).sum();
            prop_assert!((lhs - n as f64).abs() <= 1e-9 * n as f64);
            let most = (0..8).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
            let least = (0..8).min_by_key(|&c| (counts[c], c)).unwrap();
            prop_assert!(w[most] <= w[least]);
            prop_assert!(w.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn balanced_plans_are_exact(counts in prop::array::uniform8(1usize..30), epoch in 0usize..100, seed in any::<u64>()) {
            let p = pool(&counts);
            let plan = balanced_epoch(&p, epoch, seed).unwrap();
            let min = *counts.iter().min().unwrap();
            let mut seen = HashSet::new();
            let mut per = [0usize; 8];
            for id in &plan.ids {
                prop_assert!(seen.insert(id.clone()));
                per[p.iter().find(|(i, _)| i == id).unwrap().1] += 1;
            }
            prop_assert_eq!(per, [min; 8]);
        }

        #[test]
        fn split_is_disjoint_exhaustive_and_stratified(counts in prop::array::uniform8(0usize..40), ratio in 0.05f64..0.95, seed in any::<u64>()) {
            prop_assume!(counts.iter().sum::<usize>() > 0);
            let u = utterances(&counts);
            let s = split_corpus(&u, ratio, seed).unwrap();
            let train: HashSet<_> = s.train.iter().collect();
            let val: HashSet<_> = s.val.iter().collect();
            prop_assert!(train.is_disjoint(&val));
            prop_assert_eq!(train.len() + val.len(), u.len());
            for c in 0..8 {
                let prefix = format!("c{c}_");
                let n_train = s.train.iter().filter(|id| id.starts_with(&prefix)).count() as f64;
                prop_assert!((n_train - ratio * counts[c] as f64).abs() <= 1.0);
            }
        }
    }
}
