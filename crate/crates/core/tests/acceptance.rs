use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medusa_core::corpus::{argmax, generate_synthetic, SignalLayout};
use medusa_core::ensemble::{
    collect_posteriors, compare, hard_vote, load_posterior_set, meta_predict, save_posterior_set,
    soft_vote, soup, train_meta, META_SOUP,
};
use medusa_core::network::{
    backward, forward, predict, Batch, EncoderConfig, FusionKind, MixPlan, ModalityBatch, Mode,
};
use medusa_core::objective::{ce_soft, metrics, total_loss, total_loss_with_grad, LossConfig};
use medusa_core::pipeline::{evaluate, train_stage1, train_stage2, AblationFlags};
use medusa_core::sampling::{class_weights, ClassWeights};
use medusa_core::{
    Dataset, DeepSerConfig, DeepSerParams, MetaConfig, MetaParams, ModelCheckpoint, Parameters,
    PosteriorSet, Split, StageConfig, SyntheticSpec, NUM_CLASSES,
};

fn report(name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    writeln!(std::io::stdout().lock(), "{verdict} {name}: {detail}").unwrap();
    assert!(pass, "{name}: {detail}");
}

fn model(dims: &[(&str, usize)], d: usize, heads: usize, dropout: f64) -> DeepSerConfig {
    let mut enc = EncoderConfig::new(d, heads);
    enc.dropout = dropout;
    DeepSerConfig::new(dims, enc)
}

fn random_batch(config: &DeepSerConfig, lens: &[Vec<usize>], seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = lens[0].len();
    let modalities = config
        .modalities
        .iter()
        .zip(lens)
        .map(|(spec, lens)| {
            let l = *lens.iter().max().unwrap();
            let features = Array3::from_shape_fn((b, l, spec.dim), |(i, t, _)| {
                if t < lens[i] {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                }
            });
            let mask = Array2::from_shape_fn((b, l), |(i, t)| t < lens[i]);
            ModalityBatch { features, mask }
        })
        .collect();
    let mut targets = Array2::from_shape_fn((b, NUM_CLASSES), |_| rng.random_range(0.01..1.0));
    for mut r in targets.rows_mut() {
        let sum = r.sum();
        r /= sum;
    }
    let attributes = Array2::from_shape_fn((b, 3), |_| rng.random_range(-1.0..1.0));
    Batch {
        modalities,
        targets,
        attributes,
    }
}

fn corpus(spec: &SyntheticSpec) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_synthetic(spec, dir.path()).unwrap();
    let data = Dataset::load(&g.corpus, &[]).unwrap();
    (dir, data)
}

fn val_f1(ckpt: &ModelCheckpoint, data: &Dataset) -> f64 {
    evaluate(ckpt, &data.ids_in(Split::Val), data)
        .unwrap()
        .metrics
        .macro_f1
}

fn stage(stage: u8, seed: u64, lr: f64, epochs: usize) -> StageConfig {
    let base = if stage == 1 {
        StageConfig::stage1(seed)
    } else {
        StageConfig::stage2(seed)
    };
    StageConfig {
        learning_rate: lr,
        max_epochs: epochs,
        ..base
    }
}

#[test]
fn gradient_correctness() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for plan in [None, Some(MixPlan::new(0.35, vec![1, 0]))] {
        let cfg = model(&[("a", 3), ("b", 2), ("c", 4)], 8, 2, 0.0);
        let batch = random_batch(&cfg, &[vec![4, 2], vec![3, 4], vec![1, 3]], 11);
        let params = DeepSerParams::init(&cfg, 7);
        let lc = LossConfig {
            class_weights: ClassWeights {
                weights: [1.0, 0.5, 2.0, 1.0, 1.3, 0.7, 1.0, 1.1],
            },
            ..Default::default()
        };
        let loss = |p: &DeepSerParams| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let o = forward(p, &cfg, &batch, Mode::Train, plan.as_ref(), &mut rng)
                .unwrap()
                .outputs;
            total_loss(&o.logits, &o.attributes, &o.targets, &o.attr_targets, &lc).total
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = forward(&params, &cfg, &batch, Mode::Train, plan.as_ref(), &mut rng).unwrap();
        let o = &pass.outputs;
        let (_, dl, da) =
            total_loss_with_grad(&o.logits, &o.attributes, &o.targets, &o.attr_targets, &lc);
        let analytic = backward(&params, &cfg, &pass, &dl, &da).to_flat();
        let flat = params.to_flat();
        let mut probe = params.clone();
        let h = 1e-5;
        for i in 0..flat.len() {
            let mut f = flat.clone();
            f[i] += h;
            probe.load_flat(&f);
            let up = loss(&probe);
            f[i] -= 2.0 * h;
            probe.load_flat(&f);
            let fd = (up - loss(&probe)) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        "gradient correctness",
        worst < 1e-3 && secs < 60.0,
        format!("worst relative error {worst:.2e} over every parameter, {secs:.1}s"),
    );
}

#[test]
fn architecture_contract() {
    let three = model(&[("a", 7), ("b", 5), ("c", 3)], 16, 4, 0.0);
    let widths = (
        three.fused_width(),
        three.clone().with_fusion(FusionKind::Late).fused_width(),
    );
    let params = DeepSerParams::init(&three, 3);
    let arity = widths == (64, 48) && params.fuse.input_dim() == 64;

    let cfg = model(&[("a", 4), ("b", 3)], 8, 2, 0.0);
    let params = DeepSerParams::init(&cfg, 9);
    let short = random_batch(&cfg, &[vec![3], vec![2]], 4);
    let mut long = short.clone();
    for mb in &mut long.modalities {
        let (b, l, f) = mb.features.dim();
        let mut feats = Array3::from_elem((b, l + 4, f), 7.5);
        feats.slice_mut(s![.., ..l, ..]).assign(&mb.features);
        let mut mask = Array2::from_elem((b, l + 4), false);
        mask.slice_mut(s![.., ..l]).assign(&mb.mask);
        *mb = ModalityBatch {
            features: feats,
            mask,
        };
    }
    let a = predict(&params, &cfg, &short).unwrap();
    let b = predict(&params, &cfg, &long).unwrap();
    let pad = (&a.logits - &b.logits)
        .iter()
        .chain((&a.attributes - &b.attributes).iter())
        .fold(0.0f64, |m, d| m.max(d.abs()));

    let mut dropped = cfg.clone();
    dropped.encoder.dropout = 0.3;
    let p = DeepSerParams::init(&dropped, 2);
    let batch = random_batch(&dropped, &[vec![3, 2, 4], vec![1, 3, 2]], 8);
    let bitwise = predict(&p, &dropped, &batch).unwrap() == predict(&p, &dropped, &batch).unwrap();

    report(
        "architecture contract",
        arity && pad < 1e-5 && bitwise,
        format!("fusion widths {widths:?}, padding drift {pad:.1e}, eval bitwise {bitwise}"),
    );
}

#[test]
fn formula_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut identity_err: f64 = 0.0;
    let mut formula_err: f64 = 0.0;
    for _ in 0..200 {
        let counts: [usize; NUM_CLASSES] = std::array::from_fn(|_| rng.random_range(1..5000));
        let n: usize = counts.iter().sum();
        let w = class_weights(&counts).unwrap();
        let total: f64 = counts
            .iter()
            .zip(&w.weights)
            .map(|(&f, a)| f as f64 * a * a)
            .sum();
        identity_err = identity_err.max((total - n as f64).abs());
        for (&f, &a) in counts.iter().zip(&w.weights) {
            formula_err = formula_err.max((a - (n as f64 / (8.0 * f as f64)).sqrt()).abs());
        }
    }

    let mut one_hot = Array2::zeros((4, NUM_CLASSES));
    for (i, c) in [0, 3, 5, 7].into_iter().enumerate() {
        one_hot[[i, c]] = 1.0;
    }
    let baseline = (ce_soft(
        &Array2::zeros((4, NUM_CLASSES)),
        &one_hot,
        &ClassWeights::uniform(),
    ) - 8f64.ln())
    .abs();

    let cfg = model(&[("a", 3), ("b", 2)], 8, 2, 0.0);
    let batch = random_batch(&cfg, &[vec![2, 3, 1], vec![2, 2, 3]], 5);
    let x = Array2::from_shape_fn((3, 8), |_| rng.random_range(-2.0..2.0));
    let identity = MixPlan::new(1.0, vec![2, 0, 1]).apply(&x) == x;
    let mut mass: f64 = 0.0;
    for k in 0..50 {
        let plan = MixPlan::draw(3, 0.4, &mut ChaCha8Rng::seed_from_u64(k));
        for r in plan.apply(&batch.targets).rows() {
            mass = mass.max((r.sum() - 1.0).abs());
        }
    }

    let mut micro_is_accuracy = true;
    for _ in 0..100 {
        let n = rng.random_range(1..60);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let m = metrics(&preds, &truth).unwrap();
        micro_is_accuracy &= m.micro_f1 == m.accuracy;
    }

    report(
        "formula suite",
        identity_err < 1e-9 && formula_err < 1e-12 && baseline < 1e-9 && identity && mass < 1e-6 && micro_is_accuracy,
        format!(
            "weight identity {identity_err:.1e}, CE baseline {baseline:.1e}, mixup identity {identity}, target mass {mass:.1e}, micro = accuracy {micro_is_accuracy}"
        ),
    );
}

#[test]
fn end_to_end_learnability() {
    let t0 = Instant::now();
    let spec = SyntheticSpec {
        split_ratio: 0.8,
        ..SyntheticSpec::balanced(200, &[("audio", 16, 10), ("text", 12, 8)], 4.0, 1)
    };
    let (_d, data) = corpus(&spec);
    let m = DeepSerConfig::new(&[("audio", 16), ("text", 12)], EncoderConfig::new(64, 8));
    let out = train_stage1(
        &data,
        &m,
        &StageConfig {
            max_epochs: 30,
            ..StageConfig::stage1(0)
        },
    )
    .unwrap();
    let best = out
        .best
        .state
        .history
        .iter()
        .map(|h| h.val_macro_f1)
        .fold(0.0, f64::max);
    let reached = out
        .best
        .state
        .history
        .iter()
        .find(|h| h.val_macro_f1 >= 0.90)
        .map(|h| h.epoch);
    let secs = t0.elapsed().as_secs_f64();
    report(
        "end-to-end learnability",
        reached.is_some() && secs < 600.0,
        format!("balanced-val macro-F1 {best:.3}, first epoch >= 0.90: {reached:?}, {secs:.0}s"),
    );
}

#[test]
fn stage2_improves_minority_recall() {
    let minority = [4usize, 5, 6, 7];
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let spec = SyntheticSpec {
            split_ratio: 0.8,
            ..SyntheticSpec::balanced(375, &[("audio", 8, 3), ("text", 6, 3)], 1.0, 100 + seed)
        };
        let (_d, mut data) = corpus(&spec);
        // 300 training samples per majority class, 30 per minority class
        let mut kept = [0usize; NUM_CLASSES];
        data.retain(|s| {
            if s.split != Split::Train || !minority.contains(&s.label) {
                return true;
            }
            kept[s.label] += 1;
            kept[s.label] <= 30
        });
        let train = data.labels(&data.indices_in(Split::Train));
        assert_eq!(
            train.iter().filter(|&&l| l == 0).count(),
            10 * train.iter().filter(|&&l| l == 4).count()
        );

        let m = DeepSerConfig::new(&[("audio", 8), ("text", 6)], EncoderConfig::new(16, 2));
        let s1 = train_stage1(
            &data,
            &m,
            &StageConfig {
                patience: 10,
                ..stage(1, seed, 3e-3, 100)
            },
        )
        .unwrap();
        let s2 = train_stage2(
            &s1.best,
            &data,
            &StageConfig {
                patience: 10,
                ..stage(2, seed, 1e-3, 100)
            },
        )
        .unwrap();
        let ids = data.ids_in(Split::Val);
        let recall = |c: &ModelCheckpoint| {
            let r = evaluate(c, &ids, &data).unwrap().metrics.per_class_recall;
            minority.iter().map(|&k| r[k]).sum::<f64>() / minority.len() as f64
        };
        let (r1, r2) = (recall(&s1.best), recall(&s2.best));
        if r2 > r1 {
            wins += 1;
        }
        lines.push(format!("{r1:.3}->{r2:.3}"));
    }
    report(
        "stage 2 direction",
        wins >= 4,
        format!(
            "minority recall improved in {wins}/5 seeds [{}]",
            lines.join(", ")
        ),
    );
}

fn matched_pair(
    spec_of: impl Fn(u64) -> SyntheticSpec,
    m: &DeepSerConfig,
    stage_of: impl Fn(u64) -> StageConfig,
    variant: AblationFlags,
) -> (f64, f64, Vec<String>) {
    let (mut a, mut b) = (0.0, 0.0);
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let (_d, data) = corpus(&spec_of(seed));
        let full = val_f1(
            &train_stage1(&data, m, &stage_of(seed)).unwrap().best,
            &data,
        );
        let alt = val_f1(
            &train_stage1(
                &data,
                m,
                &StageConfig {
                    ablation: variant,
                    ..stage_of(seed)
                },
            )
            .unwrap()
            .best,
            &data,
        );
        a += full / 5.0;
        b += alt / 5.0;
        lines.push(format!("{full:.3}/{alt:.3}"));
    }
    (a, b, lines)
}

#[test]
fn soft_targets_match_or_beat_one_hot() {
    let (soft, hard, lines) = matched_pair(
        |seed| SyntheticSpec {
            disagreement_rate: 0.4,
            split_ratio: 0.5,
            ..SyntheticSpec::balanced(60, &[("audio", 8, 6), ("text", 6, 5)], 1.0, 200 + seed)
        },
        &DeepSerConfig::new(&[("audio", 8), ("text", 6)], EncoderConfig::new(16, 2)),
        |seed| StageConfig {
            patience: 10,
            ..stage(1, seed, 3e-3, 100)
        },
        AblationFlags {
            one_hot_targets: true,
            ..Default::default()
        },
    );
    report(
        "soft-target direction",
        soft >= hard,
        format!(
            "mean macro-F1 soft {soft:.4} vs one-hot {hard:.4} [{}]",
            lines.join(", ")
        ),
    );
}

#[test]
fn deep_fusion_matches_or_beats_late_fusion() {
    let (deep, late, lines) = matched_pair(
        |seed| SyntheticSpec {
            signal: SignalLayout::Interaction,
            split_ratio: 0.5,
            ..SyntheticSpec::balanced(150, &[("audio", 8, 6), ("text", 8, 6)], 2.0, 300 + seed)
        },
        &DeepSerConfig::new(&[("audio", 8), ("text", 8)], EncoderConfig::new(16, 2)),
        |seed| StageConfig {
            patience: 30,
            ..stage(1, seed, 1e-3, 150)
        },
        AblationFlags {
            late_fusion: true,
            ..Default::default()
        },
    );
    report(
        "deep vs late fusion direction",
        deep >= late,
        format!(
            "mean macro-F1 deep {deep:.4} vs late {late:.4} [{}]",
            lines.join(", ")
        ),
    );
}

fn peaked(c: usize, p: f64) -> [f64; NUM_CLASSES] {
    let mut r = [(1.0 - p) / 7.0; NUM_CLASSES];
    r[c] = p;
    r
}

fn posterior_set(rows: &[[[f64; NUM_CLASSES]; 2]], labels: &[usize]) -> PosteriorSet {
    let n = rows.len();
    PosteriorSet::new(
        vec!["a".into(), "b".into()],
        (0..n).map(|i| format!("u{i:04}")).collect(),
        Array3::from_shape_fn((n, 2, NUM_CLASSES), |(i, k, c)| rows[i][k][c]),
        Array2::from_shape_fn(
            (n, NUM_CLASSES),
            |(i, c)| if labels[i] == c { 1.0 } else { 0.0 },
        ),
        Array2::zeros((n, 3)),
    )
    .unwrap()
}

/// Member `a` is right on classes 0..4 and confidently wrong (class `c - 4`)
/// on 4..8; member `b` mirrors it. Each member's argmax is perfect on its own
/// half, and the confidence level tells which member to trust.
fn complementary_members(per_class: usize, seed: u64) -> PosteriorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..NUM_CLASSES {
        for _ in 0..per_class {
            let right = rng.random_range(0.5..0.6);
            let wrong = rng.random_range(0.7..0.8);
            let (a, b) = if c < 4 {
                (peaked(c, right), peaked(c + 4, wrong))
            } else {
                (peaked(c - 4, wrong), peaked(c, right))
            };
            rows.push([a, b]);
            labels.push(c);
        }
    }
    posterior_set(&rows, &labels)
}

#[test]
fn ensemble_ordering() {
    let train = complementary_members(40, 1);
    let val = complementary_members(20, 2);
    let eval = complementary_members(50, 3);
    let truth = eval.labels();
    let f1 = |preds: &[usize]| metrics(preds, &truth).unwrap().macro_f1;
    for k in 0..2 {
        let own: Vec<usize> = (k * 4..k * 4 + 4).collect();
        let member = eval.member(k);
        for (i, &l) in truth.iter().enumerate() {
            if own.contains(&l) {
                assert_eq!(argmax(&member.row(i).to_vec()), l);
            }
        }
    }
    let config = MetaConfig {
        learning_rate: 0.05,
        ..MetaConfig::default()
    };
    let seeds: Vec<u64> = (0..6).collect();
    let (table, _) = compare(&train, Some(&val), &eval, &config, &seeds).unwrap();
    let hard = f1(&hard_vote(&eval));
    let soft = f1(&soft_vote(&eval));
    let meta = table.meta_runs[0];
    let best_single = table.meta_runs.iter().copied().fold(f64::MIN, f64::max);
    let souped = table.row(META_SOUP).map(|r| r.macro_f1).unwrap_or(f64::NAN);
    report(
        "ensemble ordering",
        meta >= hard + 0.1 && meta >= soft + 0.1 && (souped - best_single).abs() <= 0.02,
        format!("hard {hard:.3}, soft {soft:.3}, meta {meta:.3}, best of 6 meta {best_single:.3}, soup {souped:.3}"),
    );
}

#[test]
fn soup_algebra() {
    let mut idempotent = true;
    let mut permutation = true;
    let mut cancels = true;
    for seed in 0..20u64 {
        let m = 1 + (seed as usize % 4);
        let a = MetaParams::init(m, seed);
        idempotent &= soup(&vec![a.clone(); 1 + seed as usize % 7]).unwrap() == a;
        let mut neg = a.clone();
        neg.scale(-1.0);
        cancels &= soup(&[a.clone(), neg.clone()])
            .unwrap()
            .to_flat()
            .iter()
            .all(|&v| v == 0.0);
        cancels &= soup(&[neg, a.clone()])
            .unwrap()
            .to_flat()
            .iter()
            .all(|&v| v == 0.0);
        let sets: Vec<MetaParams> = (0..6).map(|k| MetaParams::init(m, seed * 10 + k)).collect();
        let base = soup(&sets).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let mut shuffled = sets.clone();
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            permutation &= soup(&shuffled).unwrap() == base;
        }
    }
    report(
        "soup algebra",
        idempotent && permutation && cancels,
        format!(
            "idempotent {idempotent}, permutation invariant {permutation}, W/-W cancels {cancels}"
        ),
    );
}

struct PipelineRun {
    ablation: String,
    history: String,
    evaluation: String,
    ensemble: String,
}

fn full_pipeline(root: &std::path::Path) -> PipelineRun {
    let spec = SyntheticSpec {
        disagreement_rate: 0.2,
        split_ratio: 0.6,
        ..SyntheticSpec::balanced(12, &[("audio", 6, 5), ("text", 4, 4)], 3.0, 5)
    };
    let g = generate_synthetic(&spec, &root.join("corpus")).unwrap();
    let data = Dataset::load(&g.corpus, &[]).unwrap();
    let m = model(&[("audio", 6), ("text", 4)], 8, 2, 0.1);
    let s1 = train_stage1(&data, &m, &stage(1, 3, 3e-3, 3)).unwrap();
    let s2 = train_stage2(&s1.best, &data, &stage(2, 3, 1e-3, 2)).unwrap();
    let seeded = train_stage1(&data, &m, &stage(1, 4, 3e-3, 3)).unwrap();
    let members = vec![
        ("s2".to_string(), s2.best.clone()),
        ("alt".to_string(), seeded.best),
    ];
    let train = collect_posteriors(&members, &data.ids_in(Split::Train), &data).unwrap();
    let eval = collect_posteriors(&members, &data.ids_in(Split::Val), &data).unwrap();
    let config = MetaConfig {
        learning_rate: 0.05,
        max_epochs: 5,
        ..MetaConfig::default()
    };
    let (table, _) = compare(&train, None, &eval, &config, &[0, 1, 2]).unwrap();
    let ablation = medusa_core::pipeline::run_ablation(
        &data,
        &m,
        &stage(1, 0, 3e-3, 2),
        &stage(2, 0, 1e-3, 1),
        &[medusa_core::pipeline::Variant::LateFusion],
        &[7],
    )
    .unwrap();
    PipelineRun {
        ablation: ablation.render(),
        history: serde_json::to_string(&s2.best.state.history).unwrap(),
        evaluation: serde_json::to_string(
            &evaluate(&s2.best, &data.ids_in(Split::Val), &data)
                .unwrap()
                .metrics,
        )
        .unwrap(),
        ensemble: table.render(),
    }
}

#[test]
fn persistence_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        split_ratio: 0.5,
        ..SyntheticSpec::balanced(6, &[("audio", 5, 4), ("text", 3, 3)], 2.0, 1)
    };
    let g = generate_synthetic(&spec, &dir.path().join("corpus")).unwrap();
    let data = Dataset::load(&g.corpus, &[]).unwrap();
    let m = model(&[("audio", 5), ("text", 3)], 8, 2, 0.1);
    let out = train_stage1(&data, &m, &stage(1, 2, 3e-3, 2)).unwrap();
    let path = dir.path().join("best.mdsc");
    out.best.save(&path).unwrap();
    let back = ModelCheckpoint::load(&path).unwrap();
    let ids = data.ids_in(Split::Val);
    let checkpoint_ok = back == out.best
        && evaluate(&back, &ids, &data).unwrap() == evaluate(&out.best, &ids, &data).unwrap();

    let members = vec![
        ("x".to_string(), out.best.clone()),
        ("y".to_string(), out.last.clone()),
    ];
    let ps = collect_posteriors(&members, &ids, &data).unwrap();
    let manifest = save_posterior_set(&ps, &dir.path().join("posteriors")).unwrap();
    let loaded = load_posterior_set(&manifest).unwrap();
    let soft_f1 = |p: &PosteriorSet| metrics(&soft_vote(p), &p.labels()).unwrap();
    let meta = train_meta(
        &ps,
        None,
        &MetaConfig {
            max_epochs: 3,
            ..MetaConfig::default()
        },
    )
    .unwrap()
    .params;
    let posterior_ok = loaded == ps
        && soft_f1(&loaded) == soft_f1(&ps)
        && meta_predict(&meta, &loaded).unwrap() == meta_predict(&meta, &ps).unwrap();

    let a = full_pipeline(&dir.path().join("run_a"));
    let b = full_pipeline(&dir.path().join("run_b"));
    let identical = a.ablation == b.ablation
        && a.history == b.history
        && a.evaluation == b.evaluation
        && a.ensemble == b.ensemble;
    report(
        "persistence",
        checkpoint_ok && posterior_ok && identical,
        format!("checkpoint round-trip {checkpoint_ok}, posterior round-trip {posterior_ok}, identical reruns {identical}"),
    );
}
