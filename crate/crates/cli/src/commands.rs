use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::info;

use medusa_core::config::load_synthetic_spec;
use medusa_core::corpus::{generate_synthetic, load_manifest};
use medusa_core::ensemble::{
    collect_posteriors, compare, hard_vote, load_posterior_set, meta_predict, save_posterior_set,
    soft_vote, soup, train_meta, ComparisonRow, EnsembleComparison, MemberPosteriors, MAJORITY,
    META_SINGLE, META_SOUP, SOFT,
};
use medusa_core::objective::metrics;
use medusa_core::pipeline::{
    evaluate, run_ablation, train_stage1, train_stage2, StageOutcome, Trainer, Variant,
};
use medusa_core::report::{build_report, write_plots};
use medusa_core::rundir::{EvaluationRecord, RunDir};
use medusa_core::{
    Dataset, DeepSerParams, ExperimentConfig, MetaParams, ModelCheckpoint, Parameters,
    PosteriorSet, Split, CATEGORIES,
};

use crate::{Cli, Command, Failure, Mode};

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

pub fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Generate { spec, out } => generate(spec, out),
        Command::Report { dirs, json, plots } => report(dirs, json.as_deref(), plots.as_deref()),
        _ => {
            let cfg = load_config(&cli)?;
            match cli.command {
                Command::Train {
                    stage,
                    resume,
                    dry_run,
                } => train(&cfg, stage, resume.as_deref(), dry_run),
                Command::Evaluate {
                    checkpoint,
                    split,
                    json,
                } => evaluate_cmd(&cfg, checkpoint.as_deref(), split.as_deref(), json),
                Command::Ensemble {
                    members,
                    posteriors,
                    mode,
                    jobs,
                } => ensemble(&cfg, &members, posteriors.as_deref(), mode, jobs),
                Command::Ablate { variants, seeds } => ablate(&cfg, &variants, &seeds),
                Command::Generate { .. } | Command::Report { .. } => unreachable!(),
            }
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| usage("this command needs --config"))?;
    let cfg = ExperimentConfig::load(path)?.with_overrides(&cli.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn generate(spec_path: &Path, out: &Path) -> Outcome {
    let spec = load_synthetic_spec(spec_path)?;
    let generated = generate_synthetic(&spec, out)?;
    let corpus = &generated.corpus;
    println!(
        "corpus: {} ({} utterances)",
        generated.manifest_path.display(),
        corpus.len()
    );
    println!("{:<10} {:>6} {:>6} {:>6}", "class", "train", "val", "test");
    let counts: Vec<_> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|&s| corpus.class_counts(s))
        .collect();
    for (c, name) in CATEGORIES.iter().enumerate() {
        println!(
            "{name:<10} {:>6} {:>6} {:>6}",
            counts[0][c], counts[1][c], counts[2][c]
        );
    }
    if generated.files_written == 0 {
        println!(
            "unchanged: all {} files already up to date",
            generated.files_unchanged
        );
    } else {
        println!(
            "written {} files, {} unchanged",
            generated.files_written, generated.files_unchanged
        );
    }
    Ok(())
}

fn load_data(cfg: &ExperimentConfig, modalities: &[String]) -> anyhow::Result<Dataset> {
    let corpus = load_manifest(&cfg.paths.corpus)
        .with_context(|| format!("loading {}", cfg.paths.corpus.display()))?;
    Ok(Dataset::load(&corpus, modalities)?)
}

fn eval_split(data: &Dataset) -> Split {
    if data.ids_in(Split::Test).is_empty() {
        Split::Val
    } else {
        Split::Test
    }
}

fn train(cfg: &ExperimentConfig, stage: u8, resume: Option<&Path>, dry_run: bool) -> Outcome {
    if stage == 2 && resume.is_none() {
        return Err(usage("stage 2 needs --resume <stage-1 checkpoint>"));
    }
    let data = load_data(cfg, &cfg.model.modalities)?;
    let model = cfg.model_config(&data)?;
    let config = cfg.stage(stage);
    config.validate()?;
    if dry_run {
        let params = DeepSerParams::init(&model, config.seed);
        println!(
            "config ok: {} modalities, fusion {:?}",
            model.modalities.len(),
            model.fusion
        );
        println!("parameters: {}", params.num_params());
        return Ok(());
    }

    let outcome = match resume {
        None => train_stage1(&data, &model, &config)?,
        Some(path) => {
            let ckpt = ModelCheckpoint::load(path)
                .with_context(|| format!("loading {}", path.display()))?;
            if stage == 2 && ckpt.stage == 1 {
                train_stage2(&ckpt, &data, &config)?
            } else if ckpt.stage == stage {
                let best = path.with_file_name("best.mdsc");
                let best = if best != path && best.exists() {
                    Some(ModelCheckpoint::load(&best)?)
                } else {
                    None
                };
                Trainer::resume(ckpt, best, &data)?.run()?
            } else {
                return Err(medusa_core::Error::StageMismatch {
                    expected: stage,
                    found: ckpt.stage,
                }
                .into());
            }
        }
    };
    write_stage(cfg, stage, &outcome, &data)?;
    Ok(())
}

fn write_stage(
    cfg: &ExperimentConfig,
    stage: u8,
    outcome: &StageOutcome,
    data: &Dataset,
) -> anyhow::Result<()> {
    let run = RunDir::create(&cfg.paths.run_dir)?;
    run.write_config(cfg)?;
    let best_path = run.checkpoint_path(stage, "best");
    outcome.best.save(&best_path)?;
    outcome.last.save(&run.checkpoint_path(stage, "last"))?;
    run.write_history(stage, &outcome.best.state.history)?;
    println!(
        "stage {stage}: best epoch {} (val macro-F1 {:.4}), stopped after epoch {}",
        outcome.best.state.best_epoch,
        outcome.best.state.best_metric.unwrap_or(f64::NAN),
        outcome.last.state.epoch
    );
    for split in [Split::Val, Split::Test] {
        let ids = data.ids_in(split);
        if ids.is_empty() {
            continue;
        }
        let e = evaluate(&outcome.best, &ids, data)?;
        println!(
            "{} macro-F1 {:.4}  accuracy {:.4}",
            split.as_str(),
            e.metrics.macro_f1,
            e.metrics.accuracy
        );
        run.append_evaluation(&EvaluationRecord {
            stage,
            checkpoint: best_path.display().to_string(),
            split: split.as_str().into(),
            metrics: e.metrics,
        })?;
    }
    println!(
        "checkpoints in {}",
        best_path.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

/// Best checkpoint of the latest stage present in a run directory.
fn latest_best(dir: &Path) -> anyhow::Result<PathBuf> {
    let run = RunDir::open(dir);
    [2, 1]
        .into_iter()
        .map(|s| run.checkpoint_path(s, "best"))
        .find(|p| p.exists())
        .ok_or_else(|| anyhow!("no trained checkpoint under {}", dir.display()))
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    split: Option<&str>,
    json: bool,
) -> Outcome {
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => latest_best(&cfg.paths.run_dir).map_err(Failure::Usage)?,
    };
    let ckpt =
        ModelCheckpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let names: Vec<String> = ckpt
        .model
        .modalities
        .iter()
        .map(|m| m.name.clone())
        .collect();
    let data = load_data(cfg, &names)?;
    let split = match split {
        Some(s) => s.parse::<Split>().map_err(usage)?,
        None => eval_split(&data),
    };
    let ids = data.ids_in(split);
    if ids.is_empty() {
        return Err(usage(format!("split `{}` is empty", split.as_str())));
    }
    let e = evaluate(&ckpt, &ids, &data)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&e.metrics).map_err(anyhow::Error::from)?
        );
    } else {
        println!(
            "{} on {} ({} utterances)",
            path.display(),
            split.as_str(),
            ids.len()
        );
        print!("{}", e.metrics.render());
    }
    if cfg.paths.run_dir.exists() {
        RunDir::open(&cfg.paths.run_dir).append_evaluation(&EvaluationRecord {
            stage: ckpt.stage,
            checkpoint: path.display().to_string(),
            split: split.as_str().into(),
            metrics: e.metrics,
        })?;
    }
    Ok(())
}

fn member_checkpoint(path: &Path) -> anyhow::Result<(String, PathBuf)> {
    if path.is_dir() {
        let name = path
            .file_name()
            .map_or_else(|| "member".into(), |n| n.to_string_lossy().into_owned());
        Ok((name, latest_best(path)?))
    } else {
        let stem = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let parent = path
            .parent()
            .and_then(Path::file_name)
            .map(|p| p.to_string_lossy().into_owned());
        let name = parent.map_or(stem.clone(), |p| format!("{p}-{stem}"));
        Ok((name, path.to_path_buf()))
    }
}

/// Posterior sets for meta training, meta early stopping and scoring.
struct EnsembleSets {
    train: PosteriorSet,
    val: Option<PosteriorSet>,
    eval: PosteriorSet,
}

fn load_sets(dir: &Path) -> anyhow::Result<EnsembleSets> {
    let load = |name: &str| -> anyhow::Result<Option<PosteriorSet>> {
        let p = dir.join(name).join("posteriors.json");
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(
            load_posterior_set(&p).with_context(|| format!("loading {}", p.display()))?,
        ))
    };
    let eval =
        load("eval")?.ok_or_else(|| anyhow!("{} has no eval/posteriors.json", dir.display()))?;
    let train =
        load("train")?.ok_or_else(|| anyhow!("{} has no train/posteriors.json", dir.display()))?;
    Ok(EnsembleSets {
        train,
        val: load("val")?,
        eval,
    })
}

fn cached_members(dir: &Path) -> Option<Vec<String>> {
    let eval = load_posterior_set(&dir.join("eval").join("posteriors.json")).ok()?;
    Some(eval.members)
}

fn collect_sets(cfg: &ExperimentConfig, members: &[PathBuf]) -> anyhow::Result<EnsembleSets> {
    let resolved = members
        .iter()
        .map(|m| member_checkpoint(m))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let names: Vec<String> = resolved.iter().map(|(n, _)| n.clone()).collect();
    let cache = RunDir::open(&cfg.paths.run_dir).posteriors_dir();
    if cached_members(&cache).as_ref() == Some(&names) {
        info!("reusing posteriors in {}", cache.display());
        return load_sets(&cache);
    }
    let checkpoints = resolved
        .into_iter()
        .map(|(n, p)| {
            Ok((
                n,
                ModelCheckpoint::load(&p).with_context(|| format!("loading {}", p.display()))?,
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    // members may fuse different modality subsets; load each subset once
    let mut groups: Vec<(Vec<String>, Vec<usize>)> = Vec::new();
    for (k, (_, c)) in checkpoints.iter().enumerate() {
        let mods: Vec<String> = c.model.modalities.iter().map(|m| m.name.clone()).collect();
        match groups.iter_mut().find(|(g, _)| *g == mods) {
            Some((_, ks)) => ks.push(k),
            None => groups.push((mods, vec![k])),
        }
    }
    let datasets = groups
        .iter()
        .map(|(m, _)| load_data(cfg, m))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let reference = &datasets[0];
    let split_set = |split: Split| -> anyhow::Result<Option<PosteriorSet>> {
        let ids = reference.ids_in(split);
        if ids.is_empty() {
            return Ok(None);
        }
        let mut files: Vec<Option<MemberPosteriors>> = vec![None; checkpoints.len()];
        for ((_, ks), data) in groups.iter().zip(&datasets) {
            let sub: Vec<(String, ModelCheckpoint)> =
                ks.iter().map(|&k| checkpoints[k].clone()).collect();
            let ps = collect_posteriors(&sub, &ids, data)?;
            for (k, mp) in ks.iter().zip(ps.member_files()) {
                files[*k] = Some(mp);
            }
        }
        let files: Vec<MemberPosteriors> = files.into_iter().flatten().collect();
        Ok(Some(PosteriorSet::from_members(&files, |id| {
            let s = &reference.samples[reference.position(id)?];
            Ok((s.target, s.attributes))
        })?))
    };
    let train = split_set(Split::Train)?.ok_or_else(|| anyhow!("corpus has no train split"))?;
    let val = split_set(Split::Val)?;
    let eval = match split_set(Split::Test)? {
        Some(t) => t,
        None => val
            .clone()
            .ok_or_else(|| anyhow!("corpus has neither test nor val split"))?,
    };
    for (name, ps) in [
        ("train", Some(&train)),
        ("val", val.as_ref()),
        ("eval", Some(&eval)),
    ] {
        if let Some(ps) = ps {
            save_posterior_set(ps, &cache.join(name))?;
        }
    }
    Ok(EnsembleSets { train, val, eval })
}

fn score(method: &str, preds: &[usize], eval: &PosteriorSet) -> anyhow::Result<ComparisonRow> {
    let m = metrics(preds, &eval.labels())?;
    Ok(ComparisonRow {
        method: method.into(),
        macro_f1: m.macro_f1,
        micro_f1: m.micro_f1,
        accuracy: m.accuracy,
    })
}

fn ensemble(
    cfg: &ExperimentConfig,
    members: &[PathBuf],
    posteriors: Option<&Path>,
    mode: Mode,
    jobs: Option<usize>,
) -> Outcome {
    let sets = match posteriors {
        Some(dir) => load_sets(dir)?,
        None => {
            let members = if members.is_empty() {
                cfg.ensemble.members.clone()
            } else {
                members.to_vec()
            };
            if members.is_empty() {
                return Err(usage(
                    "no ensemble members: pass --members or set ensemble.members",
                ));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(anyhow::Error::from)?;
            pool.install(|| collect_sets(cfg, &members))?
        }
    };
    let meta_cfg = cfg.meta_config();
    let seeds = &cfg.ensemble.soup_seeds;
    let run = RunDir::create(&cfg.paths.run_dir)?;
    let (eval, val) = (&sets.eval, sets.val.as_ref());
    let save_meta = |name: &str, p: &MetaParams| p.to_container().save(&run.root.join(name));

    let comparison = match mode {
        Mode::All => {
            let (cmp, souped) = compare(&sets.train, val, eval, &meta_cfg, seeds)?;
            save_meta("meta_soup.mdsc", &souped)?;
            cmp
        }
        Mode::Vote => single(score(MAJORITY, &hard_vote(eval), eval)?),
        Mode::Soft => single(score(SOFT, &soft_vote(eval), eval)?),
        Mode::Meta => {
            let out = train_meta(&sets.train, val, &meta_cfg)?;
            save_meta("meta.mdsc", &out.params)?;
            let row = score(META_SINGLE, &meta_predict(&out.params, eval)?.1, eval)?;
            EnsembleComparison {
                meta_runs: vec![row.macro_f1],
                rows: vec![row],
                seeds: vec![meta_cfg.seed],
            }
        }
        Mode::Soup => {
            let mut runs = Vec::new();
            let mut scores = Vec::new();
            for &seed in seeds {
                let out = train_meta(
                    &sets.train,
                    val,
                    &medusa_core::MetaConfig {
                        seed,
                        ..meta_cfg.clone()
                    },
                )?;
                scores
                    .push(score(META_SINGLE, &meta_predict(&out.params, eval)?.1, eval)?.macro_f1);
                runs.push(out.params);
            }
            let souped = soup(&runs)?;
            save_meta("meta_soup.mdsc", &souped)?;
            let row = score(META_SOUP, &meta_predict(&souped, eval)?.1, eval)?;
            EnsembleComparison {
                rows: vec![row],
                meta_runs: scores,
                seeds: seeds.clone(),
            }
        }
    };
    println!(
        "members: {}  ({} eval utterances)",
        eval.members.join(", "),
        eval.len()
    );
    print!("{}", comparison.render());
    fs::write(
        run.root.join("ensemble.json"),
        serde_json::to_string_pretty(&comparison).map_err(anyhow::Error::from)?,
    )
    .map_err(anyhow::Error::from)?;
    Ok(())
}

fn single(row: ComparisonRow) -> EnsembleComparison {
    EnsembleComparison {
        rows: vec![row],
        meta_runs: Vec::new(),
        seeds: Vec::new(),
    }
}

fn ablate(cfg: &ExperimentConfig, variants: &[String], seeds: &[u64]) -> Outcome {
    let variants = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants
            .iter()
            .map(|v| v.parse::<Variant>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(usage)?
    };
    let seeds = if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds.to_vec()
    };
    let data = load_data(cfg, &cfg.model.modalities)?;
    let model = cfg.model_config(&data)?;
    let table = run_ablation(
        &data,
        &model,
        &cfg.stage(1),
        &cfg.stage(2),
        &variants,
        &seeds,
    )?;
    print!("{}", table.render());
    let run = RunDir::create(&cfg.paths.run_dir)?;
    run.write_config(cfg)?;
    fs::write(
        run.root.join("ablation.json"),
        serde_json::to_string_pretty(&table).map_err(anyhow::Error::from)?,
    )
    .map_err(anyhow::Error::from)?;
    Ok(())
}

fn report(dirs: &[PathBuf], json: Option<&Path>, plots: Option<&Path>) -> Outcome {
    if dirs.is_empty() {
        return Err(usage("no run directories given"));
    }
    if let Some(missing) = dirs.iter().find(|d| !d.is_dir()) {
        return Err(usage(format!("{} is not a directory", missing.display())));
    }
    let report = build_report(dirs)?;
    print!("{}", report.render());
    if let Some(path) = json {
        fs::write(path, report.to_json()?).map_err(anyhow::Error::from)?;
    }
    if let Some(dir) = plots {
        let written = write_plots(dirs, dir)?;
        println!("{} plot files in {}", written.len(), dir.display());
    }
    Ok(())
}
