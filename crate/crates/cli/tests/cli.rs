use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use medusa_core::ensemble::{save_posterior_set, MemberPosteriors};
use medusa_core::{PosteriorSet, NUM_CLASSES};

const SPEC: &str = r#"
n_per_class = [20, 20, 20, 20, 20, 20, 20, 20]
class_separation = 3.0
disagreement_rate = 0.2
seed = 5
split_ratio = 0.6
[[modalities]]
name = "audio"
dim = 6
mean_len = 5
[[modalities]]
name = "text"
dim = 4
mean_len = 4
"#;

const CONFIG: &str = r#"
seed = 1
[paths]
corpus = "corpus/manifest.tsv"
run_dir = "runs/a"
[model.encoder]
model_dim = 8
n_heads = 2
[stage1]
stage = 1
learning_rate = 0.003
max_epochs = 4
[stage2]
stage = 2
learning_rate = 0.003
max_epochs = 2
[meta]
learning_rate = 0.05
max_epochs = 10
[ensemble]
soup_seeds = [0, 1, 2]
"#;

fn medusa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medusa"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        stderr(&o)
    );
    stdout(&o)
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    ok(medusa(
        dir.path(),
        &["generate", "spec.toml", "--out", "corpus"],
    ));
    dir
}

fn train_both(dir: &Path, extra: &[&str]) {
    let mut a = vec!["--config", "exp.toml"];
    a.extend_from_slice(extra);
    let mut s1 = a.clone();
    s1.extend(["train", "--stage", "1"]);
    ok(medusa(dir, &s1));
    let run = extra
        .iter()
        .find_map(|s| s.strip_prefix("paths.run_dir="))
        .unwrap_or("runs/a")
        .to_string();
    let resume = format!("{run}/stage1/best.mdsc");
    let mut s2 = a;
    s2.extend(["train", "--stage", "2", "--resume", &resume]);
    ok(medusa(dir, &s2));
}

#[test]
fn generate_summarizes_and_detects_unchanged_reruns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    let first = ok(medusa(
        dir.path(),
        &["generate", "spec.toml", "--out", "corpus"],
    ));
    assert!(first.contains("160 utterances"));
    assert!(first.lines().any(|l| l.starts_with("anger")));
    assert!(dir.path().join("corpus/manifest.tsv").exists());
    let again = ok(medusa(
        dir.path(),
        &["generate", "spec.toml", "--out", "corpus"],
    ));
    assert!(again.contains("unchanged"));

    fs::write(
        dir.path().join("bad.toml"),
        "n_per_class = [1, 2\nseed = 3\n",
    )
    .unwrap();
    let bad = medusa(dir.path(), &["generate", "bad.toml", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("line"));
}

#[test]
fn train_guards_and_dry_run() {
    let dir = workspace();
    let o = medusa(
        dir.path(),
        &["--config", "exp.toml", "train", "--stage", "2"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--resume"));

    let dry = ok(medusa(
        dir.path(),
        &["--config", "exp.toml", "train", "--stage", "1", "--dry-run"],
    ));
    assert!(dry.contains("parameters: "));
    assert!(!dir.path().join("runs").exists());

    let o = medusa(dir.path(), &["train", "--stage", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = medusa(
        dir.path(),
        &[
            "--config",
            "exp.toml",
            "--set",
            "stage1.batch_size=0",
            "train",
            "--stage",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn full_run_writes_checkpoints_history_and_snapshot() {
    let dir = workspace();
    train_both(dir.path(), &["--set", "stage1.max_epochs=3"]);
    let run = dir.path().join("runs/a");
    for f in [
        "stage1/best.mdsc",
        "stage1/last.mdsc",
        "stage2/best.mdsc",
        "stage2/last.mdsc",
        "history.jsonl",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.contains("max_epochs = 3"));
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert!(history.contains("\"stage\":1") && history.contains("\"stage\":2"));

    let eval = ok(medusa(
        dir.path(),
        &["--config", "exp.toml", "evaluate", "--split", "val"],
    ));
    assert!(eval.contains("macro_f1="));
    let o = medusa(
        dir.path(),
        &["--config", "exp.toml", "evaluate", "--split", "nope"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn identical_configs_give_identical_reports() {
    let dir = workspace();
    train_both(dir.path(), &["--set", "paths.run_dir=runs/x"]);
    train_both(dir.path(), &["--set", "paths.run_dir=runs/y"]);
    let read = |r: &str| fs::read(dir.path().join(r)).unwrap();
    assert_eq!(read("runs/x/history.jsonl"), read("runs/y/history.jsonl"));
    assert_eq!(
        read("runs/x/stage2/best.mdsc"),
        read("runs/y/stage2/best.mdsc")
    );
    let evals = |r: &str| {
        String::from_utf8(read(r))
            .unwrap()
            .replace("runs/x", "")
            .replace("runs/y", "")
    };
    assert_eq!(
        evals("runs/x/evaluations.jsonl"),
        evals("runs/y/evaluations.jsonl")
    );
}

#[test]
fn ensemble_modes() {
    let dir = workspace();
    train_both(dir.path(), &[]);
    train_both(
        dir.path(),
        &["--set", "seed=4", "--set", "paths.run_dir=runs/b"],
    );

    let all = ok(medusa(
        dir.path(),
        &[
            "--config",
            "exp.toml",
            "--set",
            "paths.run_dir=runs/ens",
            "ensemble",
            "--members",
            "runs/a,runs/b",
            "--mode",
            "all",
            "--jobs",
            "2",
        ],
    ));
    for method in [
        "Majority Voting",
        "Soft Voting",
        "Meta-classifier (Single)",
        "Meta-classifier (Soup)",
    ] {
        assert!(all.contains(method), "{all}");
    }
    let ens = dir.path().join("runs/ens");
    assert!(ens.join("posteriors/eval/posteriors.json").exists());
    assert!(ens.join("meta_soup.mdsc").exists());
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(ens.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);

    let soft = ok(medusa(
        dir.path(),
        &[
            "--config",
            "exp.toml",
            "--set",
            "paths.run_dir=runs/solo",
            "ensemble",
            "--members",
            "runs/a",
            "--mode",
            "soft",
        ],
    ));
    let eval = ok(medusa(
        dir.path(),
        &[
            "--config", "exp.toml", "evaluate", "--split", "val", "--json",
        ],
    ));
    let member: serde_json::Value = serde_json::from_str(&eval).unwrap();
    let row = soft.lines().find(|l| l.starts_with("Soft Voting")).unwrap();
    let f1: f64 = row.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(
        (f1 - member["macro_f1"].as_f64().unwrap()).abs() < 1e-4,
        "{row} vs {eval}"
    );
}

fn posterior_set(ids: usize, classes: usize) -> PosteriorSet {
    let members: Vec<MemberPosteriors> = (0..2)
        .map(|k| MemberPosteriors {
            member: format!("m{k}"),
            ids: (0..ids).map(|i| format!("u{i}")).collect(),
            rows: (0..ids)
                .map(|i| std::array::from_fn(|c| if c == (i + k) % classes { 0.65 } else { 0.05 }))
                .collect(),
        })
        .collect();
    PosteriorSet::from_members(&members, |id| {
        let i: usize = id[1..].parse().unwrap();
        let mut t = [0.0; NUM_CLASSES];
        t[i % classes] = 1.0;
        Ok((t, [0.0; 3]))
    })
    .unwrap()
}

#[test]
fn meta_needs_every_class_in_training_posteriors() {
    let dir = workspace();
    let post = dir.path().join("post");
    save_posterior_set(&posterior_set(21, 7), &post.join("train")).unwrap();
    save_posterior_set(&posterior_set(16, 8), &post.join("eval")).unwrap();
    let o = medusa(
        dir.path(),
        &[
            "--config",
            "exp.toml",
            "ensemble",
            "--posteriors",
            "post",
            "--mode",
            "meta",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no training samples"), "{}", stderr(&o));

    let vote = ok(medusa(
        dir.path(),
        &[
            "--config",
            "exp.toml",
            "ensemble",
            "--posteriors",
            "post",
            "--mode",
            "vote",
        ],
    ));
    assert!(vote.contains("Majority Voting"));
}

#[test]
fn report_rows_groups_and_determinism() {
    let dir = workspace();
    train_both(dir.path(), &[]);
    train_both(
        dir.path(),
        &["--set", "seed=4", "--set", "paths.run_dir=runs/b"],
    );
    let table = ok(medusa(
        dir.path(),
        &[
            "report", "runs/a", "runs/b", "--json", "r1.json", "--plots", "plots",
        ],
    ));
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| l.starts_with("a ") || l.starts_with("b "))
        .collect();
    assert_eq!(rows.len(), 3, "{table}");
    assert!(table.contains("n=2") && table.contains("±"));
    ok(medusa(
        dir.path(),
        &["report", "runs/a", "runs/b", "--json", "r2.json"],
    ));
    assert_eq!(
        fs::read(dir.path().join("r1.json")).unwrap(),
        fs::read(dir.path().join("r2.json")).unwrap()
    );
    assert!(dir.path().join("plots/a_history.svg").exists());
    assert!(dir.path().join("plots/b_confusion.svg").exists());

    let empty = medusa(dir.path(), &["report"]);
    assert_eq!(empty.status.code(), Some(1));
    fs::create_dir(dir.path().join("bare")).unwrap();
    let bare = ok(medusa(dir.path(), &["report", "bare"]));
    assert!(bare.contains("missing history"));
}
