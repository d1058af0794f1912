//! Aggregation of finished runs into tables, JSON and SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CATEGORIES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rundir::{EvaluationRecord, HistoryLine, RunDir};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: Option<u64>,
    /// Runs sharing a group differ only in their seed.
    pub group: String,
    pub final_stage: Option<u8>,
    pub best_epoch: Option<usize>,
    pub best_val_macro_f1: Option<f64>,
    pub evaluation: Option<EvaluationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub runs: usize,
    pub mean_val_macro_f1: f64,
    pub std_val_macro_f1: f64,
    pub mean_eval_macro_f1: Option<f64>,
    pub std_eval_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    pub groups: Vec<GroupSummary>,
    pub warnings: Vec<String>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (
        mean,
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(
        || dir.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn summarize(dir: &Path, warnings: &mut Vec<String>) -> Result<(RunSummary, Option<String>)> {
    let run = RunDir::open(dir);
    let name = run_name(dir);
    let (seed, key) = match run.read_config() {
        Ok(mut cfg) => {
            let seed = cfg.seed;
            cfg.seed = 0;
            cfg.paths.run_dir = PathBuf::new();
            (Some(seed), Some(cfg.to_toml()?))
        }
        Err(_) => {
            warnings.push(format!("{}: no readable config.toml", dir.display()));
            (None, None)
        }
    };
    let history = run.read_history()?;
    if history.is_empty() {
        warnings.push(format!("{}: missing history", dir.display()));
    }
    let final_stage = history.iter().map(|l| l.stage).max();
    let best = history
        .iter()
        .filter(|l| Some(l.stage) == final_stage)
        .fold(None::<&HistoryLine>, |b, l| match b {
            Some(b) if b.record.val_macro_f1 >= l.record.val_macro_f1 => Some(b),
            _ => Some(l),
        });
    let evaluation = run.read_evaluations()?.pop();
    Ok((
        RunSummary {
            name: name.clone(),
            seed,
            group: name,
            final_stage,
            best_epoch: best.map(|l| l.record.epoch),
            best_val_macro_f1: best.map(|l| l.record.val_macro_f1),
            evaluation,
        },
        key,
    ))
}

/// Summaries of `dirs`, in the given order, with mean ± std over runs that
/// share a configuration up to the seed.
pub fn build_report(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let mut warnings = Vec::new();
    let mut runs = Vec::new();
    let mut label_of: BTreeMap<String, String> = BTreeMap::new();
    for dir in dirs {
        let (mut s, key) = summarize(dir, &mut warnings)?;
        if let Some(key) = key {
            s.group = label_of
                .entry(key)
                .or_insert_with(|| s.name.clone())
                .clone();
        }
        runs.push(s);
    }
    let mut order: Vec<String> = Vec::new();
    for r in &runs {
        if !order.contains(&r.group) {
            order.push(r.group.clone());
        }
    }
    let groups = order
        .into_iter()
        .map(|g| {
            let members: Vec<&RunSummary> = runs.iter().filter(|r| r.group == g).collect();
            let val: Vec<f64> = members.iter().filter_map(|r| r.best_val_macro_f1).collect();
            let eval: Vec<f64> = members
                .iter()
                .filter_map(|r| r.evaluation.as_ref().map(|e| e.metrics.macro_f1))
                .collect();
            let (mv, sv) = if val.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&val)
            };
            let ev = (!eval.is_empty()).then(|| mean_std(&eval));
            GroupSummary {
                group: g,
                runs: members.len(),
                mean_val_macro_f1: mv,
                std_val_macro_f1: sv,
                mean_eval_macro_f1: ev.map(|e| e.0),
                std_eval_macro_f1: ev.map(|e| e.1),
            }
        })
        .collect();
    Ok(Report {
        runs,
        groups,
        warnings,
    })
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = format!(
            "{:<20} {:>6} {:>6} {:>6} {:>10} {:>10}\n",
            "run", "seed", "stage", "epoch", "val F1", "eval F1"
        );
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{:<20} {:>6} {:>6} {:>6} {:>10} {:>10}",
                r.name,
                r.seed.map_or("-".to_string(), |v| v.to_string()),
                r.final_stage.map_or("-".to_string(), |v| v.to_string()),
                r.best_epoch.map_or("-".to_string(), |v| v.to_string()),
                opt(r.best_val_macro_f1),
                opt(r.evaluation.as_ref().map(|e| e.metrics.macro_f1)),
            );
        }
        s.push('\n');
        for g in &self.groups {
            let eval = match (g.mean_eval_macro_f1, g.std_eval_macro_f1) {
                (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4}"),
                _ => "-".into(),
            };
            let _ = writeln!(
                s,
                "{:<20} n={:<3} val {:.4} ± {:.4}  eval {eval}",
                g.group, g.runs, g.mean_val_macro_f1, g.std_val_macro_f1
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Line plot of validation macro-F1 per epoch, one polyline per stage.
pub fn history_svg(history: &[HistoryLine]) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let max_epoch = history
        .iter()
        .map(|l| l.record.epoch)
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = write!(
        s,
        r#"<rect width="{w}" height="{h}" fill="white"/><line x1="{pad}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y0}" stroke="black"/><text x="{pad}" y="20" font-size="12">val macro-F1 per epoch</text>"#,
        y0 = h - pad,
        x1 = w - pad
    );
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];
    let mut stages: Vec<u8> = history.iter().map(|l| l.stage).collect();
    stages.dedup();
    for (i, st) in stages.iter().enumerate() {
        let pts: Vec<String> = history
            .iter()
            .filter(|l| l.stage == *st)
            .map(|l| {
                let x = pad + (w - 2.0 * pad) * l.record.epoch as f64 / max_epoch;
                let y = h - pad - (h - 2.0 * pad) * l.record.val_macro_f1.clamp(0.0, 1.0);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = write!(
            s,
            r#"<polyline fill="none" stroke="{}" points="{}"/><text x="{}" y="20" font-size="12" fill="{}">stage {st}</text>"#,
            colors[i % colors.len()],
            pts.join(" "),
            w - pad - 60.0 * (i + 1) as f64,
            colors[i % colors.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Heatmap of a confusion matrix (rows = truth).
pub fn confusion_svg(confusion: &[[usize; NUM_CLASSES]; NUM_CLASSES]) -> String {
    let cell = 40.0;
    let left = 80.0;
    let top = 30.0;
    let size = left + cell * NUM_CLASSES as f64 + 10.0;
    let mut s =
        format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">"#);
    let _ = write!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    for (t, row) in confusion.iter().enumerate() {
        let total = row.iter().sum::<usize>().max(1) as f64;
        let _ = write!(
            s,
            r#"<text x="4" y="{:.0}" font-size="11">{}</text>"#,
            top + cell * (t as f64 + 0.6),
            CATEGORIES[t]
        );
        for (p, &n) in row.iter().enumerate() {
            let shade = 255.0 - 200.0 * n as f64 / total;
            let _ = write!(
                s,
                r#"<rect x="{:.0}" y="{:.0}" width="{cell}" height="{cell}" fill="rgb({shade:.0},{shade:.0},255)" stroke="gray"/><text x="{:.0}" y="{:.0}" font-size="11">{n}</text>"#,
                left + cell * p as f64,
                top + cell * t as f64,
                left + cell * p as f64 + 8.0,
                top + cell * t as f64 + 24.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<run>_history.svg` and `<run>_confusion.svg` for every run.
pub fn write_plots(dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for dir in dirs {
        let run = RunDir::open(dir);
        let name = run_name(dir);
        let history = run.read_history()?;
        if !history.is_empty() {
            let p = out_dir.join(format!("{name}_history.svg"));
            fs::write(&p, history_svg(&history))?;
            written.push(p);
        }
        if let Some(e) = run.read_evaluations()?.pop() {
            let p = out_dir.join(format!("{name}_confusion.svg"));
            fs::write(&p, confusion_svg(&e.metrics.confusion))?;
            written.push(p);
        }
    }
    Ok(written)
}
