//! On-disk layout of one run: config snapshot, per-stage checkpoints,
//! epoch history, evaluation records and posterior dumps.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::objective::Metrics;
use crate::pipeline::EpochRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub stage: u8,
    #[serde(flatten)]
    pub record: EpochRecord,
}

/// One evaluation of one checkpoint on one id list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub stage: u8,
    pub checkpoint: String,
    pub split: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn history_path(&self) -> PathBuf {
        self.root.join("history.jsonl")
    }

    pub fn evaluations_path(&self) -> PathBuf {
        self.root.join("evaluations.jsonl")
    }

    pub fn posteriors_dir(&self) -> PathBuf {
        self.root.join("posteriors")
    }

    /// `stage<N>/<which>.mdsc`, `which` being `best` or `last`.
    pub fn checkpoint_path(&self, stage: u8, which: &str) -> PathBuf {
        self.root
            .join(format!("stage{stage}"))
            .join(format!("{which}.mdsc"))
    }

    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        fs::write(self.config_path(), cfg.to_toml()?)?;
        Ok(())
    }

    pub fn read_config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&fs::read_to_string(self.config_path())?)
    }

    /// Replaces the history of `stage`, keeping other stages' lines.
    pub fn write_history(&self, stage: u8, records: &[EpochRecord]) -> Result<()> {
        let mut lines: Vec<HistoryLine> = self
            .read_history()?
            .into_iter()
            .filter(|l| l.stage != stage)
            .collect();
        lines.extend(records.iter().map(|r| HistoryLine {
            stage,
            record: r.clone(),
        }));
        lines.sort_by_key(|l| (l.stage, l.record.epoch));
        let mut out = String::new();
        for l in &lines {
            out.push_str(&serde_json::to_string(l)?);
            out.push('\n');
        }
        fs::write(self.history_path(), out)?;
        Ok(())
    }

    pub fn read_history(&self) -> Result<Vec<HistoryLine>> {
        read_jsonl(&self.history_path())
    }

    pub fn append_evaluation(&self, record: &EvaluationRecord) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.evaluations_path())?;
        writeln!(f, "{}", serde_json::to_string(record)?)?;
        Ok(())
    }

    pub fn read_evaluations(&self) -> Result<Vec<EvaluationRecord>> {
        read_jsonl(&self.evaluations_path())
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
