//! Declarative experiment configuration (TOML) with dotted-key overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticSpec;
use crate::ensemble::MetaConfig;
use crate::error::{Error, Result};
use crate::network::{DeepSerConfig, EncoderConfig, FusionKind, MixupConfig, ModalityInput};
use crate::pipeline::{AblationFlags, Dataset, StageConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// Corpus manifest (TSV).
    pub corpus: PathBuf,
    /// Output directory of this run.
    pub run_dir: PathBuf,
}

/// Model settings; feature dimensions are read from the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelSection {
    /// Modalities to fuse, in order; empty means every corpus modality.
    #[serde(default)]
    pub modalities: Vec<String>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub fusion: FusionKind,
    #[serde(default)]
    pub mixup: MixupConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSection {
    /// Member run directories (or posterior manifests).
    #[serde(default)]
    pub members: Vec<PathBuf>,
    #[serde(default = "default_soup_seeds")]
    pub soup_seeds: Vec<u64>,
}

fn default_soup_seeds() -> Vec<u64> {
    (0..6).collect()
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            members: Vec::new(),
            soup_seeds: default_soup_seeds(),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_stage1() -> StageConfig {
    StageConfig::stage1(0)
}

fn default_stage2() -> StageConfig {
    StageConfig::stage2(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seeds every stage; `seed` fields inside stage sections are replaced by it.
    #[serde(default)]
    pub seed: u64,
    /// Fixed batch order and ordered reductions.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "default_stage1")]
    pub stage1: StageConfig,
    #[serde(default = "default_stage2")]
    pub stage2: StageConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub ablation: AblationFlags,
    /// Generator spec for `generate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl ExperimentConfig {
    pub fn new(corpus: impl Into<PathBuf>, run_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            deterministic: true,
            paths: Paths {
                corpus: corpus.into(),
                run_dir: run_dir.into(),
            },
            model: ModelSection::default(),
            stage1: default_stage1(),
            stage2: default_stage2(),
            meta: MetaConfig::default(),
            ensemble: EnsembleSection::default(),
            ablation: AblationFlags::default(),
            synthetic: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative paths are taken relative to the config file
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.paths.corpus, &mut cfg.paths.run_dir] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies `key.path=value` overrides; values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{o}` is not of the form key=value"))
            })?;
            let value = parse_value(raw.trim());
            set_path(&mut doc, key.trim(), value)?;
        }
        doc.try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn stage(&self, stage: u8) -> StageConfig {
        let base = if stage == 1 {
            &self.stage1
        } else {
            &self.stage2
        };
        StageConfig {
            stage,
            seed: self.seed,
            ablation: self.ablation,
            ..base.clone()
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            seed: self.seed,
            ..self.meta.clone()
        }
    }

    /// Network config with feature dimensions taken from `data`.
    pub fn model_config(&self, data: &Dataset) -> Result<DeepSerConfig> {
        let first = data
            .samples
            .first()
            .ok_or_else(|| Error::Config("dataset is empty".into()))?;
        let modalities = data
            .modalities
            .iter()
            .zip(&first.features)
            .map(|(name, f)| ModalityInput {
                name: name.clone(),
                dim: f.dim(),
            })
            .collect();
        let cfg = DeepSerConfig {
            modalities,
            encoder: self.model.encoder.clone(),
            fusion: if self.ablation.late_fusion {
                FusionKind::Late
            } else {
                self.model.fusion
            },
            mixup: self.model.mixup,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stage(1).validate()?;
        self.stage(2).validate()?;
        if self.ensemble.soup_seeds.is_empty() {
            return Err(Error::Config(
                "ensemble.soup_seeds must not be empty".into(),
            ));
        }
        Ok(())
    }
}

/// Reads a generator spec: either a bare spec or a config with a
/// `[synthetic]` table.
pub fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = fs::read_to_string(path)?;
    let located = |e: toml::de::Error| Error::Config(format!("{}: {e}", path.display()));
    let table: toml::Table = toml::from_str(&text).map_err(located)?;
    let spec = match table.get("synthetic") {
        Some(v) => v.clone().try_into(),
        None => toml::Value::Table(table).try_into(),
    };
    let spec: SyntheticSpec =
        spec.map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| {
            Error::Config(format!(
                "override `{key}`: `{}` is not a table",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config("empty override key".into()))
}
