//! The hierarchical fusion network: per-modality base encoders, two fusion
//! encoders fed with the concatenated layer outputs, a pooled-representation
//! fusion map, Manifold MixUp, and classification/regression heads.

mod layers;
mod mixup;
mod model;
mod params;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureSequence, NUM_ATTRIBUTES, NUM_CLASSES};
use crate::error::{Error, Result};

pub use layers::EncoderOutput;
pub use mixup::{manifold_mixup, MixPlan};
pub use model::{
    backward, deepser_forward, encoder_forward, forward, late_fusion_forward, predict, ForwardPass,
    Mode, Outputs,
};
pub use params::{
    DeepSerParams, EncoderParams, LayerNorm, Linear, Parameters, TransformerLayerParams,
};

/// Transformer layers per encoder.
pub const ENCODER_LAYERS: usize = 2;

fn default_model_dim() -> usize {
    64
}
fn default_heads() -> usize {
    8
}
fn default_dropout() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(default = "default_model_dim")]
    pub model_dim: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    /// Feed-forward width; 0 means `4 * model_dim`.
    #[serde(default)]
    pub ff_dim: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::new(default_model_dim(), default_heads())
    }
}

impl EncoderConfig {
    pub fn new(model_dim: usize, n_heads: usize) -> Self {
        Self {
            model_dim,
            n_heads,
            ff_dim: 4 * model_dim,
            dropout: default_dropout(),
        }
    }

    pub fn ff_width(&self) -> usize {
        if self.ff_dim == 0 {
            4 * self.model_dim
        } else {
            self.ff_dim
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityInput {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Hierarchical fusion encoders over concatenated layer outputs.
    #[default]
    Deep,
    /// Only the pooled unimodal vectors are fused.
    Late,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Both Beta shape parameters.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSerConfig {
    pub modalities: Vec<ModalityInput>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub fusion: FusionKind,
    #[serde(default)]
    pub mixup: MixupConfig,
}

impl DeepSerConfig {
    pub fn new(modalities: &[(&str, usize)], encoder: EncoderConfig) -> Self {
        Self {
            modalities: modalities
                .iter()
                .map(|&(name, dim)| ModalityInput {
                    name: name.into(),
                    dim,
                })
                .collect(),
            encoder,
            fusion: FusionKind::Deep,
            mixup: MixupConfig::default(),
        }
    }

    /// Full-size preset: width 1024.
    pub fn large(modalities: &[(&str, usize)]) -> Self {
        Self::new(modalities, EncoderConfig::new(1024, 8))
    }

    pub fn with_fusion(mut self, fusion: FusionKind) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn model_dim(&self) -> usize {
        self.encoder.model_dim
    }

    /// Input width of the pooled-representation fusion map: one pooled
    /// vector per modality, plus the fusion vector for deep fusion.
    pub fn fused_width(&self) -> usize {
        let extra = match self.fusion {
            FusionKind::Deep => 1,
            FusionKind::Late => 0,
        };
        (self.modalities.len() + extra) * self.encoder.model_dim
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let bad = |m: String| Err(Error::Config(m));
        if self.modalities.len() < 2 {
            return bad(format!(
                "fusion needs at least 2 modalities, got {}",
                self.modalities.len()
            ));
        }
        if self.modalities.iter().any(|m| m.dim == 0) {
            return bad("modality dims must be >= 1".into());
        }
        if e.model_dim == 0 || e.n_heads == 0 || e.model_dim % e.n_heads != 0 {
            return bad(format!(
                "model_dim {} must be a positive multiple of n_heads {}",
                e.model_dim, e.n_heads
            ));
        }
        if e.ff_dim != 0 && e.ff_dim < e.model_dim {
            return bad(format!(
                "ff_dim {} must be >= model_dim {}",
                e.ff_dim, e.model_dim
            ));
        }
        if !(0.0..1.0).contains(&e.dropout) {
            return bad(format!("dropout {} outside [0, 1)", e.dropout));
        }
        if !(self.mixup.alpha > 0.0 && self.mixup.alpha.is_finite()) {
            return bad(format!("mixup alpha {} must be positive", self.mixup.alpha));
        }
        Ok(())
    }
}

/// Padded features and validity mask for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBatch {
    /// (B, L, F)
    pub features: Array3<f64>,
    /// (B, L); `true` marks a real time step.
    pub mask: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub modalities: Vec<ModalityBatch>,
    /// Soft class targets (B, 8).
    pub targets: Array2<f64>,
    /// Attribute targets (B, 3).
    pub attributes: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pads each modality to its longest sequence in the batch, with
    /// prefix masks.
    pub fn collate<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<
            Item = (
                &'a [FeatureSequence],
                &'a [f64; NUM_CLASSES],
                &'a [f64; NUM_ATTRIBUTES],
            ),
        >,
    {
        let rows: Vec<_> = rows.into_iter().collect();
        let b = rows.len();
        if b == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        let n_mod = rows[0].0.len();
        let mut modalities = Vec::with_capacity(n_mod);
        for m in 0..n_mod {
            let mut max_len = 0;
            let dim = rows[0].0[m].dim();
            for (feats, _, _) in &rows {
                if feats.len() != n_mod {
                    return Err(Error::ShapeMismatch(
                        "rows disagree on modality count".into(),
                    ));
                }
                if feats[m].dim() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "modality {m}: feature dim {} vs {dim}",
                        feats[m].dim()
                    )));
                }
                max_len = max_len.max(feats[m].len());
            }
            let mut features = Array3::zeros((b, max_len, dim));
            let mut mask = Array2::from_elem((b, max_len), false);
            for (i, (feats, _, _)) in rows.iter().enumerate() {
                let seq = feats[m].values();
                for t in 0..seq.nrows() {
                    mask[[i, t]] = true;
                    for f in 0..dim {
                        features[[i, t, f]] = f64::from(seq[[t, f]]);
                    }
                }
            }
            modalities.push(ModalityBatch { features, mask });
        }
        let targets = Array2::from_shape_fn((b, NUM_CLASSES), |(i, c)| rows[i].1[c]);
        let attributes = Array2::from_shape_fn((b, NUM_ATTRIBUTES), |(i, k)| rows[i].2[k]);
        Ok(Self {
            modalities,
            targets,
            attributes,
        })
    }

    /// Checks the batch against a model config.
    pub fn check(&self, config: &DeepSerConfig) -> Result<()> {
        let b = self.len();
        if self.modalities.len() < config.modalities.len() {
            let missing = &config.modalities[self.modalities.len()];
            return Err(Error::ModalityMissing(missing.name.clone()));
        }
        if self.modalities.len() > config.modalities.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} modalities, model expects {}",
                self.modalities.len(),
                config.modalities.len()
            )));
        }
        if self.targets.dim() != (b, NUM_CLASSES) || self.attributes.dim() != (b, NUM_ATTRIBUTES) {
            return Err(Error::ShapeMismatch(
                "target shapes do not match batch size".into(),
            ));
        }
        for (mb, spec) in self.modalities.iter().zip(&config.modalities) {
            let (bb, l, f) = mb.features.dim();
            if bb != b || f != spec.dim || mb.mask.dim() != (b, l) {
                return Err(Error::ShapeMismatch(format!(
                    "modality `{}`: features {:?}, mask {:?}, expected (B={b}, L, F={})",
                    spec.name,
                    mb.features.dim(),
                    mb.mask.dim(),
                    spec.dim
                )));
            }
            for (row, m) in mb.mask.rows().into_iter().enumerate() {
                if !m.iter().any(|&v| v) {
                    return Err(Error::AllMaskedRow {
                        modality: spec.name.clone(),
                        row,
                    });
                }
            }
        }
        Ok(())
    }
}
