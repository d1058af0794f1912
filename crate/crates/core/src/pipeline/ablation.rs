use serde::{Deserialize, Serialize};

use super::{
    evaluate, train_stage1, train_stage2, AblationFlags, Dataset, ModelCheckpoint, StageConfig,
};
use crate::corpus::Split;
use crate::error::Result;
use crate::network::{DeepSerConfig, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    OneHotTargets,
    LateFusion,
    NoMixup,
    NoMultitask,
    NoStage2,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::OneHotTargets,
        Variant::LateFusion,
        Variant::NoMixup,
        Variant::NoMultitask,
        Variant::NoStage2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "DeepSER (full)",
            Variant::OneHotTargets => "w. One-hot targets",
            Variant::LateFusion => "w. Late Fusion",
            Variant::NoMixup => "w/o M.MixUp",
            Variant::NoMultitask => "w/o Multitask",
            Variant::NoStage2 => "w/o Stage 2",
        }
    }

    pub fn flags(self) -> AblationFlags {
        let mut f = AblationFlags::default();
        match self {
            Variant::Full => {}
            Variant::OneHotTargets => f.one_hot_targets = true,
            Variant::LateFusion => f.late_fusion = true,
            Variant::NoMixup => f.no_mixup = true,
            Variant::NoMultitask => f.no_multitask = true,
            Variant::NoStage2 => f.no_stage2 = true,
        }
        f
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "full" => Variant::Full,
            "one_hot_targets" | "one-hot" => Variant::OneHotTargets,
            "late_fusion" | "late" => Variant::LateFusion,
            "no_mixup" => Variant::NoMixup,
            "no_multitask" => Variant::NoMultitask,
            "no_stage2" => Variant::NoStage2,
            other => return Err(format!("unknown ablation variant `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub seeds: Vec<u64>,
    pub macro_f1: Vec<f64>,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    /// Relative change of the mean against the full model, in percent.
    pub delta_pct: f64,
    pub num_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<22} {:>10} {:>8} {:>9} {:>9}\n",
            "Model", "Macro-F1", "std", "Δ(%)", "params"
        );
        for r in &self.rows {
            let delta = if r.variant == Variant::Full {
                "-".to_string()
            } else {
                format!("{:+.2}", r.delta_pct)
            };
            s.push_str(&format!(
                "{:<22} {:>10.4} {:>8.4} {:>9} {:>9}\n",
                r.label, r.mean_macro_f1, r.std_macro_f1, delta, r.num_params
            ));
        }
        s
    }
}

/// Stage 1 followed by Stage 2 unless `no_stage2` is set; returns the final
/// selected checkpoint.
pub fn run_pipeline(
    data: &Dataset,
    model: &DeepSerConfig,
    stage1: &StageConfig,
    stage2: &StageConfig,
    flags: AblationFlags,
) -> Result<ModelCheckpoint> {
    let s1 = StageConfig {
        ablation: flags,
        ..stage1.clone()
    };
    let first = train_stage1(data, model, &s1)?;
    if flags.no_stage2 {
        return Ok(first.best);
    }
    let s2 = StageConfig {
        ablation: flags,
        ..stage2.clone()
    };
    Ok(train_stage2(&first.best, data, &s2)?.best)
}

/// Trains every variant with matched seeds and reports macro-F1 on the test
/// split (validation split when there is no test split).
pub fn run_ablation(
    data: &Dataset,
    model: &DeepSerConfig,
    stage1: &StageConfig,
    stage2: &StageConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationTable> {
    let (split, ids) = match data.ids_in(Split::Test) {
        ids if !ids.is_empty() => (Split::Test, ids),
        _ => (Split::Val, data.ids_in(Split::Val)),
    };
    let mut order = vec![Variant::Full];
    order.extend(variants.iter().copied().filter(|v| *v != Variant::Full));
    let mut rows: Vec<AblationRow> = Vec::new();
    for v in order {
        let mut scores = Vec::with_capacity(seeds.len());
        let mut num_params = 0;
        for &seed in seeds {
            let s1 = StageConfig {
                seed,
                ..stage1.clone()
            };
            let s2 = StageConfig {
                seed,
                ..stage2.clone()
            };
            let ckpt = run_pipeline(data, model, &s1, &s2, v.flags())?;
            num_params = ckpt.params().num_params();
            scores.push(evaluate(&ckpt, &ids, data)?.metrics.macro_f1);
        }
        let n = scores.len().max(1) as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        let base = rows.first().map_or(mean, |r| r.mean_macro_f1);
        let delta_pct = if base > 0.0 {
            100.0 * (mean - base) / base
        } else {
            0.0
        };
        rows.push(AblationRow {
            variant: v,
            label: v.label().to_string(),
            seeds: seeds.to_vec(),
            macro_f1: scores,
            mean_macro_f1: mean,
            std_macro_f1: std,
            delta_pct,
            num_params,
        });
    }
    Ok(AblationTable {
        split: split.as_str().to_string(),
        rows,
    })
}
