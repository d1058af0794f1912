use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{self, EncoderCache};
use super::params::{DeepSerParams, EncoderParams, Parameters};
use super::{Batch, DeepSerConfig, EncoderConfig, FusionKind, MixPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; MixUp applied when a plan is given.
    Train,
    /// Deterministic: no dropout, no MixUp.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// Class logits (B, 8).
    pub logits: Array2<f64>,
    /// Attribute predictions (B, 3).
    pub attributes: Array2<f64>,
    /// Class targets after MixUp (equal to the batch targets otherwise).
    pub targets: Array2<f64>,
    pub attr_targets: Array2<f64>,
}

struct RowTape {
    unimodal: Vec<EncoderCache>,
    fusion: Vec<EncoderCache>,
    /// Padded length of each modality in this batch.
    lengths: Vec<usize>,
}

/// Forward results plus everything [`backward`] needs.
pub struct ForwardPass {
    pub outputs: Outputs,
    rows: Vec<RowTape>,
    fused_input: Array2<f64>,
    mixed: Array2<f64>,
    hidden: Array2<f64>,
    mix: Option<MixPlan>,
}

impl ForwardPass {
    /// Representation fed to the heads' ReLU (after MixUp).
    pub fn fused(&self) -> &Array2<f64> {
        &self.mixed
    }
}

fn row_forward(
    params: &DeepSerParams,
    config: &DeepSerConfig,
    batch: &Batch,
    b: usize,
    mut rng: Option<ChaCha8Rng>,
) -> (Array1<f64>, RowTape) {
    let heads = config.encoder.n_heads;
    let dropout = config.encoder.dropout;
    let n = params.unimodal.len();
    let mut outs = Vec::with_capacity(n);
    let mut unimodal = Vec::with_capacity(n);
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(n);
    for (enc, mb) in params.unimodal.iter().zip(&batch.modalities) {
        let x = mb.features.slice(s![b, .., ..]).to_owned();
        let mask: Vec<bool> = mb.mask.row(b).to_vec();
        let (out, cache) = layers::encoder(&x, &mask, enc, heads, dropout, rng.as_mut());
        outs.push(out);
        unimodal.push(cache);
        masks.push(mask);
    }
    let lengths = masks.iter().map(Vec::len).collect();
    let mut pooled: Vec<Array1<f64>> = outs.iter().map(|o| o.pooled.clone()).collect();

    let mut fusion = Vec::new();
    if config.fusion == FusionKind::Deep {
        let mask1: Vec<bool> = masks.concat();
        let views: Vec<_> = outs.iter().map(|o| o.h1.view()).collect();
        let input1 = concatenate(Axis(0), &views).expect("equal widths");
        let (f1, c1) = layers::encoder(
            &input1,
            &mask1,
            &params.fusion[0],
            heads,
            dropout,
            rng.as_mut(),
        );

        let mut views: Vec<_> = outs.iter().map(|o| o.h2.view()).collect();
        views.push(f1.h2.view());
        let input2 = concatenate(Axis(0), &views).expect("equal widths");
        let mask2 = [mask1.clone(), mask1].concat();
        let (f2, c2) = layers::encoder(
            &input2,
            &mask2,
            &params.fusion[1],
            heads,
            dropout,
            rng.as_mut(),
        );
        pooled.push(f2.pooled);
        fusion = vec![c1, c2];
    }
    let views: Vec<_> = pooled.iter().map(|p| p.view()).collect();
    let fused = concatenate(Axis(0), &views).expect("vectors");
    (
        fused,
        RowTape {
            unimodal,
            fusion,
            lengths,
        },
    )
}

fn row_backward(
    params: &DeepSerParams,
    config: &DeepSerConfig,
    tape: &RowTape,
    dfused: &Array1<f64>,
) -> DeepSerParams {
    let heads = config.encoder.n_heads;
    let d = config.model_dim();
    let n = params.unimodal.len();
    let mut grads = params.zeros_like();
    let dpooled: Vec<Array1<f64>> = (0..n)
        .map(|m| dfused.slice(s![m * d..(m + 1) * d]).to_owned())
        .collect();

    if config.fusion == FusionKind::Deep {
        let df3 = dfused.slice(s![n * d..(n + 1) * d]).to_owned();
        let din2 = layers::encoder_backward(
            &tape.fusion[1],
            None,
            None,
            Some(&df3),
            &params.fusion[1],
            &mut grads.fusion[1],
            heads,
        );
        // split the concatenated gradient back into per-modality h2 parts and the f2 part
        let mut offset = 0;
        let mut dh2 = Vec::with_capacity(n);
        for &len in &tape.lengths {
            dh2.push(din2.slice(s![offset..offset + len, ..]).to_owned());
            offset += len;
        }
        let df2 = din2.slice(s![offset.., ..]).to_owned();
        let din1 = layers::encoder_backward(
            &tape.fusion[0],
            None,
            Some(&df2),
            None,
            &params.fusion[0],
            &mut grads.fusion[0],
            heads,
        );
        let mut offset = 0;
        for (m, &len) in tape.lengths.iter().enumerate() {
            let dh1 = din1.slice(s![offset..offset + len, ..]).to_owned();
            offset += len;
            layers::encoder_backward(
                &tape.unimodal[m],
                Some(&dh1),
                Some(&dh2[m]),
                Some(&dpooled[m]),
                &params.unimodal[m],
                &mut grads.unimodal[m],
                heads,
            );
        }
    } else {
        for m in 0..n {
            layers::encoder_backward(
                &tape.unimodal[m],
                None,
                None,
                Some(&dpooled[m]),
                &params.unimodal[m],
                &mut grads.unimodal[m],
                heads,
            );
        }
    }
    grads
}

fn check_params(params: &DeepSerParams, config: &DeepSerConfig) -> Result<()> {
    let expected_fusion = match config.fusion {
        FusionKind::Deep => 2,
        FusionKind::Late => 0,
    };
    if params.unimodal.len() != config.modalities.len()
        || params.fusion.len() != expected_fusion
        || params.fuse.input_dim() != config.fused_width()
        || params.fuse.output_dim() != config.model_dim()
    {
        return Err(Error::ShapeMismatch(
            "parameters do not match the model config".into(),
        ));
    }
    for (enc, m) in params.unimodal.iter().zip(&config.modalities) {
        if enc.input_dim() != m.dim {
            return Err(Error::ShapeMismatch(format!(
                "encoder for `{}` expects {} features, config says {}",
                m.name,
                enc.input_dim(),
                m.dim
            )));
        }
    }
    Ok(())
}

/// Full forward pass. `mix` is honoured only in [`Mode::Train`]; `rng`
/// supplies dropout masks in train mode and is untouched in eval mode.
pub fn forward(
    params: &DeepSerParams,
    config: &DeepSerConfig,
    batch: &Batch,
    mode: Mode,
    mix: Option<&MixPlan>,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    batch.check(config)?;
    check_params(params, config)?;
    let b = batch.len();
    let row_rngs: Vec<Option<ChaCha8Rng>> = if mode == Mode::Train && config.encoder.dropout > 0.0 {
        (0..b)
            .map(|_| Some(ChaCha8Rng::seed_from_u64(rng.random())))
            .collect()
    } else {
        vec![None; b]
    };
    let rows: Vec<(Array1<f64>, RowTape)> = row_rngs
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| row_forward(params, config, batch, i, r))
        .collect();
    let width = config.fused_width();
    let mut fused_input = Array2::zeros((b, width));
    let mut tapes = Vec::with_capacity(b);
    for (i, (f, t)) in rows.into_iter().enumerate() {
        fused_input.row_mut(i).assign(&f);
        tapes.push(t);
    }
    let x = layers::linear(&fused_input.view(), &params.fuse);
    let mix = match mode {
        Mode::Train => mix.cloned(),
        Mode::Eval => None,
    };
    if let Some(plan) = &mix {
        if plan.permutation.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "mix permutation has {} entries for batch of {b}",
                plan.permutation.len()
            )));
        }
    }
    let (mixed, targets, attr_targets) = match &mix {
        Some(plan) => (
            plan.apply(&x),
            plan.apply(&batch.targets),
            plan.apply(&batch.attributes),
        ),
        None => (x, batch.targets.clone(), batch.attributes.clone()),
    };
    let hidden = layers::relu(&mixed);
    let logits = layers::linear(&hidden.view(), &params.class_head);
    let attributes = layers::linear(&hidden.view(), &params.attr_head);
    Ok(ForwardPass {
        outputs: Outputs {
            logits,
            attributes,
            targets,
            attr_targets,
        },
        rows: tapes,
        fused_input,
        mixed,
        hidden,
        mix,
    })
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradients on logits and attribute predictions.
pub fn backward(
    params: &DeepSerParams,
    config: &DeepSerConfig,
    pass: &ForwardPass,
    dlogits: &Array2<f64>,
    dattributes: &Array2<f64>,
) -> DeepSerParams {
    let mut head_grads = params.zeros_like();
    let hv = pass.hidden.view();
    let mut dhidden =
        layers::linear_backward(&hv, dlogits, &params.class_head, &mut head_grads.class_head);
    dhidden += &layers::linear_backward(
        &hv,
        dattributes,
        &params.attr_head,
        &mut head_grads.attr_head,
    );
    let dmixed = layers::relu_backward(&pass.mixed, &dhidden);
    let dx = match &pass.mix {
        Some(plan) => plan.backward(&dmixed),
        None => dmixed,
    };
    let dfused = layers::linear_backward(
        &pass.fused_input.view(),
        &dx,
        &params.fuse,
        &mut head_grads.fuse,
    );

    let row_grads: Vec<DeepSerParams> = pass
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, tape)| row_backward(params, config, tape, &dfused.row(i).to_owned()))
        .collect();
    let mut grads = head_grads;
    for g in &row_grads {
        grads.add_assign(g);
    }
    grads
}

/// Eval-mode forward without keeping the tape.
pub fn predict(params: &DeepSerParams, config: &DeepSerConfig, batch: &Batch) -> Result<Outputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(forward(params, config, batch, Mode::Eval, None, &mut rng)?.outputs)
}

/// Deep-fusion forward; fails if `config` selects late fusion.
pub fn deepser_forward(
    params: &DeepSerParams,
    config: &DeepSerConfig,
    batch: &Batch,
    mode: Mode,
    mix: Option<&MixPlan>,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    if config.fusion != FusionKind::Deep {
        return Err(Error::Config("deepser_forward needs fusion = deep".into()));
    }
    forward(params, config, batch, mode, mix, rng)
}

/// Late-fusion forward; fails if `config` selects deep fusion.
pub fn late_fusion_forward(
    params: &DeepSerParams,
    config: &DeepSerConfig,
    batch: &Batch,
    mode: Mode,
    mix: Option<&MixPlan>,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    if config.fusion != FusionKind::Late {
        return Err(Error::Config(
            "late_fusion_forward needs fusion = late".into(),
        ));
    }
    forward(params, config, batch, mode, mix, rng)
}

/// Batched eval-mode base encoder: returns `(h1, h2, pooled)` with shapes
/// (B, L, D), (B, L, D) and (B, D).
pub fn encoder_forward(
    x: &Array3<f64>,
    mask: &Array2<bool>,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<(Array3<f64>, Array3<f64>, Array2<f64>)> {
    let (b, l, f) = x.dim();
    if f != params.input_dim() || mask.dim() != (b, l) {
        return Err(Error::ShapeMismatch(format!(
            "encoder input {:?} with mask {:?}, expected feature dim {}",
            x.dim(),
            mask.dim(),
            params.input_dim()
        )));
    }
    let d = config.model_dim;
    if d % config.n_heads != 0 || params.input2.output_dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "encoder width {} vs config {d}",
            params.input2.output_dim()
        )));
    }
    let mut h1 = Array3::zeros((b, l, d));
    let mut h2 = Array3::zeros((b, l, d));
    let mut pooled = Array2::zeros((b, d));
    for i in 0..b {
        let m: Vec<bool> = mask.row(i).to_vec();
        if !m.iter().any(|&v| v) {
            return Err(Error::AllMaskedRow {
                modality: String::from("input"),
                row: i,
            });
        }
        let (out, _) = layers::encoder(
            &x.slice(s![i, .., ..]).to_owned(),
            &m,
            params,
            config.n_heads,
            0.0,
            None,
        );
        h1.slice_mut(s![i, .., ..]).assign(&out.h1);
        h2.slice_mut(s![i, .., ..]).assign(&out.h2);
        pooled.row_mut(i).assign(&out.pooled);
    }
    Ok((h1, h2, pooled))
}
