//! Learnable weights and a uniform way to walk over them.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DeepSerConfig, FusionKind, ENCODER_LAYERS};
use crate::corpus::{NUM_ATTRIBUTES, NUM_CLASSES};

/// Walks named parameter tensors in a fixed order.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Overwrites every tensor from a flat buffer laid out as [`Parameters::to_flat`].
    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, _, d| {
            d.copy_from_slice(&flat[offset..offset + d.len()]);
            offset += d.len();
        });
        assert_eq!(offset, flat.len(), "flat buffer length mismatch");
    }

    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut slices: Vec<&[f64]> = Vec::new();
        other.visit("", &mut |_, _, d| slices.push(d));
        let mut i = 0;
        self.visit_mut("", &mut |_, _, d| {
            for (a, b) in d.iter_mut().zip(slices[i]) {
                *a += b;
            }
            i += 1;
        });
    }

    fn scale(&mut self, s: f64) {
        self.visit_mut("", &mut |_, _, d| d.iter_mut().for_each(|v| *v *= s));
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut("", &mut |_, _, d| d.fill(value));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }

    /// `(name, shape)` for every tensor.
    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, shape, _| out.push((name, shape.to_vec())));
        out
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `y = x W + b` with `W` stored as (in, out).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((input, output), |_| rng.random_range(-bound..bound)),
            bias: Array1::from_shape_fn(output, |_| rng.random_range(-bound..bound)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [f64])) {
        f(
            join(prefix, "weight"),
            self.weight.shape(),
            self.weight.as_slice().unwrap(),
        );
        f(
            join(prefix, "bias"),
            self.bias.shape(),
            self.bias.as_slice().unwrap(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [f64])) {
        let shape = self.weight.shape().to_vec();
        f(
            join(prefix, "weight"),
            &shape,
            self.weight.as_slice_mut().unwrap(),
        );
        let shape = self.bias.shape().to_vec();
        f(
            join(prefix, "bias"),
            &shape,
            self.bias.as_slice_mut().unwrap(),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }
}

impl Parameters for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [f64])) {
        f(
            join(prefix, "gamma"),
            self.gamma.shape(),
            self.gamma.as_slice().unwrap(),
        );
        f(
            join(prefix, "beta"),
            self.beta.shape(),
            self.beta.as_slice().unwrap(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [f64])) {
        let shape = self.gamma.shape().to_vec();
        f(
            join(prefix, "gamma"),
            &shape,
            self.gamma.as_slice_mut().unwrap(),
        );
        let shape = self.beta.shape().to_vec();
        f(
            join(prefix, "beta"),
            &shape,
            self.beta.as_slice_mut().unwrap(),
        );
    }
}

/// One post-norm transformer encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayerParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

impl TransformerLayerParams {
    pub fn init(dim: usize, ff_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::init(dim, dim, rng),
            key: Linear::init(dim, dim, rng),
            value: Linear::init(dim, dim, rng),
            output: Linear::init(dim, dim, rng),
            norm1: LayerNorm::new(dim),
            ff1: Linear::init(dim, ff_dim, rng),
            ff2: Linear::init(ff_dim, dim, rng),
            norm2: LayerNorm::new(dim),
        }
    }
}

impl Parameters for TransformerLayerParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [f64])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [f64])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}

/// Base encoder: a two-map projection to the model width followed by the
/// stacked transformer layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input1: Linear,
    pub input2: Linear,
    pub layers: Vec<TransformerLayerParams>,
}

impl EncoderParams {
    pub fn init(input_dim: usize, dim: usize, ff_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            input1: Linear::init(input_dim, dim, rng),
            input2: Linear::init(dim, dim, rng),
            layers: (0..ENCODER_LAYERS)
                .map(|_| TransformerLayerParams::init(dim, ff_dim, rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input1.input_dim()
    }
}

impl Parameters for EncoderParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [f64])) {
        self.input1.visit(&join(prefix, "input1"), f);
        self.input2.visit(&join(prefix, "input2"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [f64])) {
        self.input1.visit_mut(&join(prefix, "input1"), f);
        self.input2.visit_mut(&join(prefix, "input2"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

/// Every learnable weight of one fusion model. `fusion` is empty for the
/// late-fusion variant.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSerParams {
    pub unimodal: Vec<EncoderParams>,
    pub fusion: Vec<EncoderParams>,
    pub fuse: Linear,
    pub class_head: Linear,
    pub attr_head: Linear,
    /// Modality names, used only to label tensors.
    pub modality_names: Vec<String>,
}

impl DeepSerParams {
    /// Deterministic initialization from `seed`.
    pub fn init(config: &DeepSerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.encoder.model_dim;
        let ff = config.encoder.ff_width();
        let unimodal = config
            .modalities
            .iter()
            .map(|m| EncoderParams::init(m.dim, d, ff, &mut rng))
            .collect();
        let fusion = match config.fusion {
            FusionKind::Deep => (0..ENCODER_LAYERS)
                .map(|_| EncoderParams::init(d, d, ff, &mut rng))
                .collect(),
            FusionKind::Late => Vec::new(),
        };
        Self {
            unimodal,
            fusion,
            fuse: Linear::init(config.fused_width(), d, &mut rng),
            class_head: Linear::init(d, NUM_CLASSES, &mut rng),
            attr_head: Linear::init(d, NUM_ATTRIBUTES, &mut rng),
            modality_names: config.modalities.iter().map(|m| m.name.clone()).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }
}

impl Parameters for DeepSerParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &'a [f64])) {
        for (name, e) in self.modality_names.iter().zip(&self.unimodal) {
            e.visit(&join(prefix, &format!("unimodal.{name}")), f);
        }
        for (i, e) in self.fusion.iter().enumerate() {
            e.visit(&join(prefix, &format!("fusion{}", i + 1)), f);
        }
        self.fuse.visit(&join(prefix, "fuse"), f);
        self.class_head.visit(&join(prefix, "class_head"), f);
        self.attr_head.visit(&join(prefix, "attr_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [f64])) {
        for (name, e) in self.modality_names.iter().zip(self.unimodal.iter_mut()) {
            e.visit_mut(&join(prefix, &format!("unimodal.{name}")), f);
        }
        for (i, e) in self.fusion.iter_mut().enumerate() {
            e.visit_mut(&join(prefix, &format!("fusion{}", i + 1)), f);
        }
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
        self.class_head.visit_mut(&join(prefix, "class_head"), f);
        self.attr_head.visit_mut(&join(prefix, "attr_head"), f);
    }
}
