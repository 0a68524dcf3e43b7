//! The learnable radiance and semantic field.
//!
//! An 8-layer ReLU trunk over the encoded position (with the encoding
//! concatenated back in before layer 4) produces a feature `f`. Optionally the
//! output of one trunk layer is augmented in place with an attention read
//! from a small learnable codebook (`f + attend(f, B)`). Three heads consume
//! the final feature:
//!
//! * density: `softplus(linear(f))`;
//! * color: `sigmoid(linear(relu(linear([f, enc(d)]))))`, the only head that
//!   sees the view direction;
//! * semantics: `linear(f)` producing class logits.
//!
//! Gradients are computed by hand (see [`FieldParams::backward`]) and honor
//! two routing switches: `detach_semantics` stops the semantic loss at the
//! semantic head, and `detach_codebook_from_sem` keeps the semantic loss from
//! reaching the codebook and its attention weights.

mod checkpoint;
mod codebook;
pub mod encoding;
mod mlp;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use codebook::{attention_weights, CodebookQuery};
pub use encoding::{encode, PositionalEncodingConfig};
pub use mlp::{FieldCache, FieldOutputs, OutputGrads, PointOutput};

pub const TRUNK_LAYERS: usize = 8;
/// Trunk layer whose input is `[previous output, encoded position]`.
pub const SKIP_LAYER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub width: usize,
    pub num_classes: usize,
    pub encoding: PositionalEncodingConfig,
    pub use_codebook: bool,
    /// Number of codebook words.
    pub codebook_size: usize,
    pub num_heads: usize,
    /// Trunk layer whose output queries the codebook.
    pub codebook_layer_idx: usize,
    /// Divide attention scores by `sqrt(d_head)`.
    pub attn_scale: bool,
    pub detach_semantics: bool,
    pub detach_codebook_from_sem: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            width: 128,
            num_classes: 5,
            encoding: PositionalEncodingConfig::default(),
            use_codebook: false,
            codebook_size: 64,
            num_heads: 4,
            codebook_layer_idx: 7,
            attn_scale: true,
            detach_semantics: false,
            detach_codebook_from_sem: true,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 2 || self.width % 2 != 0 {
            return bad(format!("field width must be even and >= 2, got {}", self.width));
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.encoding.l_pos < 1 {
            return bad("l_pos must be >= 1".into());
        }
        if self.use_codebook {
            if self.codebook_size < 1 {
                return bad("codebook needs at least one word".into());
            }
            if self.num_heads < 1 || self.width % self.num_heads != 0 {
                return bad(format!("width {} not divisible into {} heads", self.width, self.num_heads)
                    .to_string());
            }
            if self.codebook_layer_idx >= TRUNK_LAYERS {
                return bad(format!("codebook_layer_idx must be < {TRUNK_LAYERS}"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`, applied as `x · W + b`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self { weight: xavier(fan_in, fan_out, rng), bias: Array1::zeros(fan_out) }
    }
}

fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..=a))
}

/// Learnable codebook `B` and the attention used to read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `K x d`, one word per row.
    pub words: Array2<f64>,
    /// `d x d`; columns `[h*dh, (h+1)*dh)` belong to head `h`.
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    /// `d x d` projection of the concatenated heads, no bias.
    pub w_out: Array2<f64>,
}

impl Codebook {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            words: Array2::zeros((k, d)),
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            w_out: Array2::zeros((d, d)),
        }
    }
}

/// All learnable tensors of the field. The same type doubles as the gradient
/// container.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub trunk: Vec<Linear>,
    pub density: Linear,
    pub color_hidden: Linear,
    pub color_out: Linear,
    pub semantic: Linear,
    pub codebook: Option<Codebook>,
}

fn trunk_shapes(cfg: &FieldConfig) -> Vec<(usize, usize)> {
    let (h, px) = (cfg.width, cfg.encoding.position_dim());
    (0..TRUNK_LAYERS)
        .map(|i| match i {
            0 => (px, h),
            SKIP_LAYER => (h + px, h),
            _ => (h, h),
        })
        .collect()
}

impl FieldParams {
    /// Xavier-uniform weights, zero biases, gaussian codebook words with
    /// standard deviation `1/sqrt(d)`. Draw order follows declaration order
    /// with the codebook last, so a field with and without codebook share the
    /// same trunk and heads for a given seed.
    pub fn init(seed: u64, config: &FieldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.width;
        let trunk = trunk_shapes(config).into_iter().map(|(i, o)| Linear::xavier(i, o, &mut rng)).collect();
        let density = Linear::xavier(h, 1, &mut rng);
        let color_hidden = Linear::xavier(h + config.encoding.direction_dim(), h / 2, &mut rng);
        let color_out = Linear::xavier(h / 2, 3, &mut rng);
        let semantic = Linear::xavier(h, config.num_classes, &mut rng);
        let codebook = config.use_codebook.then(|| {
            let normal = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("positive std");
            let words = Array2::from_shape_simple_fn((config.codebook_size, h), || normal.sample(&mut rng));
            Codebook {
                words,
                w_q: xavier(h, h, &mut rng),
                w_k: xavier(h, h, &mut rng),
                w_v: xavier(h, h, &mut rng),
                w_out: xavier(h, h, &mut rng),
            }
        });
        Ok(Self { config: config.clone(), trunk, density, color_hidden, color_out, semantic, codebook })
    }

    /// Same shapes as `self`, all zeros.
    pub fn zeros_like(&self) -> Self {
        let cfg = &self.config;
        let h = cfg.width;
        Self {
            config: cfg.clone(),
            trunk: trunk_shapes(cfg).into_iter().map(|(i, o)| Linear::zeros(i, o)).collect(),
            density: Linear::zeros(h, 1),
            color_hidden: Linear::zeros(h + cfg.encoding.direction_dim(), h / 2),
            color_out: Linear::zeros(h / 2, 3),
            semantic: Linear::zeros(h, cfg.num_classes),
            codebook: self.codebook.as_ref().map(|cb| Codebook::zeros(cb.words.nrows(), h)),
        }
    }

    /// Named tensors in declaration order.
    pub fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        let mut out: Vec<(String, &[f64], Vec<usize>)> = Vec::new();
        fn mat<'a>(out: &mut Vec<(String, &'a [f64], Vec<usize>)>, name: String, a: &'a Array2<f64>) {
            out.push((name, a.as_slice().expect("standard layout"), a.shape().to_vec()));
        }
        fn vec<'a>(out: &mut Vec<(String, &'a [f64], Vec<usize>)>, name: String, a: &'a Array1<f64>) {
            out.push((name, a.as_slice().expect("standard layout"), a.shape().to_vec()));
        }
        for (i, l) in self.trunk.iter().enumerate() {
            mat(&mut out, format!("trunk.{i}.weight"), &l.weight);
            vec(&mut out, format!("trunk.{i}.bias"), &l.bias);
        }
        for (name, l) in [
            ("density", &self.density),
            ("color_hidden", &self.color_hidden),
            ("color_out", &self.color_out),
            ("semantic", &self.semantic),
        ] {
            mat(&mut out, format!("{name}.weight"), &l.weight);
            vec(&mut out, format!("{name}.bias"), &l.bias);
        }
        if let Some(cb) = &self.codebook {
            mat(&mut out, "codebook.words".into(), &cb.words);
            mat(&mut out, "codebook.w_q".into(), &cb.w_q);
            mat(&mut out, "codebook.w_k".into(), &cb.w_k);
            mat(&mut out, "codebook.w_v".into(), &cb.w_v);
            mat(&mut out, "codebook.w_out".into(), &cb.w_out);
        }
        out
    }

    /// Mutable views of every tensor, in the order of [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.trunk.iter_mut() {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        for l in [&mut self.density, &mut self.color_hidden, &mut self.color_out, &mut self.semantic] {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        if let Some(cb) = &mut self.codebook {
            for a in [&mut cb.words, &mut cb.w_q, &mut cb.w_k, &mut cb.w_v, &mut cb.w_out] {
                out.push(a.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.1.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.1.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &FieldParams) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(crate::error::contract("parameter sets have different layouts"));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            if d.len() != s.1.len() {
                return Err(crate::error::contract(format!("tensor {} has a different size", s.0)));
            }
            d.iter_mut().zip(s.1).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// FNV-1a over the raw bits of every parameter; equal checksums for
    /// bit-identical parameters.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, data, _) in self.tensors() {
            for v in data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Trunk and heads (everything except the codebook) are copied from
    /// `other`, which must share the trunk layout.
    pub fn copy_trunk_from(&mut self, other: &FieldParams) {
        self.trunk = other.trunk.clone();
        self.density = other.density.clone();
        self.color_hidden = other.color_hidden.clone();
        self.color_out = other.color_out.clone();
        self.semantic = other.semantic.clone();
    }
}
