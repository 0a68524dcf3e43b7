//! Losses, batches, and the optimizer loop.
//!
//! The objective over a batch is
//! `L = L_recon + λ_sem · Σ w(r) CE(r) / (|r| + |r̂|) + λ_mono · L_mono`,
//! where the semantic sum runs over every ray carrying a label (source and
//! novel alike) and `L_mono` averages the aligned depth residual over patches.

mod batch;
mod losses;

use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{BatchPlan, BatchSampler, MonoPatch, NovelData, NovelTargets, Provenance, RayBatch, RayOrigin, SourceData, Target, TrainRay};
pub use losses::{align_depth, mono_depth_loss, recon_loss, semantic_loss, Alignment, MonoLoss};

use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::geometry::Ray;
use crate::render::{render_rays, render_rays_backward, RayGrads, SamplingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_sem: f64,
    pub lambda_mono: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_sem: 0.1, lambda_mono: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sem >= 0.0 && self.lambda_mono >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_init: f64,
    /// Learning rate reached at the last iteration (exponential decay).
    pub lr_final: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch: BatchPlan,
    pub seed: u64,
    /// Checkpoint period in iterations, 0 for none.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            lr_init: 5e-4,
            lr_final: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch: BatchPlan::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.lr_init >= 0.0 && self.lr_final >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if (self.lr_init == 0.0) != (self.lr_final == 0.0) {
            return bad("exponential decay needs both learning rates zero or both positive");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive");
        }
        self.batch.validate()
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        if self.lr_init == 0.0 {
            return 0.0;
        }
        let frac = iteration as f64 / self.iterations.max(1) as f64;
        self.lr_init * (self.lr_final / self.lr_init).powf(frac)
    }
}

/// Loss components and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub recon: f64,
    pub sem: f64,
    pub mono: f64,
    pub grads: FieldParams,
}

pub fn total_objective(
    params: &FieldParams,
    batch: &RayBatch,
    weights: &LossWeights,
    sampling: &SamplingConfig,
    rng: &mut impl Rng,
) -> Result<Objective> {
    let classes = params.config.num_classes;
    let rays: Vec<Ray> = batch
        .rays()
        .iter()
        .map(|r| r.ray)
        .chain(batch.patches().iter().flat_map(|p| p.rays.iter().copied()))
        .collect();
    let (renders, cache) = render_rays(params, &rays, sampling, rng)?;
    let mut up = RayGrads::zeros(rays.len(), classes);

    let rgb_idx: Vec<usize> = (0..batch.rays().len()).filter(|&i| batch.rays()[i].rgb.is_some()).collect();
    let mut recon = 0.0;
    if !rgb_idx.is_empty() {
        let colors: Vec<[f64; 3]> = rgb_idx.iter().map(|&i| renders[i].color).collect();
        let targets: Vec<[f64; 3]> = rgb_idx.iter().map(|&i| batch.rays()[i].rgb.expect("filtered").value).collect();
        let (l, g) = recon_loss(&colors, &targets)?;
        recon = l;
        for (k, &i) in rgb_idx.iter().enumerate() {
            for c in 0..3 {
                up.color[(i, c)] = g[k][c];
            }
        }
    }

    let sem_idx: Vec<usize> = (0..batch.rays().len()).filter(|&i| batch.rays()[i].sem.is_some()).collect();
    let mut sem = 0.0;
    if !sem_idx.is_empty() {
        let mut logits = Array2::zeros((sem_idx.len(), classes));
        for (k, &i) in sem_idx.iter().enumerate() {
            for c in 0..classes {
                logits[(k, c)] = renders[i].logits[c];
            }
        }
        let targets: Vec<u8> = sem_idx.iter().map(|&i| batch.rays()[i].sem.expect("filtered").value).collect();
        let w: Vec<f64> = sem_idx.iter().map(|&i| batch.rays()[i].sem_weight).collect();
        let (l, g) = semantic_loss(&logits, &targets, &w, sem_idx.len())?;
        sem = l;
        for (k, &i) in sem_idx.iter().enumerate() {
            for c in 0..classes {
                up.logits[(i, c)] = weights.lambda_sem * g[(k, c)];
            }
        }
    }

    let mut mono = 0.0;
    let n_patches = batch.patches().len();
    let mut offset = batch.rays().len();
    for patch in batch.patches() {
        let n = patch.rays.len();
        let depth: Vec<f64> = renders[offset..offset + n].iter().map(|r| r.depth).collect();
        let m = mono_depth_loss(&depth, &patch.target)?;
        mono += m.loss / n_patches as f64;
        for (k, g) in m.grad.iter().enumerate() {
            up.depth[offset + k] = weights.lambda_mono * g / n_patches as f64;
        }
        offset += n;
    }

    let total = recon + weights.lambda_sem * sem + weights.lambda_mono * mono;
    let grads = render_rays_backward(params, &cache, &up)?;
    Ok(Objective { total, recon, sem, mono, grads })
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: FieldParams,
    v: FieldParams,
}

impl Adam {
    pub fn new(params: &FieldParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn step(&mut self, params: &mut FieldParams, grads: &FieldParams, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let g = grads.tensors();
        for (((p, m), v), (_, g, _)) in params.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(self.v.tensors_mut()).zip(g) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub l_recon: f64,
    pub l_sem: f64,
    pub l_mono: f64,
    pub total: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub params: FieldParams,
    pub history: Vec<LossRecord>,
}

/// Runs `config.iterations` Adam steps. `next_batch` and the stratified
/// sampler share one generator seeded from `config.seed`; `on_checkpoint`
/// fires every `checkpoint_every` iterations.
pub fn train(
    mut params: FieldParams,
    config: &TrainConfig,
    weights: &LossWeights,
    sampling: &SamplingConfig,
    mut next_batch: impl FnMut(&mut ChaCha8Rng) -> Result<RayBatch>,
    mut on_checkpoint: impl FnMut(usize, &FieldParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    weights.validate()?;
    sampling.validate()?;
    crate::retain_heap();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&params, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let batch = next_batch(&mut rng)?;
        let obj = match total_objective(&params, &batch, weights, sampling, &mut rng) {
            Err(Error::Numeric(detail)) => return Err(Error::Diverged { iteration: it, detail }),
            other => other?,
        };
        let lr = config.learning_rate(it);
        let record = LossRecord { iteration: it, l_recon: obj.recon, l_sem: obj.sem, l_mono: obj.mono, total: obj.total, lr };
        if !obj.total.is_finite() || !obj.grads.all_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("recon {} sem {} mono {} total {}", obj.recon, obj.sem, obj.mono, obj.total),
            });
        }
        history.push(record);
        adam.step(&mut params, &obj.grads, lr);
        if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
            on_checkpoint(it + 1, &params)?;
        }
        if it % 100 == 0 {
            log::debug!("iter {it} total {:.5} recon {:.5} sem {:.5} mono {:.5}", obj.total, obj.recon, obj.sem, obj.mono);
        }
    }
    Ok(TrainOutcome { params, history })
}

pub fn write_history_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,l_recon,l_sem,l_mono,total,lr")?;
    for r in history {
        writeln!(out, "{},{:e},{:e},{:e},{:e},{:e}", r.iteration, r.l_recon, r.l_sem, r.l_mono, r.total, r.lr)?;
    }
    crate::io::write_bytes(path, &out)
}
