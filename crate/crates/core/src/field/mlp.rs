use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

use super::codebook::{self, AttnCache};
use super::encoding::encode_into;
use super::{FieldParams, Linear, SKIP_LAYER, TRUNK_LAYERS};
use crate::error::{contract, Error, Result};
use crate::geometry::Vec3;

/// Batched field predictions, one row per point.
#[derive(Debug, Clone)]
pub struct FieldOutputs {
    pub density: Array1<f64>,
    pub color: Array2<f64>,
    pub logits: Array2<f64>,
    /// Output of the codebook query layer before the codebook read is added
    /// (the last trunk layer when no codebook is used).
    pub feature: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointOutput {
    pub density: f64,
    pub color: [f64; 3],
    pub logits: Vec<f64>,
    pub feature: Vec<f64>,
}

/// Upstream gradients of a scalar loss with respect to the field outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub density: Array1<f64>,
    pub color: Array2<f64>,
    pub logits: Array2<f64>,
}

impl OutputGrads {
    pub fn zeros(n: usize, num_classes: usize) -> Self {
        Self {
            density: Array1::zeros(n),
            color: Array2::zeros((n, 3)),
            logits: Array2::zeros((n, num_classes)),
        }
    }
}

/// Activations kept from the forward pass for [`FieldParams::backward`].
pub struct FieldCache {
    n: usize,
    layer_inputs: Vec<Array2<f64>>,
    /// Post-ReLU outputs before any codebook addition.
    raw_outputs: Vec<Array2<f64>>,
    attn: Option<AttnCache>,
    f_used: Array2<f64>,
    density_pre: Array1<f64>,
    color_in: Array2<f64>,
    color_hidden: Array2<f64>,
    color: Array2<f64>,
}

impl FieldCache {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn density_preactivation(&self) -> &Array1<f64> {
        &self.density_pre
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn affine(x: &ArrayView2<f64>, layer: &Linear) -> Array2<f64> {
    let mut z = x.dot(&layer.weight);
    z += &layer.bias;
    z
}

fn linear_backward(input: &ArrayView2<f64>, d_out: &Array2<f64>, grad: &mut Linear) {
    grad.weight += &input.t().dot(d_out);
    grad.bias += &d_out.sum_axis(Axis(0));
}

fn relu_mask(d: &mut Array2<f64>, out: &Array2<f64>) {
    Zip::from(d).and(out).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

impl FieldParams {
    /// Evaluates the field at `positions` (`n x 3`, world units) seen along
    /// unit `directions` (`n x 3`).
    pub fn forward_batch(
        &self,
        positions: &Array2<f64>,
        directions: &Array2<f64>,
    ) -> Result<(FieldOutputs, FieldCache)> {
        let cfg = &self.config;
        let n = positions.nrows();
        if positions.ncols() != 3 || directions.ncols() != 3 || directions.nrows() != n {
            return Err(contract("positions and directions must both be n x 3"));
        }
        if !positions.iter().chain(directions.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite field input".into()));
        }
        let enc = &cfg.encoding;
        let (px, pd) = (enc.position_dim(), enc.direction_dim());
        let mut enc_x = Array2::zeros((n, px));
        let mut enc_d = Array2::zeros((n, pd));
        for i in 0..n {
            let p = [
                positions[(i, 0)] * enc.position_scale,
                positions[(i, 1)] * enc.position_scale,
                positions[(i, 2)] * enc.position_scale,
            ];
            encode_into(&p, enc.l_pos, enc.include_input, enc_x.row_mut(i).as_slice_mut().unwrap());
            let d = [directions[(i, 0)], directions[(i, 1)], directions[(i, 2)]];
            encode_into(&d, enc.l_dir, enc.include_input, enc_d.row_mut(i).as_slice_mut().unwrap());
        }

        let mut layer_inputs = Vec::with_capacity(TRUNK_LAYERS);
        let mut raw_outputs = Vec::with_capacity(TRUNK_LAYERS);
        let mut attn = None;
        let mut feature = None;
        let mut a = enc_x.clone();
        for (k, layer) in self.trunk.iter().enumerate() {
            let input = if k == SKIP_LAYER { concatenate![Axis(1), a, enc_x] } else { a };
            let mut z = affine(&input.view(), layer);
            z.mapv_inplace(|v| v.max(0.0));
            layer_inputs.push(input);
            let query_here = cfg.use_codebook && k == cfg.codebook_layer_idx;
            if query_here || (k == TRUNK_LAYERS - 1 && feature.is_none()) {
                feature = Some(z.clone());
            }
            if query_here {
                let cb = self.codebook.as_ref().ok_or_else(|| contract("use_codebook set but no codebook"))?;
                let (f_sr, cache) = codebook::forward(cb, &z.view(), cfg.num_heads, cfg.attn_scale);
                raw_outputs.push(z.clone());
                z += &f_sr;
                attn = Some(cache);
            } else {
                raw_outputs.push(z.clone());
            }
            a = z;
        }
        let f_used = a;

        let density_pre = affine(&f_used.view(), &self.density).column(0).to_owned();
        let density = density_pre.mapv(softplus);
        let color_in = concatenate![Axis(1), f_used, enc_d];
        let mut color_hidden = affine(&color_in.view(), &self.color_hidden);
        color_hidden.mapv_inplace(|v| v.max(0.0));
        let mut color = affine(&color_hidden.view(), &self.color_out);
        color.mapv_inplace(sigmoid);
        let logits = affine(&f_used.view(), &self.semantic);

        let outputs = FieldOutputs {
            density,
            color: color.clone(),
            logits,
            feature: feature.expect("trunk has layers"),
        };
        let cache = FieldCache {
            n,
            layer_inputs,
            raw_outputs,
            attn,
            f_used,
            density_pre,
            color_in,
            color_hidden,
            color,
        };
        Ok((outputs, cache))
    }

    pub fn forward(&self, x: Vec3, d: Vec3) -> Result<PointOutput> {
        let p = Array2::from_shape_vec((1, 3), vec![x.x, x.y, x.z]).expect("1x3");
        let dir = Array2::from_shape_vec((1, 3), vec![d.x, d.y, d.z]).expect("1x3");
        let (out, _) = self.forward_batch(&p, &dir)?;
        Ok(PointOutput {
            density: out.density[0],
            color: [out.color[(0, 0)], out.color[(0, 1)], out.color[(0, 2)]],
            logits: out.logits.row(0).to_vec(),
            feature: out.feature.row(0).to_vec(),
        })
    }

    /// Reverse-mode gradients of every parameter given upstream gradients on
    /// the outputs of the forward pass that produced `cache`.
    ///
    /// The semantic upstream gradient is routed per the config: with
    /// `detach_semantics` it only reaches the semantic head; with
    /// `detach_codebook_from_sem` it reaches the trunk through the identity
    /// branch of the codebook addition but never the attention branch.
    pub fn backward(&self, cache: &FieldCache, grads: &OutputGrads) -> Result<FieldParams> {
        let cfg = &self.config;
        let n = cache.n;
        if grads.density.len() != n
            || grads.color.dim() != (n, 3)
            || grads.logits.dim() != (n, cfg.num_classes)
        {
            return Err(contract(format!("upstream gradients do not match a batch of {n} points")));
        }
        let h = cfg.width;
        let mut out = self.zeros_like();
        let f = cache.f_used.view();

        // density head
        let d_pre: Array1<f64> = Zip::from(&grads.density)
            .and(&cache.density_pre)
            .map_collect(|&g, &z| g * sigmoid(z));
        let d_pre = d_pre.insert_axis(Axis(1));
        linear_backward(&f, &d_pre, &mut out.density);
        let mut recon = d_pre.dot(&self.density.weight.t());

        // color head
        let mut d_z2 = grads.color.clone();
        Zip::from(&mut d_z2).and(&cache.color).for_each(|g, &c| *g *= c * (1.0 - c));
        linear_backward(&cache.color_hidden.view(), &d_z2, &mut out.color_out);
        let mut d_hidden = d_z2.dot(&self.color_out.weight.t());
        relu_mask(&mut d_hidden, &cache.color_hidden);
        linear_backward(&cache.color_in.view(), &d_hidden, &mut out.color_hidden);
        let d_color_in = d_hidden.dot(&self.color_hidden.weight.t());
        recon += &d_color_in.slice(s![.., ..h]);

        // semantic head
        linear_backward(&f, &grads.logits, &mut out.semantic);
        let mut sem = None;
        if !cfg.detach_semantics {
            let d_sem = grads.logits.dot(&self.semantic.weight.t());
            if cfg.use_codebook && cfg.detach_codebook_from_sem {
                sem = Some(d_sem);
            } else {
                recon += &d_sem;
            }
        }

        for k in (0..TRUNK_LAYERS).rev() {
            if cfg.use_codebook && k == cfg.codebook_layer_idx {
                let cb = self.codebook.as_ref().ok_or_else(|| contract("use_codebook set but no codebook"))?;
                let attn = cache.attn.as_ref().ok_or_else(|| contract("forward cache has no attention"))?;
                let grad_cb = out.codebook.as_mut().expect("zeros_like mirrors the codebook");
                let d_query = codebook::backward(
                    cb,
                    &cache.raw_outputs[k].view(),
                    attn,
                    &recon,
                    cfg.num_heads,
                    cfg.attn_scale,
                    grad_cb,
                );
                recon += &d_query;
                if let Some(s) = sem.take() {
                    recon += &s;
                }
            }
            relu_mask(&mut recon, &cache.raw_outputs[k]);
            if let Some(s) = sem.as_mut() {
                relu_mask(s, &cache.raw_outputs[k]);
            }
            let input = cache.layer_inputs[k].view();
            match &sem {
                Some(s) => linear_backward(&input, &(&recon + s), &mut out.trunk[k]),
                None => linear_backward(&input, &recon, &mut out.trunk[k]),
            }
            if k == 0 {
                break;
            }
            let w_t = self.trunk[k].weight.t();
            let keep = |g: Array2<f64>| if k == SKIP_LAYER { g.slice(s![.., ..h]).to_owned() } else { g };
            recon = keep(recon.dot(&w_t));
            sem = sem.map(|s| keep(s.dot(&w_t)));
        }
        Ok(out)
    }
}
