//! Ray sampling and differentiable volume rendering.
//!
//! Along a ray with samples `t_i` and spacings `δ_i`:
//! `α_i = 1 − exp(−σ_i δ_i)`, `T_i = Π_{j<i} (1 − α_j)`, `w_i = T_i α_i`, and
//! any per-sample value (color, logits, z-depth) renders as `Σ w_i v_i`.
//! Depth additionally adds `T_{N+1} · z_far`, so empty rays read the far
//! plane.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, Result};
use crate::field::{FieldCache, FieldParams, OutputGrads};
use crate::geometry::{ray_for_pixel, Intrinsics, Pixel, Pose, Ray};
use crate::image::{DepthMap, LabelMap, LogitMap, Map, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub t_near: f64,
    pub t_far: f64,
    /// Jitter each sample uniformly inside its bin (training only).
    pub stratified: bool,
    pub perturb_seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_samples: 64, t_near: 0.5, t_far: 6.5, stratified: true, perturb_seed: 0 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(domain("need at least two samples per ray"));
        }
        if !(self.t_near >= 0.0 && self.t_near < self.t_far && self.t_far.is_finite()) {
            return Err(domain(format!("invalid ray bounds [{}, {}]", self.t_near, self.t_far)));
        }
        Ok(())
    }

    pub fn deterministic(&self) -> Self {
        Self { stratified: false, ..self.clone() }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.perturb_seed)
    }

    fn bin_width(&self) -> f64 {
        (self.t_far - self.t_near) / self.n_samples as f64
    }
}

/// Sample positions `t_i` with spacings `δ_i = t_{i+1} − t_i` and
/// `δ_N = t_far − t_N`. Bin midpoints unless `stratified`, in which case each
/// sample is drawn uniformly within its bin from `rng`.
pub fn sample_along_ray(config: &SamplingConfig, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let n = config.n_samples;
    let w = config.bin_width();
    let ts: Vec<f64> = (0..n)
        .map(|i| {
            let offset = if config.stratified { rng.random::<f64>() } else { 0.5 };
            config.t_near + (i as f64 + offset) * w
        })
        .collect();
    (0..n)
        .map(|i| {
            let next = if i + 1 < n { ts[i + 1] } else { config.t_far };
            (ts[i], next - ts[i])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    /// `channels` values, `Σ w_i v_i`.
    pub aggregate: Vec<f64>,
    pub weights: Vec<f64>,
    /// `T_{N+1}`, the light that passes all samples.
    pub trans_residual: f64,
}

/// Compositing weights and residual transmittance for one ray.
pub fn composite_weights(sigmas: &[f64], deltas: &[f64]) -> Result<(Vec<f64>, f64)> {
    if sigmas.len() != deltas.len() {
        return Err(contract("sigma and delta counts differ"));
    }
    let mut weights = Vec::with_capacity(sigmas.len());
    let mut trans = 1.0;
    for (&s, &d) in sigmas.iter().zip(deltas) {
        if s.is_nan() || d.is_nan() {
            return Err(Error::Numeric("NaN density or spacing".into()));
        }
        if !(s >= 0.0) || !(d >= 0.0) {
            return Err(domain(format!("negative density or spacing ({s}, {d})")));
        }
        let alpha = -(-s * d).exp_m1();
        weights.push(trans * alpha);
        trans *= 1.0 - alpha;
    }
    Ok((weights, trans))
}

/// Volume-render `values` (row-major, `sigmas.len() x channels`).
pub fn composite(sigmas: &[f64], values: &[f64], deltas: &[f64]) -> Result<Composite> {
    let n = sigmas.len();
    if n == 0 || values.len() % n != 0 {
        return Err(contract("values must hold a whole number of channels per sample"));
    }
    let channels = values.len() / n;
    let (weights, trans_residual) = composite_weights(sigmas, deltas)?;
    let mut aggregate = vec![0.0; channels];
    for (i, w) in weights.iter().enumerate() {
        for c in 0..channels {
            aggregate[c] += w * values[i * channels + c];
        }
    }
    Ok(Composite { aggregate, weights, trans_residual })
}

/// Gradients of `L = Σ_c g_c·aggregate_c + Σ_i gw_i·w_i + g_res·T_{N+1}`
/// with respect to each `σ_i` and each value, given the forward result.
pub fn composite_backward(
    forward: &Composite,
    sigmas: &[f64],
    values: &[f64],
    deltas: &[f64],
    d_aggregate: &[f64],
    d_weights: Option<&[f64]>,
    d_residual: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sigmas.len();
    let channels = d_aggregate.len();
    if values.len() != n * channels || forward.weights.len() != n || deltas.len() != n {
        return Err(contract("composite_backward shapes do not match the forward pass"));
    }
    // per-sample scalar each weight multiplies
    let score: Vec<f64> = (0..n)
        .map(|i| {
            let v = &values[i * channels..(i + 1) * channels];
            let dot: f64 = v.iter().zip(d_aggregate).map(|(a, b)| a * b).sum();
            dot + d_weights.map_or(0.0, |g| g[i])
        })
        .collect();
    let d_values = (0..n * channels).map(|k| forward.weights[k / channels] * d_aggregate[k % channels]).collect();
    let d_sigma = sigma_grads(&forward.weights, sigmas, deltas, &score, forward.trans_residual, d_residual);
    Ok((d_sigma, d_values))
}

/// `∂/∂σ_k [Σ_i w_i s_i + T_{N+1} g_res]
///   = δ_k (T_{k+1} s_k − Σ_{i>k} w_i s_i − T_{N+1} g_res)`.
fn sigma_grads(weights: &[f64], sigmas: &[f64], deltas: &[f64], score: &[f64], residual: f64, d_residual: f64) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; n];
    let mut suffix = residual * d_residual;
    let mut trans = 1.0;
    let trans_after: Vec<f64> = (0..n)
        .map(|i| {
            trans *= (-sigmas[i] * deltas[i]).exp();
            trans
        })
        .collect();
    for k in (0..n).rev() {
        out[k] = deltas[k] * (trans_after[k] * score[k] - suffix);
        suffix += weights[k] * score[k];
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    /// Expected camera-frame z-depth, including `T_{N+1} · z_far`.
    pub depth: f64,
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
    pub trans_residual: f64,
}

/// Forward state of a batch of rays, kept for [`render_rays_backward`].
pub struct RenderCache {
    n_rays: usize,
    n_samples: usize,
    sigmas: Array1<f64>,
    deltas: Vec<f64>,
    z: Vec<f64>,
    z_far: Vec<f64>,
    color: Array2<f64>,
    logits: Array2<f64>,
    weights: Vec<f64>,
    residual: Vec<f64>,
    field: FieldCache,
}

/// Renders a batch of rays with one field evaluation. Stratified jitter, if
/// enabled, is drawn from `rng` ray by ray.
pub fn render_rays(
    params: &FieldParams,
    rays: &[Ray],
    config: &SamplingConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<RayRender>, RenderCache)> {
    config.validate()?;
    let ns = config.n_samples;
    let total = rays.len() * ns;
    let mut positions = Array2::zeros((total, 3));
    let mut directions = Array2::zeros((total, 3));
    let mut deltas = Vec::with_capacity(total);
    let mut z = Vec::with_capacity(total);
    for (r, ray) in rays.iter().enumerate() {
        for (i, (t, d)) in sample_along_ray(config, rng).into_iter().enumerate() {
            let row = r * ns + i;
            let p = ray.at(t);
            for a in 0..3 {
                positions[(row, a)] = p[a];
                directions[(row, a)] = ray.direction[a];
            }
            deltas.push(d);
            z.push(t * ray.z_per_t);
        }
    }
    let (out, field) = params.forward_batch(&positions, &directions)?;
    let classes = params.config.num_classes;
    let mut renders = Vec::with_capacity(rays.len());
    let mut all_weights = Vec::with_capacity(total);
    let mut residuals = Vec::with_capacity(rays.len());
    let z_far: Vec<f64> = rays.iter().map(|r| config.t_far * r.z_per_t).collect();
    for r in 0..rays.len() {
        let span = r * ns..(r + 1) * ns;
        let sig = out.density.slice(ndarray::s![span.clone()]);
        let (weights, residual) = composite_weights(sig.as_slice().expect("contiguous"), &deltas[span.clone()])?;
        let mut color = [0.0; 3];
        let mut logits = vec![0.0; classes];
        let mut depth = residual * z_far[r];
        for (i, w) in weights.iter().enumerate() {
            let row = r * ns + i;
            for c in 0..3 {
                color[c] += w * out.color[(row, c)];
            }
            for c in 0..classes {
                logits[c] += w * out.logits[(row, c)];
            }
            depth += w * z[row];
        }
        all_weights.extend_from_slice(&weights);
        residuals.push(residual);
        renders.push(RayRender { color, depth, logits, weights, trans_residual: residual });
    }
    let cache = RenderCache {
        n_rays: rays.len(),
        n_samples: ns,
        sigmas: out.density,
        deltas,
        z,
        z_far,
        color: out.color,
        logits: out.logits,
        weights: all_weights,
        residual: residuals,
        field,
    };
    Ok((renders, cache))
}

/// Upstream gradients on rendered ray quantities.
#[derive(Debug, Clone)]
pub struct RayGrads {
    /// `n_rays x 3`
    pub color: Array2<f64>,
    pub depth: Array1<f64>,
    /// `n_rays x C`
    pub logits: Array2<f64>,
}

impl RayGrads {
    pub fn zeros(n_rays: usize, num_classes: usize) -> Self {
        Self {
            color: Array2::zeros((n_rays, 3)),
            depth: Array1::zeros(n_rays),
            logits: Array2::zeros((n_rays, num_classes)),
        }
    }
}

/// Parameter gradients of a loss on rendered colors, depths, and logits.
pub fn render_rays_backward(params: &FieldParams, cache: &RenderCache, grads: &RayGrads) -> Result<FieldParams> {
    let (nr, ns) = (cache.n_rays, cache.n_samples);
    let classes = params.config.num_classes;
    if grads.color.dim() != (nr, 3) || grads.depth.len() != nr || grads.logits.dim() != (nr, classes) {
        return Err(contract("ray gradients do not match the rendered batch"));
    }
    let mut up = OutputGrads::zeros(nr * ns, classes);
    for r in 0..nr {
        let span = r * ns..(r + 1) * ns;
        let score: Vec<f64> = span
            .clone()
            .map(|row| {
                let mut s = grads.depth[r] * cache.z[row];
                for c in 0..3 {
                    s += grads.color[(r, c)] * cache.color[(row, c)];
                }
                for c in 0..classes {
                    s += grads.logits[(r, c)] * cache.logits[(row, c)];
                }
                s
            })
            .collect();
        let d_sigma = sigma_grads(
            &cache.weights[span.clone()],
            cache.sigmas.slice(ndarray::s![span.clone()]).as_slice().expect("contiguous"),
            &cache.deltas[span.clone()],
            &score,
            cache.residual[r],
            grads.depth[r] * cache.z_far[r],
        );
        for (i, row) in span.enumerate() {
            let w = cache.weights[row];
            up.density[row] = d_sigma[i];
            for c in 0..3 {
                up.color[(row, c)] = w * grads.color[(r, c)];
            }
            for c in 0..classes {
                up.logits[(row, c)] = w * grads.logits[(r, c)];
            }
        }
    }
    params.backward(&cache.field, &up)
}

/// Deterministic (midpoint) render of one ray.
pub fn render_ray(params: &FieldParams, ray: &Ray, config: &SamplingConfig) -> Result<RayRender> {
    let det = config.deterministic();
    let (mut r, _) = render_rays(params, std::slice::from_ref(ray), &det, &mut det.rng())?;
    Ok(r.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub logits: LogitMap,
    /// Channel argmax of `logits`.
    pub labels: LabelMap,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// Camera ray through cell `(x, y)` bounded by the sampling range.
pub fn pixel_ray(intrinsics: &Intrinsics, pose: &Pose, x: usize, y: usize, config: &SamplingConfig) -> Ray {
    ray_for_pixel(intrinsics, pose, Pixel::new(x as f64, y as f64))
        .expect("cell index is inside the image")
        .with_bounds(config.t_near, config.t_far)
}

const VIEW_CHUNK: usize = 256;

/// Renders every pixel with midpoint sampling. Rays are processed in fixed
/// chunks, so the result does not depend on the thread schedule.
pub fn render_view(params: &FieldParams, pose: &Pose, intrinsics: &Intrinsics, config: &SamplingConfig) -> Result<RenderedView> {
    let det = config.deterministic();
    det.validate()?;
    crate::retain_heap();
    let (w, h) = (intrinsics.width, intrinsics.height);
    let rays: Vec<Ray> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| pixel_ray(intrinsics, pose, x, y, &det)).collect();
    let chunks: Vec<Vec<RayRender>> = rays
        .par_chunks(VIEW_CHUNK)
        .map(|chunk| render_rays(params, chunk, &det, &mut det.rng()).map(|r| r.0))
        .collect::<Result<_>>()?;
    let renders: Vec<RayRender> = chunks.into_iter().flatten().collect();
    let classes = params.config.num_classes;
    let mut logits = LogitMap::zeros(w, h, classes);
    for (i, r) in renders.iter().enumerate() {
        logits.data[i * classes..(i + 1) * classes].copy_from_slice(&r.logits);
    }
    Ok(RenderedView {
        rgb: Map { width: w, height: h, data: renders.iter().map(|r| r.color).collect() },
        depth: Map { width: w, height: h, data: renders.iter().map(|r| r.depth).collect() },
        labels: logits.argmax(),
        logits,
        pose: *pose,
        intrinsics: *intrinsics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldConfig, PositionalEncodingConfig};
    use crate::geometry::Vec3;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Direct evaluation: `T_i = exp(−Σ_{j<i} σ_j δ_j)`.
    fn oracle(sigmas: &[f64], values: &[f64], deltas: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = sigmas.len();
        let ch = values.len() / n;
        let mut agg = vec![0.0; ch];
        let mut weights = vec![];
        for i in 0..n {
            let optical: f64 = (0..i).map(|j| sigmas[j] * deltas[j]).sum();
            let w = (-optical).exp() * (1.0 - (-sigmas[i] * deltas[i]).exp());
            weights.push(w);
            for c in 0..ch {
                agg[c] += w * values[i * ch + c];
            }
        }
        let total: f64 = (0..n).map(|j| sigmas[j] * deltas[j]).sum();
        (agg, weights, (-total).exp())
    }

    #[test]
    fn midpoint_samples() {
        let cfg = SamplingConfig { n_samples: 4, t_near: 0.0, t_far: 4.0, stratified: false, perturb_seed: 0 };
        let s = sample_along_ray(&cfg, &mut cfg.rng());
        assert_eq!(s, vec![(0.5, 1.0), (1.5, 1.0), (2.5, 1.0), (3.5, 0.5)]);
    }

    #[test]
    fn stratified_samples_stay_in_bins() {
        let cfg = SamplingConfig { n_samples: 8, t_near: 1.0, t_far: 5.0, stratified: true, perturb_seed: 3 };
        let mut rng = cfg.rng();
        for _ in 0..10_000 {
            let s = sample_along_ray(&cfg, &mut rng);
            for (i, (t, d)) in s.iter().enumerate() {
                assert!(*t >= 1.0 + 0.5 * i as f64 && *t < 1.0 + 0.5 * (i + 1) as f64);
                assert!(*d >= 0.0);
            }
        }
        let a = sample_along_ray(&cfg, &mut cfg.rng());
        let b = sample_along_ray(&cfg, &mut cfg.rng());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_space_composites_to_zero() {
        let c = composite(&[0.0; 5], &[1.0; 15], &[0.3; 5]).unwrap();
        assert_eq!(c.aggregate, vec![0.0; 3]);
        assert!(c.weights.iter().all(|&w| w == 0.0));
        assert_eq!(c.trans_residual, 1.0);
    }

    #[test]
    fn half_opacity_sample() {
        let c = composite(&[std::f64::consts::LN_2], &[0.8, 0.4], &[1.0]).unwrap();
        assert!((c.weights[0] - 0.5).abs() < 1e-15);
        assert!((c.aggregate[0] - 0.4).abs() < 1e-15);
        assert!((c.aggregate[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(composite(&[-1.0], &[0.0], &[1.0]).is_err());
        assert!(composite(&[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn matches_prefix_product_oracle() {
        let mut seed = 99;
        for _ in 0..500 {
            let n = 1 + (lcg(&mut seed) * 8.0) as usize;
            let sig: Vec<f64> = (0..n).map(|_| lcg(&mut seed) * 5.0).collect();
            let del: Vec<f64> = (0..n).map(|_| lcg(&mut seed) * 0.7).collect();
            let val: Vec<f64> = (0..2 * n).map(|_| lcg(&mut seed) * 2.0 - 1.0).collect();
            let c = composite(&sig, &val, &del).unwrap();
            let (agg, w, res) = oracle(&sig, &val, &del);
            for (a, b) in c.aggregate.iter().zip(&agg) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in c.weights.iter().zip(&w) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((c.trans_residual - res).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut seed = 5;
        let n = 5;
        let sig: Vec<f64> = (0..n).map(|_| lcg(&mut seed) * 3.0).collect();
        let del: Vec<f64> = (0..n).map(|_| 0.1 + lcg(&mut seed) * 0.5).collect();
        let val: Vec<f64> = (0..3 * n).map(|_| lcg(&mut seed)).collect();
        let g_agg = [0.3, -1.2, 0.7];
        let g_w: Vec<f64> = (0..n).map(|_| lcg(&mut seed) - 0.5).collect();
        let g_res = 0.9;
        let loss = |s: &[f64], v: &[f64]| {
            let c = composite(s, v, &del).unwrap();
            c.aggregate.iter().zip(&g_agg).map(|(a, b)| a * b).sum::<f64>()
                + c.weights.iter().zip(&g_w).map(|(a, b)| a * b).sum::<f64>()
                + g_res * c.trans_residual
        };
        let fwd = composite(&sig, &val, &del).unwrap();
        let (ds, dv) = composite_backward(&fwd, &sig, &val, &del, &g_agg, Some(&g_w), g_res).unwrap();
        let eps = 1e-6;
        for k in 0..n {
            let mut up = sig.clone();
            up[k] += eps;
            let mut dn = sig.clone();
            dn[k] -= eps;
            let fd = (loss(&up, &val) - loss(&dn, &val)) / (2.0 * eps);
            assert!((fd - ds[k]).abs() / (fd.abs() + 1e-8) < 1e-5, "sigma {k}: {fd} vs {}", ds[k]);
        }
        for k in 0..3 * n {
            // exact linearity in values
            assert_eq!(dv[k], fwd.weights[k / 3] * g_agg[k % 3]);
        }
        let (zs, zv) = composite_backward(&fwd, &sig, &val, &del, &[0.0; 3], None, 0.0).unwrap();
        assert!(zs.iter().chain(&zv).all(|&v| v == 0.0));
    }

    fn tiny_field(seed: u64) -> FieldParams {
        let cfg = FieldConfig {
            width: 16,
            num_classes: 3,
            encoding: PositionalEncodingConfig { l_pos: 3, l_dir: 2, include_input: true, position_scale: 0.3 },
            ..FieldConfig::default()
        };
        FieldParams::init(seed, &cfg).unwrap()
    }

    fn forward_ray() -> Ray {
        Ray { origin: Vec3::zeros(), direction: Vec3::z(), t_near: 0.5, t_far: 4.5, z_per_t: 1.0 }
    }

    #[test]
    fn zero_density_field_reads_far_plane() {
        let mut params = tiny_field(1);
        params.density.weight.fill(0.0);
        params.density.bias.fill(-1e3);
        let cfg = SamplingConfig { n_samples: 16, t_near: 0.5, t_far: 4.5, stratified: false, perturb_seed: 0 };
        let r = render_ray(&params, &forward_ray(), &cfg).unwrap();
        assert_eq!(r.color, [0.0; 3]);
        assert_eq!(r.trans_residual, 1.0);
        assert_eq!(r.depth, 4.5);
    }

    #[test]
    fn density_wall_sets_depth() {
        // density depends only on the first encoded input (x_z * scale); a
        // steep ramp makes space opaque past z = 2.0
        let mut params = tiny_field(2);
        let scale = params.config.encoding.position_scale;
        params.density.weight.fill(0.0);
        for l in params.trunk.iter_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        // trunk layer 0 unit 0 = relu(z_world * scale - 2.0 * scale), z input
        // is encoded column 2 * (1 + 2 * l_pos) for the z component
        let z_col = 2 * (1 + 2 * params.config.encoding.l_pos);
        params.trunk[0].weight[(z_col, 0)] = 1.0;
        params.trunk[0].bias[0] = -2.0 * scale;
        for k in 1..8 {
            params.trunk[k].weight[(0, 0)] = 1.0;
        }
        params.density.weight[(0, 0)] = 1e6;
        params.density.bias[0] = -50.0;
        let cfg = SamplingConfig { n_samples: 40, t_near: 0.5, t_far: 4.5, stratified: false, perturb_seed: 0 };
        let r = render_ray(&params, &forward_ray(), &cfg).unwrap();
        let bin = 4.0 / 40.0;
        assert!((r.depth - 2.0).abs() <= bin, "depth {}", r.depth);
        assert!(r.trans_residual < 1e-12);
    }

    #[test]
    fn weights_sum_with_residual_to_one() {
        let params = tiny_field(4);
        let cfg = SamplingConfig { n_samples: 24, t_near: 0.5, t_far: 4.5, stratified: true, perturb_seed: 1 };
        let rays: Vec<Ray> = (0..20)
            .map(|i| {
                let d = Vec3::new(0.1 * i as f64 - 1.0, 0.3, 1.0).normalize();
                Ray { origin: Vec3::zeros(), direction: d, t_near: 0.5, t_far: 4.5, z_per_t: d.z }
            })
            .collect();
        let (renders, _) = render_rays(&params, &rays, &cfg, &mut cfg.rng()).unwrap();
        for r in renders {
            let s: f64 = r.weights.iter().sum::<f64>() + r.trans_residual;
            assert!((s - 1.0).abs() < 1e-6);
            assert!(r.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn render_backward_matches_finite_differences() {
        let params = tiny_field(7);
        let cfg = SamplingConfig { n_samples: 12, t_near: 0.5, t_far: 4.5, stratified: true, perturb_seed: 9 };
        let d = Vec3::new(0.2, -0.1, 1.0).normalize();
        let ray = Ray { origin: Vec3::new(0.1, 0.0, 0.0), direction: d, t_near: 0.5, t_far: 4.5, z_per_t: d.z };
        let mut g = RayGrads::zeros(1, 3);
        g.color[(0, 0)] = 0.7;
        g.color[(0, 2)] = -0.4;
        g.depth[0] = 0.3;
        g.logits[(0, 1)] = 1.1;
        let loss = |p: &FieldParams| {
            let (r, _) = render_rays(p, &[ray], &cfg, &mut cfg.rng()).unwrap();
            0.7 * r[0].color[0] - 0.4 * r[0].color[2] + 0.3 * r[0].depth + 1.1 * r[0].logits[1]
        };
        let (_, cache) = render_rays(&params, &[ray], &cfg, &mut cfg.rng()).unwrap();
        let grads = render_rays_backward(&params, &cache, &g).unwrap();
        let eps = 1e-5;
        let mut work = params.clone();
        let names: Vec<String> = params.tensors().into_iter().map(|t| t.0).collect();
        let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.1.to_vec()).collect();
        for (ti, name) in names.iter().enumerate() {
            let (mut diff2, mut norm2) = (0.0, 0.0);
            for j in 0..analytic[ti].len() {
                let orig = work.tensors()[ti].1[j];
                work.tensors_mut()[ti][j] = orig + eps;
                let up = loss(&work);
                work.tensors_mut()[ti][j] = orig - eps;
                let dn = loss(&work);
                work.tensors_mut()[ti][j] = orig;
                let fd = (up - dn) / (2.0 * eps);
                diff2 += (fd - analytic[ti][j]).powi(2);
                norm2 += fd * fd;
            }
            let rel = diff2.sqrt() / (norm2.sqrt() + 1e-8);
            assert!(rel < 1e-3, "{name}: {rel:e}");
        }
    }

    #[test]
    fn view_matches_per_pixel_loop_and_is_repeatable() {
        let params = tiny_field(3);
        let cfg = SamplingConfig { n_samples: 16, t_near: 0.5, t_far: 4.5, stratified: true, perturb_seed: 0 };
        let k = Intrinsics::from_fov(8, 8, 80.0).unwrap();
        let pose = Pose::look_at(Vec3::zeros(), Vec3::new(0.3, 0.1, 1.0), Vec3::y()).unwrap();
        let view = render_view(&params, &pose, &k, &cfg).unwrap();
        assert_eq!(view, render_view(&params, &pose, &k, &cfg).unwrap());
        assert_eq!(view.labels, view.logits.argmax());
        for y in 0..8 {
            for x in 0..8 {
                let r = render_ray(&params, &pixel_ray(&k, &pose, x, y, &cfg), &cfg).unwrap();
                let got = view.rgb.get(x, y);
                for c in 0..3 {
                    assert!((got[c] - r.color[c]).abs() < 1e-12);
                }
                assert!((view.depth.get(x, y) - r.depth).abs() < 1e-12);
                for (a, b) in view.logits.pixel(x, y).iter().zip(&r.logits) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
