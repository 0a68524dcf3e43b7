//! Fits a small semantic field to three views of a synthetic scene and
//! reports held-out quality.
//!
//! cargo run --release --example fit_field -- [iterations]

use semnerf::field::{FieldConfig, FieldParams, PositionalEncodingConfig};
use semnerf::geometry::{Intrinsics, Pose, Vec3};
use semnerf::metrics::{psnr, semantic_accuracy};
use semnerf::render::{render_view, SamplingConfig};
use semnerf::scene::{generate_scene, pseudo_mono_depth};
use semnerf::training::{train, BatchPlan, BatchSampler, LossWeights, SourceData, TrainConfig};

fn main() -> semnerf::Result<()> {
    let iterations = std::env::args().nth(1).map_or(300, |s| s.parse().expect("iterations"));
    let scene = generate_scene(1, 6, 5)?;
    let k = Intrinsics::from_fov(32, 32, 90.0)?;
    let cam = |yaw: f64| Pose::look_at(Vec3::zeros(), Vec3::new(yaw.cos(), 0.0, yaw.sin()), Vec3::y());
    let sources = [0.0, 0.9, 1.8]
        .iter()
        .enumerate()
        .map(|(i, &yaw)| {
            let v = scene.render_gt_view(&cam(yaw)?, &k);
            Ok(SourceData { pose: v.pose, mono_depth: pseudo_mono_depth(&v, i as u64, 0.5, 0.3, 0.02)?, rgb: v.rgb, labels: v.labels })
        })
        .collect::<semnerf::Result<Vec<_>>>()?;

    let sampling = SamplingConfig { n_samples: 24, ..SamplingConfig::default() };
    let plan = BatchPlan { source_rays: 192, novel_rays: 0, patch_width: 8, patch_height: 8, patches: 1 };
    let sampler = BatchSampler::new(k, sampling.clone(), plan, sources, vec![])?;
    let field = FieldConfig {
        width: 32,
        encoding: PositionalEncodingConfig { l_pos: 6, l_dir: 2, include_input: true, position_scale: 0.2 },
        detach_semantics: true,
        ..FieldConfig::default()
    };
    let cfg = TrainConfig { iterations, lr_init: 5e-3, lr_final: 5e-4, batch: plan, ..TrainConfig::default() };
    let out = train(FieldParams::init(0, &field)?, &cfg, &LossWeights::default(), &sampling, |rng| sampler.sample(rng), |_, _| Ok(()))?;
    for r in out.history.iter().step_by((iterations / 6).max(1)) {
        println!("iter {:>5}  total {:.5}  recon {:.5}  sem {:.4}", r.iteration, r.total, r.l_recon, r.l_sem);
    }

    for (name, yaw) in [("source", 0.9), ("held-out", 0.45)] {
        let gt = scene.render_gt_view(&cam(yaw)?, &k);
        let r = render_view(&out.params, &gt.pose, &k, &sampling)?;
        println!("{name:>8}: PSNR {:.2}  sem acc {:.4}", psnr(&r.rgb, &gt.rgb)?, semantic_accuracy(&r.labels, &gt.labels, None)?);
    }
    Ok(())
}
