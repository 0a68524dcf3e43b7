//! Property tests over the public API.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semnerf::bdv::{project_src_to_nov, validity_map, verify_pair, ViewBundle};
use semnerf::geometry::{project_point, transfer_pixel, relative_pose, Intrinsics, Pixel, Pose, Ray, Vec3};
use semnerf::image::Map;
use semnerf::metrics::{psnr, ssim};
use semnerf::render::{composite_weights, SamplingConfig};
use semnerf::scene::generate_scene;
use semnerf::training::{
    mono_depth_loss, semantic_loss, BatchPlan, BatchSampler, NovelData, NovelTargets, Provenance, RayBatch, RayOrigin, SourceData, Target, TrainRay,
};

fn camera(yaw: f64, x: f64) -> Pose {
    let eye = Vec3::new(x, 0.0, 0.0);
    Pose::look_at(eye, eye + Vec3::new(yaw.cos(), 0.0, yaw.sin()), Vec3::y()).unwrap()
}

fn provenance() -> impl Strategy<Value = Provenance> {
    prop_oneof![
        Just(Provenance::SourceObservation),
        Just(Provenance::TeacherRender),
        Just(Provenance::SourceWarp),
        Just(Provenance::Oracle)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_partition_unity(sig in prop::collection::vec(0.0f64..100.0, 1..40), d in 0.0f64..1.0) {
        let deltas = vec![d; sig.len()];
        let (w, t) = composite_weights(&sig, &deltas).unwrap();
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert!((w.iter().sum::<f64>() + t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_transfer_inverts(u in 1.0f64..63.0, v in 1.0f64..63.0, depth in 0.5f64..8.0, yaw in -0.4f64..0.4, dx in -0.5f64..0.5) {
        let k = Intrinsics::from_fov(64, 64, 90.0).unwrap();
        let (a, b) = (camera(0.0, 0.0), camera(yaw, dx));
        if let Some((q, z)) = transfer_pixel(&k, &relative_pose(&a, &b), Pixel::new(u, v), depth) {
            let (back, zb) = transfer_pixel(&k, &relative_pose(&b, &a), q, z).unwrap();
            prop_assert!((back.u - u).abs() < 1e-8 && (back.v - v).abs() < 1e-8);
            prop_assert!((zb - depth).abs() < 1e-9);
        }
    }

    #[test]
    fn mono_loss_ignores_affine_changes_of_rendered_depth(
        depth in prop::collection::vec(0.5f64..6.0, 4..64),
        scale in 0.2f64..5.0,
        shift in -3.0f64..3.0,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<f64> = depth.iter().map(|d| 0.5 * d + rand::Rng::random_range(&mut rng, -0.2..0.2)).collect();
        let moved: Vec<f64> = depth.iter().map(|d| scale * d + shift).collect();
        let a = mono_depth_loss(&depth, &target).unwrap().loss;
        let b = mono_depth_loss(&moved, &target).unwrap().loss;
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn zero_weight_labels_contribute_nothing(logits in prop::collection::vec(-5.0f64..5.0, 12), t in prop::collection::vec(0u8..3, 4)) {
        let l = ndarray::Array2::from_shape_vec((4, 3), logits).unwrap();
        let (loss, grad) = semantic_loss(&l, &t, &[0.0; 4], 4).unwrap();
        prop_assert_eq!(loss, 0.0);
        prop_assert!(grad.iter().all(|&g| g == 0.0));
        let (full, _) = semantic_loss(&l, &t, &[1.0; 4], 4).unwrap();
        prop_assert!(full >= 0.0);
    }

    #[test]
    fn batches_accept_exactly_the_quarantine_rules(
        novel in any::<bool>(),
        rgb in proptest::option::of(provenance()),
        sem in proptest::option::of(provenance()),
        weight in prop_oneof![Just(0.0), Just(1.0), Just(0.5)],
        ablation in any::<bool>(),
    ) {
        let ray = Ray { origin: Vec3::zeros(), direction: Vec3::z(), t_near: 0.5, t_far: 4.0, z_per_t: 1.0 };
        let origin = if novel { RayOrigin::Novel } else { RayOrigin::Source };
        let tr = TrainRay {
            ray,
            origin,
            rgb: rgb.map(|provenance| Target { value: [0.5; 3], provenance }),
            sem: sem.map(|provenance| Target { value: 1, provenance }),
            sem_weight: weight,
        };
        let mut batch = if ablation { RayBatch::allowing_novel_rgb() } else { RayBatch::new() };
        let allowed_prov = |p: Provenance| p != Provenance::Oracle && ((p == Provenance::SourceObservation) != novel);
        let expected = rgb.into_iter().chain(sem).all(allowed_prov)
            && (weight == 0.0 || weight == 1.0)
            && !(!novel && sem.is_some() && weight != 1.0)
            && !(novel && rgb.is_some() && !ablation);
        prop_assert_eq!(batch.push(tr).is_ok(), expected);
    }

    #[test]
    fn image_metrics_are_symmetric(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut px = || [0; 3].map(|_: i32| rand::Rng::random_range(&mut rng, 0.0..1.0));
        let a = Map::from_fn(16, 16, |_, _| px());
        let b = Map::from_fn(16, 16, |_, _| px());
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12 && s1 <= 1.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Every valid novel cell is the projection of some foreground source
    /// pixel, and validity is the union of the per-source maps.
    #[test]
    fn validity_support_lies_in_source_projections(seed in 0u64..1000, yaw in -0.5f64..0.5) {
        let scene = generate_scene(seed, 8, 5).unwrap();
        let k = Intrinsics::from_fov(24, 24, 90.0).unwrap();
        let bg = Some(scene.background_class);
        let base = seed as f64 * 0.7;
        let sources: Vec<ViewBundle> = [camera(base, -0.3), camera(base + 0.6, 0.3)]
            .iter()
            .map(|p| ViewBundle::from_ground_truth(&scene.render_gt_view(p, &k), bg))
            .collect();
        let nov = ViewBundle::from_ground_truth(&scene.render_gt_view(&camera(base + yaw, 0.0), &k), None);
        let v = validity_map(&sources, &nov, &k).unwrap();
        let mut reach = Map::filled(24, 24, false);
        let mut union = Map::filled(24, 24, false);
        for s in &sources {
            union.union_with(&verify_pair(s, &nov, &k).unwrap().mask).unwrap();
            for y in 0..24 {
                for x in 0..24 {
                    if s.is_foreground(x, y) {
                        if let Some(f) = project_src_to_nov(s, &nov.pose, &k, Pixel::center(x, y)) {
                            let (nx, ny) = k.cell_of(f.pixel).unwrap();
                            reach.set(nx, ny, true);
                        }
                    }
                }
            }
        }
        prop_assert_eq!(&v.mask, &union);
        prop_assert!(v.mask.data.iter().zip(&reach.data).all(|(&m, &r)| !m || r));
        prop_assert_eq!(validity_map(&sources, &nov, &k).unwrap(), v);
    }

    /// Novel rays are only drawn from the supervised support.
    #[test]
    fn sampler_draws_novel_rays_from_support(seed in 0u64..1000, density in 0.02f64..0.5) {
        let k = Intrinsics::from_fov(16, 16, 90.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = SourceData {
            pose: camera(0.0, 0.0),
            rgb: Map::filled(16, 16, [0.3; 3]),
            labels: Map::filled(16, 16, 1),
            mono_depth: Map::filled(16, 16, 2.0),
        };
        let valid = Map::from_fn(16, 16, |_, _| rand::Rng::random_bool(&mut rng, density));
        let labels = Map::from_fn(16, 16, |x, y| (x + y) as u8 % 4);
        let pose = camera(0.3, 0.1);
        let novel = NovelData { pose, targets: NovelTargets::Labels { labels: labels.clone(), valid: valid.clone() } };
        let plan = BatchPlan { source_rays: 8, novel_rays: 64, patch_width: 4, patch_height: 4, patches: 1 };
        let sampler = BatchSampler::new(k, SamplingConfig::default(), plan, vec![src], vec![novel]).unwrap();
        let batch = sampler.sample(&mut rng).unwrap();
        let n_novel = batch.count(RayOrigin::Novel);
        prop_assert_eq!(n_novel, if valid.count() == 0 { 0 } else { 64 });
        for r in batch.rays().iter().filter(|r| r.origin == RayOrigin::Novel) {
            let cam = pose.inverse().transform_point(&r.ray.at(1.0));
            let (p, _) = project_point(&k, &cam).unwrap();
            let (x, y) = k.cell_of(p).unwrap();
            prop_assert!(*valid.get(x, y));
            prop_assert_eq!(r.sem.unwrap().value, *labels.get(x, y));
            prop_assert!(r.rgb.is_none() && r.sem_weight == 1.0);
        }
    }
}
