//! Bi-directional verification on ground-truth geometry: a block of wrong
//! labels in the novel view is rejected while consistent labels pass.

use semnerf::bdv::{validity_map, ViewBundle};
use semnerf::geometry::{Intrinsics, Pose, Vec3};
use semnerf::metrics::validity_report;
use semnerf::scene::generate_scene;

fn main() -> semnerf::Result<()> {
    let scene = generate_scene(3, 8, 5)?;
    let k = Intrinsics::from_fov(64, 64, 90.0)?;
    let bg = Some(scene.background_class);
    let cam = |x: f64, yaw: f64| Pose::look_at(Vec3::new(x, 0.0, 0.0), Vec3::new(x + yaw.cos(), 0.0, yaw.sin()), Vec3::y());
    let sources: Vec<ViewBundle> = [cam(-0.3, 0.1)?, cam(0.3, -0.2)?]
        .iter()
        .map(|p| ViewBundle::from_ground_truth(&scene.render_gt_view(p, &k), bg))
        .collect();

    let truth = scene.render_gt_view(&cam(0.0, -0.05)?, &k);
    let mut novel = ViewBundle::from_ground_truth(&truth, None);
    for y in 20..44 {
        for x in 20..44 {
            let l = *novel.labels.get(x, y);
            novel.labels.set(x, y, (l + 1) % 4);
        }
    }
    let valid = validity_map(&sources, &novel, &k)?;
    let r = validity_report(&valid.mask, &novel.labels, &truth.labels)?;
    println!("valid pixels {} of {}", r.valid_pixels, k.num_pixels());
    println!("label accuracy overall {:.4}, among valid pixels {:.4}", r.overall_accuracy, r.precision);
    let leaked = (20..44).flat_map(|y| (20..44).map(move |x| (x, y))).filter(|&(x, y)| *valid.mask.get(x, y)).count();
    println!("corrupted pixels marked valid: {leaked}");
    Ok(())
}
