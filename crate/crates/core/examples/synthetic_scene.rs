//! Generates a labeled primitive scene and writes one ground-truth view as
//! PPM (color), PGM (labels), and a binary depth map.
//!
//! cargo run --release --example synthetic_scene -- [seed] [out_dir]

use std::path::PathBuf;

use semnerf::geometry::{Intrinsics, Pose, Vec3};
use semnerf::io::{write_depth, write_pgm, write_ppm};
use semnerf::scene::generate_scene;

fn main() -> semnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "scene-out".into()));

    let scene = generate_scene(seed, 8, 5)?;
    for p in &scene.primitives {
        println!("class {} at {:?}", p.class_id, p.shape.center());
    }
    let k = Intrinsics::from_fov(64, 64, 90.0)?;
    let pose = Pose::look_at(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::y())?;
    let view = scene.render_gt_view(&pose, &k);
    let fg = view.labels.data.iter().filter(|&&l| l != scene.background_class).count();
    println!("{fg} of {} pixels hit a primitive", k.num_pixels());

    write_ppm(&out.join("view.ppm"), &view.rgb)?;
    write_pgm(&out.join("view.pgm"), &view.labels)?;
    write_depth(&out.join("view.dpth"), &view.depth)?;
    println!("wrote {}", out.display());
    Ok(())
}
