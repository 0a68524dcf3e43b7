//! Pinhole projection, back-projection, and carrying a pixel from one camera
//! to another through its depth.

use semnerf::geometry::{back_project, project_point, relative_pose, Intrinsics, Pixel, Pose, Vec3};

fn main() -> semnerf::Result<()> {
    let k = Intrinsics::from_fov(64, 64, 90.0)?;
    println!("fx {:.3} cx {:.3}", k.fx, k.cx);

    let p = Vec3::new(0.4, -0.2, 2.5);
    let (px, z) = project_point(&k, &p)?;
    let back = back_project(&k, px, z)?;
    println!("{p:?} -> pixel ({:.3}, {:.3}) z {z} -> {back:?}", px.u, px.v);

    let a = Pose::look_at(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), Vec3::y())?;
    let b = Pose::look_at(Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.5, 0.0, 1.0) + Vec3::new(-0.2, 0.0, 0.0), Vec3::y())?;
    let a_to_b = relative_pose(&a, &b);
    let src = Pixel::center(20, 40);
    for depth in [1.0, 2.0, 4.0] {
        let (dst, dz) = project_point(&k, &a_to_b.transform_point(&back_project(&k, src, depth)?))?;
        println!("depth {depth}: ({:.1}, {:.1}) lands at ({:.2}, {:.2}) with z {dz:.3}", src.u, src.v, dst.u, dst.v);
    }
    Ok(())
}
