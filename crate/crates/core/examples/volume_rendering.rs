//! Alpha compositing along one ray, then a full view rendered from an
//! untrained field.

use semnerf::field::{FieldConfig, FieldParams};
use semnerf::geometry::{Intrinsics, Pose};
use semnerf::render::{composite, render_view, SamplingConfig};

fn main() -> semnerf::Result<()> {
    // an opaque slab between t = 2 and t = 3 in front of empty space
    let n = 12;
    let deltas = vec![0.5; n];
    let sigmas: Vec<f64> = (0..n).map(|i| if (4..6).contains(&i) { 5.0 } else { 0.0 }).collect();
    let depths: Vec<f64> = (0..n).map(|i| 0.25 + 0.5 * i as f64).collect();
    let c = composite(&sigmas, &depths, &deltas)?;
    for (i, w) in c.weights.iter().enumerate() {
        println!("sample {i:>2}  t {:.2}  w {w:.4}", depths[i]);
    }
    println!("expected depth {:.4}, residual transmittance {:.2e}", c.aggregate[0], c.trans_residual);

    let cfg = FieldConfig { width: 16, ..FieldConfig::default() };
    let params = FieldParams::init(0, &cfg)?;
    let k = Intrinsics::from_fov(24, 24, 90.0)?;
    let view = render_view(&params, &Pose::identity(), &k, &SamplingConfig { n_samples: 16, ..SamplingConfig::default() })?;
    let mean_depth = view.depth.data.iter().sum::<f64>() / view.depth.len() as f64;
    println!("untrained field: mean depth {mean_depth:.3}, {} parameters", params.num_params());
    Ok(())
}
