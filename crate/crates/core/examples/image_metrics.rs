//! PSNR, SSIM, and semantic accuracy between synthetic images.

use semnerf::image::{Map, RgbImage};
use semnerf::metrics::{psnr, semantic_accuracy, ssim};

fn main() -> semnerf::Result<()> {
    let img: RgbImage = Map::from_fn(32, 32, |x, y| [x as f64 / 31.0, y as f64 / 31.0, 0.5]);
    let shifted = Map::from_vec(32, 32, img.data.iter().map(|p| [p[0] + 0.1, p[1], p[2]]).collect())?;
    let blocky = Map::from_fn(32, 32, |x, y| *img.get(x / 4 * 4, y / 4 * 4));
    println!("self        PSNR {:>6.2}  SSIM {:.4}", psnr(&img, &img)?, ssim(&img, &img)?);
    println!("shifted red PSNR {:>6.2}  SSIM {:.4}", psnr(&shifted, &img)?, ssim(&shifted, &img)?);
    println!("blocky      PSNR {:>6.2}  SSIM {:.4}", psnr(&blocky, &img)?, ssim(&blocky, &img)?);

    let gt = Map::from_fn(32, 32, |x, _| (x / 8) as u8);
    let pred = Map::from_fn(32, 32, |x, y| if y < 4 { 0 } else { (x / 8) as u8 });
    println!("label accuracy {:.4}", semantic_accuracy(&pred, &gt, None)?);
    Ok(())
}
