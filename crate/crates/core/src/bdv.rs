//! Bi-directional label verification between source and novel views.
//!
//! A source pixel `p` is carried to the novel view with its own depth
//! (`p̂`), then back to the source with the novel depth at `p̂`. The novel
//! cell under `p̂` is marked valid when the source label at `p`, the novel
//! label at `p̂`, and the source label where the return trip lands all agree.
//! Continuous coordinates are looked up in the cell that contains them.

use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::geometry::{relative_pose, transfer_pixel, Intrinsics, Pixel, Pose};
use crate::image::{DepthMap, LabelMap, Map, Mask, RgbImage};
use crate::render::RenderedView;
use crate::scene::GroundTruthView;

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub pose: Pose,
    /// Camera-frame z.
    pub depth: DepthMap,
    pub labels: LabelMap,
    pub rgb: Option<RgbImage>,
    /// Source pixels carrying this label never start a chain.
    pub background_class: Option<u8>,
}

impl ViewBundle {
    pub fn from_ground_truth(view: &GroundTruthView, background_class: Option<u8>) -> Self {
        Self {
            pose: view.pose,
            depth: view.depth.clone(),
            labels: view.labels.clone(),
            rgb: Some(view.rgb.clone()),
            background_class,
        }
    }

    pub fn from_render(view: &RenderedView, background_class: Option<u8>) -> Self {
        Self {
            pose: view.pose,
            depth: view.depth.clone(),
            labels: view.labels.clone(),
            rgb: Some(view.rgb.clone()),
            background_class,
        }
    }

    fn check(&self, intrinsics: &Intrinsics) -> Result<()> {
        let (w, h) = (intrinsics.width, intrinsics.height);
        if self.depth.width != w || self.depth.height != h || !self.labels.same_shape(&self.depth) {
            return Err(contract(format!("view maps do not match the {w}x{h} camera")));
        }
        if let Some(rgb) = &self.rgb {
            rgb.check_shape(&self.depth, "rgb")?;
        }
        Ok(())
    }

    /// Whether cell `(x, y)` may start a verification chain.
    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        let d = *self.depth.get(x, y);
        d.is_finite() && d > 0.0 && self.background_class != Some(*self.labels.get(x, y))
    }
}

/// Projection of a pixel into another view: continuous coordinate and the
/// z-depth of the point in the target camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub pixel: Pixel,
    pub depth: f64,
}

fn carry(view: &ViewBundle, target: &Pose, intrinsics: &Intrinsics, p: Pixel) -> Option<Projected> {
    let (x, y) = intrinsics.cell_of(p)?;
    let d = *view.depth.get(x, y);
    if !(d.is_finite() && d > 0.0) {
        return None;
    }
    let (pixel, depth) = transfer_pixel(intrinsics, &relative_pose(&view.pose, target), p, d)?;
    intrinsics.contains(pixel).then_some(Projected { pixel, depth })
}

/// `p̂_{src→nov}`: `p` lifted with the source depth and projected into the
/// novel camera. `None` when behind the camera or outside the image.
pub fn project_src_to_nov(src: &ViewBundle, nov_pose: &Pose, intrinsics: &Intrinsics, p: Pixel) -> Option<Projected> {
    carry(src, nov_pose, intrinsics, p)
}

/// `p_{nov→src}`: `p̂` lifted with the novel depth of its cell and projected
/// into the source camera.
pub fn project_nov_to_src(nov: &ViewBundle, src_pose: &Pose, intrinsics: &Intrinsics, p_hat: Pixel) -> Option<Projected> {
    carry(nov, src_pose, intrinsics, p_hat)
}

/// Novel-view cells confirmed by at least one source pixel chain.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedMap {
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMap {
    pub mask: Mask,
}

impl ValidityMap {
    /// Per-ray weight for the semantic loss.
    pub fn weight(&self, x: usize, y: usize) -> f64 {
        if *self.mask.get(x, y) {
            1.0
        } else {
            0.0
        }
    }
}

fn check_pair(src: &ViewBundle, nov: &ViewBundle, intrinsics: &Intrinsics) -> Result<()> {
    src.check(intrinsics)?;
    nov.check(intrinsics)
}

/// Novel cell verified by the chain starting at source cell `(x, y)`.
fn verify_chain(src: &ViewBundle, nov: &ViewBundle, intrinsics: &Intrinsics, x: usize, y: usize) -> Option<(usize, usize)> {
    if !src.is_foreground(x, y) {
        return None;
    }
    let fwd = project_src_to_nov(src, &nov.pose, intrinsics, Pixel::center(x, y))?;
    let (nx, ny) = intrinsics.cell_of(fwd.pixel)?;
    let back = project_nov_to_src(nov, &src.pose, intrinsics, fwd.pixel)?;
    let (bx, by) = intrinsics.cell_of(back.pixel)?;
    let s = *src.labels.get(x, y);
    (s == *nov.labels.get(nx, ny) && s == *src.labels.get(bx, by)).then_some((nx, ny))
}

pub fn verify_pair(src: &ViewBundle, nov: &ViewBundle, intrinsics: &Intrinsics) -> Result<VerifiedMap> {
    check_pair(src, nov, intrinsics)?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let hits: Vec<Vec<(usize, usize)>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).filter_map(|x| verify_chain(src, nov, intrinsics, x, y)).collect())
        .collect();
    let mut mask = Map::filled(w, h, false);
    for (x, y) in hits.into_iter().flatten() {
        mask.set(x, y, true);
    }
    Ok(VerifiedMap { mask })
}

/// Element-wise OR of [`verify_pair`] over every source.
pub fn validity_map(sources: &[ViewBundle], nov: &ViewBundle, intrinsics: &Intrinsics) -> Result<ValidityMap> {
    if sources.is_empty() {
        return Err(contract("validity needs at least one source view"));
    }
    let mut mask = Map::filled(intrinsics.width, intrinsics.height, false);
    for src in sources {
        mask.union_with(&verify_pair(src, nov, intrinsics)?.mask)?;
    }
    Ok(ValidityMap { mask })
}

struct Splat {
    zbuf: DepthMap,
    rgb: RgbImage,
    covered: Mask,
}

impl Splat {
    fn new(intrinsics: &Intrinsics) -> Self {
        let (w, h) = (intrinsics.width, intrinsics.height);
        Self { zbuf: Map::filled(w, h, f64::INFINITY), rgb: Map::filled(w, h, [0.0; 3]), covered: Map::filled(w, h, false) }
    }

    fn add(&mut self, src: &ViewBundle, nov_pose: &Pose, intrinsics: &Intrinsics) -> Result<()> {
        src.check(intrinsics)?;
        let rgb = src.rgb.as_ref().ok_or_else(|| contract("warp_rgb needs source colors"))?;
        for y in 0..intrinsics.height {
            for x in 0..intrinsics.width {
                if !src.is_foreground(x, y) {
                    continue;
                }
                let Some(p) = project_src_to_nov(src, nov_pose, intrinsics, Pixel::center(x, y)) else { continue };
                let Some((nx, ny)) = intrinsics.cell_of(p.pixel) else { continue };
                if p.depth < *self.zbuf.get(nx, ny) {
                    self.zbuf.set(nx, ny, p.depth);
                    self.rgb.set(nx, ny, *rgb.get(x, y));
                    self.covered.set(nx, ny, true);
                }
            }
        }
        Ok(())
    }
}

/// Forward-splats source colors into the novel camera; the nearest point
/// wins each cell. Returns the image and the cells written.
pub fn warp_rgb(src: &ViewBundle, nov_pose: &Pose, intrinsics: &Intrinsics) -> Result<(RgbImage, Mask)> {
    warp_rgb_multi(std::slice::from_ref(src), nov_pose, intrinsics)
}

/// [`warp_rgb`] over several sources sharing one depth buffer.
pub fn warp_rgb_multi(sources: &[ViewBundle], nov_pose: &Pose, intrinsics: &Intrinsics) -> Result<(RgbImage, Mask)> {
    let mut splat = Splat::new(intrinsics);
    for src in sources {
        splat.add(src, nov_pose, intrinsics)?;
    }
    Ok((splat.rgb, splat.covered))
}
