//! Procedural scenes of labeled boxes and spheres, rendered exactly by ray
//! casting. These provide the ground-truth color, depth, and class for any
//! posed view, and a deliberately mis-scaled "monocular" depth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{ray_for_pixel, Intrinsics, Pixel, Pose, Ray, Vec3};
use crate::image::{DepthMap, LabelMap, Map, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { center: [f64; 3], half_extents: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    pub fn center(&self) -> Vec3 {
        match self {
            Shape::Box { center, .. } | Shape::Sphere { center, .. } => Vec3::from(*center),
        }
    }

    /// Half-size of the axis-aligned bounding box.
    fn extent(&self) -> Vec3 {
        match self {
            Shape::Box { half_extents, .. } => Vec3::from(*half_extents),
            Shape::Sphere { radius, .. } => Vec3::repeat(*radius),
        }
    }

    /// Nearest hit with `t` in the open interval `(t_min, t_max)`, returning
    /// the ray parameter and the outward surface normal.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - Vec3::from(center);
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq]
                    .into_iter()
                    .find(|&t| t > t_min && t < t_max)
                    .map(|t| (t, (ray.at(t) - Vec3::from(center)) / radius))
            }
            Shape::Box { center, half_extents } => {
                let lo = Vec3::from(center) - Vec3::from(half_extents);
                let hi = Vec3::from(center) + Vec3::from(half_extents);
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let (mut axis0, mut axis1) = (0, 0);
                for a in 0..3 {
                    let inv = 1.0 / ray.direction[a];
                    let mut ta = (lo[a] - ray.origin[a]) * inv;
                    let mut tb = (hi[a] - ray.origin[a]) * inv;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    // NaN from 0 * inf means the ray lies in the slab plane
                    if ta.is_nan() || tb.is_nan() {
                        return None;
                    }
                    if ta > t0 {
                        t0 = ta;
                        axis0 = a;
                    }
                    if tb < t1 {
                        t1 = tb;
                        axis1 = a;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let normal_for = |axis: usize, t: f64| {
                    let p = ray.at(t);
                    let mut n = Vec3::zeros();
                    n[axis] = if p[axis] > center[axis] { 1.0 } else { -1.0 };
                    n
                };
                if t0 > t_min && t0 < t_max {
                    Some((t0, normal_for(axis0, t0)))
                } else if t1 > t_min && t1 < t_max {
                    Some((t1, normal_for(axis1, t1)))
                } else {
                    None
                }
            }
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => ((p - Vec3::from(center)).norm() - radius).abs(),
            Shape::Box { center, half_extents } => {
                let q = (p - Vec3::from(center)).abs() - Vec3::from(half_extents);
                let outside = q.map(|c| c.max(0.0)).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
    pub class_id: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub num_classes: usize,
    pub background_color: [f64; 3],
    /// Always `num_classes - 1`.
    pub background_class: u8,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    /// Lambert mixing weight; 0 renders flat albedo.
    pub shading: f64,
    /// Unit vector pointing toward the light.
    pub light_dir: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

/// Layout knobs for [`generate_scene_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneLayout {
    /// Primitive centers sit on an annulus around the origin, in the
    /// horizontal (x, z) plane.
    pub ring_inner: f64,
    pub ring_outer: f64,
    pub size_min: f64,
    pub size_max: f64,
    pub shading: f64,
    pub t_near: f64,
    pub t_far: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            ring_inner: 2.4,
            ring_outer: 3.6,
            size_min: 0.35,
            size_max: 0.75,
            shading: 0.5,
            t_near: 0.5,
            t_far: 6.5,
        }
    }
}

const HALF_BOUNDS: [f64; 3] = [5.0, 2.0, 5.0];
const BACKGROUND: [f64; 3] = [0.08, 0.08, 0.1];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Base color of a foreground class; classes are spread evenly over hue.
pub fn class_base_color(class_id: usize, num_classes: usize) -> [f64; 3] {
    let fg = (num_classes - 1).max(1);
    hsv_to_rgb(class_id as f64 / fg as f64, 0.75, 0.9)
}

pub fn generate_scene(seed: u64, num_primitives: usize, num_classes: usize) -> Result<SyntheticScene> {
    generate_scene_with(seed, num_primitives, num_classes, &SceneLayout::default())
}

/// Deterministic scene for `seed`. Primitive `i` belongs to class
/// `i mod (num_classes - 1)` and takes that class's base color with a small
/// per-primitive jitter, so color predicts class.
pub fn generate_scene_with(
    seed: u64,
    num_primitives: usize,
    num_classes: usize,
    layout: &SceneLayout,
) -> Result<SyntheticScene> {
    if num_primitives < 1 {
        return Err(domain("a scene needs at least one primitive"));
    }
    if !(2..=255).contains(&num_classes) {
        return Err(domain(format!("num_classes must be in 2..=255, got {num_classes}")));
    }
    if !(layout.t_near > 0.0 && layout.t_near < layout.t_far && layout.t_far.is_finite()) {
        return Err(domain("need 0 < t_near < t_far < inf"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = Vec3::from(HALF_BOUNDS) * -1.0;
    let hi = Vec3::from(HALF_BOUNDS);
    let fg_classes = num_classes - 1;
    let sector = std::f64::consts::TAU / num_primitives as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut primitives = Vec::with_capacity(num_primitives);
    for i in 0..num_primitives {
        let angle = phase + sector * (i as f64 + rng.random_range(-0.3..0.3));
        let radius = rng.random_range(layout.ring_inner..layout.ring_outer);
        let height = rng.random_range(-0.6..0.9);
        let mut center = Vec3::new(radius * angle.cos(), height, radius * angle.sin());
        let shape = if rng.random_bool(0.5) {
            let he = [
                rng.random_range(layout.size_min..layout.size_max),
                rng.random_range(layout.size_min..layout.size_max),
                rng.random_range(layout.size_min..layout.size_max),
            ];
            for a in 0..3 {
                center[a] = center[a].clamp(lo[a] + he[a], hi[a] - he[a]);
            }
            Shape::Box { center: center.into(), half_extents: he }
        } else {
            let r = rng.random_range(layout.size_min..layout.size_max);
            for a in 0..3 {
                center[a] = center[a].clamp(lo[a] + r, hi[a] - r);
            }
            Shape::Sphere { center: center.into(), radius: r }
        };
        let class_id = i % fg_classes;
        let base = class_base_color(class_id, num_classes);
        let albedo = base.map(|c| (c + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0));
        primitives.push(Primitive { shape, albedo, class_id: class_id as u8 });
    }

    let light = Vec3::new(0.4, -0.8, -0.45).normalize();
    Ok(SyntheticScene {
        primitives,
        num_classes,
        background_color: BACKGROUND,
        background_class: (num_classes - 1) as u8,
        bounds_min: lo.into(),
        bounds_max: hi.into(),
        shading: layout.shading,
        light_dir: light.into(),
        t_near: layout.t_near,
        t_far: layout.t_far,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceResult {
    pub rgb: [f64; 3],
    pub z_depth: f64,
    pub class_id: u8,
}

impl SyntheticScene {
    pub fn empty(num_classes: usize) -> Self {
        let layout = SceneLayout::default();
        Self {
            primitives: Vec::new(),
            num_classes,
            background_color: BACKGROUND,
            background_class: (num_classes - 1) as u8,
            bounds_min: (Vec3::from(HALF_BOUNDS) * -1.0).into(),
            bounds_max: HALF_BOUNDS,
            shading: layout.shading,
            light_dir: Vec3::new(0.4, -0.8, -0.45).normalize().into(),
            t_near: layout.t_near,
            t_far: layout.t_far,
        }
    }

    /// Nearest hit inside the ray's own `(t_near, t_far)`; misses return the
    /// background color and class at the far-plane z-depth.
    pub fn trace(&self, ray: &Ray) -> TraceResult {
        let mut best: Option<(f64, Vec3, &Primitive)> = None;
        for prim in &self.primitives {
            let t_max = best.map_or(ray.t_far, |b| b.0);
            if let Some((t, n)) = prim.shape.intersect(ray, ray.t_near, t_max) {
                best = Some((t, n, prim));
            }
        }
        match best {
            None => TraceResult {
                rgb: self.background_color,
                z_depth: ray.z_far(),
                class_id: self.background_class,
            },
            Some((t, normal, prim)) => {
                let lambert = normal.dot(&Vec3::from(self.light_dir)).max(0.0);
                let shade = 1.0 - self.shading + self.shading * lambert;
                TraceResult {
                    rgb: prim.albedo.map(|a| a * shade),
                    z_depth: t * ray.z_per_t,
                    class_id: prim.class_id,
                }
            }
        }
    }

    /// Ray through cell `(x, y)` clipped to the scene's near/far range.
    pub fn camera_ray(&self, intrinsics: &Intrinsics, pose: &Pose, x: usize, y: usize) -> Ray {
        ray_for_pixel(intrinsics, pose, Pixel::new(x as f64, y as f64))
            .expect("cell index is inside the image")
            .with_bounds(self.t_near, self.t_far)
    }

    pub fn render_gt_view(&self, pose: &Pose, intrinsics: &Intrinsics) -> GroundTruthView {
        let (w, h) = (intrinsics.width, intrinsics.height);
        let rows: Vec<Vec<TraceResult>> = (0..h)
            .into_par_iter()
            .map(|y| (0..w).map(|x| self.trace(&self.camera_ray(intrinsics, pose, x, y))).collect())
            .collect();
        let flat: Vec<TraceResult> = rows.into_iter().flatten().collect();
        GroundTruthView {
            rgb: Map { width: w, height: h, data: flat.iter().map(|r| r.rgb).collect() },
            depth: Map { width: w, height: h, data: flat.iter().map(|r| r.z_depth).collect() },
            labels: Map { width: w, height: h, data: flat.iter().map(|r| r.class_id).collect() },
            pose: *pose,
            intrinsics: *intrinsics,
        }
    }

    /// Far-plane z-depth of every pixel; the background depth sentinel.
    pub fn far_depths(&self, pose: &Pose, intrinsics: &Intrinsics) -> DepthMap {
        Map::from_fn(intrinsics.width, intrinsics.height, |x, y| {
            self.camera_ray(intrinsics, pose, x, y).z_far()
        })
    }

    pub fn distance_to_surface(&self, p: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.shape.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Every primitive's bounding box lies within the scene bounds.
    pub fn primitives_in_bounds(&self) -> bool {
        let (lo, hi) = (Vec3::from(self.bounds_min), Vec3::from(self.bounds_max));
        self.primitives.iter().all(|p| {
            let (c, e) = (p.shape.center(), p.shape.extent());
            (0..3).all(|a| c[a] - e[a] >= lo[a] - 1e-12 && c[a] + e[a] <= hi[a] + 1e-12)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthView {
    pub rgb: RgbImage,
    /// Camera-frame z; background pixels hold the far-plane z of their ray.
    pub depth: DepthMap,
    pub labels: LabelMap,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// Stand-in for a monocular depth estimate: `scale * depth + shift` plus
/// gaussian noise.
pub fn pseudo_mono_depth(
    view: &GroundTruthView,
    seed: u64,
    scale: f64,
    shift: f64,
    noise_sigma: f64,
) -> Result<DepthMap> {
    if !(scale > 0.0) {
        return Err(domain(format!("mono depth scale must be positive, got {scale}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(domain("noise sigma must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| domain(e.to_string()))?;
    let data = view
        .depth
        .data
        .iter()
        .map(|&d| {
            let n = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            scale * d + shift + n
        })
        .collect();
    Map::from_vec(view.depth.width, view.depth.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_ray(origin: Vec3, dir: Vec3) -> Ray {
        Ray { origin, direction: dir.normalize(), t_near: 0.01, t_far: 100.0, z_per_t: 1.0 }
    }

    fn single(shape: Shape) -> SyntheticScene {
        let mut s = SyntheticScene::empty(2);
        s.primitives.push(Primitive { shape, albedo: [0.5, 0.2, 0.1], class_id: 0 });
        s
    }

    #[test]
    fn sphere_depth_on_axis() {
        let scene = single(Shape::Sphere { center: [0.0, 0.0, 5.0], radius: 1.0 });
        let hit = scene.trace(&axis_ray(Vec3::zeros(), Vec3::z()));
        assert!((hit.z_depth - 4.0).abs() < 1e-12);
        assert_eq!(hit.class_id, 0);
    }

    #[test]
    fn box_slab_depth() {
        // box spans z in [3, 4.5]; a ray from (0.2, -0.1, 0) along +z enters at z=3
        let scene = single(Shape::Box { center: [0.0, 0.0, 3.75], half_extents: [0.5, 0.5, 0.75] });
        let hit = scene.trace(&axis_ray(Vec3::new(0.2, -0.1, 0.0), Vec3::z()));
        assert!((hit.z_depth - 3.0).abs() < 1e-12);
        // oblique ray: direction (1, 0, 4)/sqrt(17) from (-0.5, 0, 0) hits the
        // z=3 face at x = -0.5 + 0.75 = 0.25, inside the face
        let d = Vec3::new(1.0, 0.0, 4.0).normalize();
        let mut ray = axis_ray(Vec3::new(-0.5, 0.0, 0.0), d);
        ray.z_per_t = d.z;
        let hit = scene.trace(&ray);
        assert!((hit.z_depth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn miss_returns_background() {
        let scene = single(Shape::Sphere { center: [0.0, 0.0, 5.0], radius: 1.0 });
        let ray = axis_ray(Vec3::zeros(), -Vec3::z());
        let hit = scene.trace(&ray);
        assert_eq!(hit.rgb, scene.background_color);
        assert_eq!(hit.class_id, 1);
        assert_eq!(hit.z_depth, ray.z_far());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(0, 8, 5).unwrap();
        let b = generate_scene(0, 8, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(1, 8, 5).unwrap());
        assert!(a.primitives_in_bounds());
    }

    #[test]
    fn minimal_scene() {
        let s = generate_scene(3, 1, 2).unwrap();
        assert_eq!(s.primitives.len(), 1);
        assert_eq!(s.primitives[0].class_id, 0);
        assert_eq!(s.background_class, 1);
        assert!(generate_scene(3, 0, 2).is_err());
        assert!(generate_scene(3, 1, 1).is_err());
    }

    #[test]
    fn class_colors_are_distinct() {
        let s = generate_scene(4, 12, 5).unwrap();
        for p in &s.primitives {
            let base = class_base_color(p.class_id as usize, 5);
            for c in 0..3 {
                assert!((p.albedo[c] - base[c]).abs() <= 0.04 + 1e-12);
            }
        }
        let c0 = class_base_color(0, 5);
        let c1 = class_base_color(1, 5);
        assert!((0..3).map(|i| (c0[i] - c1[i]).abs()).sum::<f64>() > 0.3);
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = SyntheticScene::empty(3);
        let k = Intrinsics::from_fov(8, 6, 90.0).unwrap();
        let view = scene.render_gt_view(&Pose::identity(), &k);
        assert!(view.labels.data.iter().all(|&l| l == 2));
        assert!(view.rgb.data.iter().all(|&c| c == scene.background_color));
        assert_eq!(view.depth, scene.far_depths(&Pose::identity(), &k));
    }

    #[test]
    fn view_matches_per_pixel_trace() {
        let scene = generate_scene(9, 8, 4).unwrap();
        let k = Intrinsics::from_fov(12, 10, 90.0).unwrap();
        let pose = Pose::look_at(Vec3::zeros(), Vec3::new(1.0, 0.1, 0.3), Vec3::y()).unwrap();
        let view = scene.render_gt_view(&pose, &k);
        assert_eq!(view, scene.render_gt_view(&pose, &k));
        let far = scene.far_depths(&pose, &k);
        for y in 0..10 {
            for x in 0..12 {
                let t = scene.trace(&scene.camera_ray(&k, &pose, x, y));
                assert_eq!(*view.rgb.get(x, y), t.rgb);
                assert_eq!(*view.depth.get(x, y), t.z_depth);
                assert_eq!(*view.labels.get(x, y), t.class_id);
                // label/depth coupling
                let bg = t.class_id == scene.background_class;
                assert_eq!(bg, *view.depth.get(x, y) == *far.get(x, y));
            }
        }
    }

    #[test]
    fn gt_depth_lands_on_surfaces() {
        use crate::geometry::back_project;
        let scene = generate_scene(2, 10, 4).unwrap();
        let k = Intrinsics::from_fov(32, 32, 90.0).unwrap();
        for view_idx in 0..4 {
            let a = view_idx as f64 * 1.5;
            let pose = Pose::look_at(Vec3::new(0.2, 0.0, 0.1), Vec3::new(a.cos(), 0.1, a.sin()), Vec3::y()).unwrap();
            let view = scene.render_gt_view(&pose, &k);
            for y in 0..32 {
                for x in 0..32 {
                    if *view.labels.get(x, y) == scene.background_class {
                        continue;
                    }
                    let p = back_project(&k, Pixel::center(x, y), *view.depth.get(x, y)).unwrap();
                    let world = pose.transform_point(&p);
                    assert!(scene.distance_to_surface(&world) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mono_depth_identity_and_affine() {
        let scene = generate_scene(1, 6, 3).unwrap();
        let k = Intrinsics::from_fov(8, 8, 90.0).unwrap();
        let view = scene.render_gt_view(&Pose::identity(), &k);
        assert_eq!(pseudo_mono_depth(&view, 0, 1.0, 0.0, 0.0).unwrap(), view.depth);
        let m = pseudo_mono_depth(&view, 0, 2.0, 1.0, 0.0).unwrap();
        for (a, b) in m.data.iter().zip(&view.depth.data) {
            assert_eq!(*a, 2.0 * b + 1.0);
        }
        assert!(pseudo_mono_depth(&view, 0, 0.0, 0.0, 0.0).is_err());
    }
}
