//! Ray batches with target provenance, and the sampler that draws them.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{contract, domain, Result};
use crate::geometry::{Intrinsics, Pose, Ray};
use crate::image::{DepthMap, LabelMap, Mask, RgbImage};
use crate::render::{pixel_ray, SamplingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayOrigin {
    Source,
    Novel,
}

/// Where a training target came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Observed in a source view.
    SourceObservation,
    /// Rendered by the teacher.
    TeacherRender,
    /// Splatted from source views into another camera.
    SourceWarp,
    /// Scene ground truth at a pose that is not a source view.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target<T> {
    pub value: T,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRay {
    pub ray: Ray,
    pub origin: RayOrigin,
    pub rgb: Option<Target<[f64; 3]>>,
    pub sem: Option<Target<u8>>,
    /// `w(r)` in `{0, 1}`.
    pub sem_weight: f64,
}

impl TrainRay {
    pub fn source(ray: Ray, rgb: [f64; 3], label: u8) -> Self {
        Self {
            ray,
            origin: RayOrigin::Source,
            rgb: Some(Target { value: rgb, provenance: Provenance::SourceObservation }),
            sem: Some(Target { value: label, provenance: Provenance::SourceObservation }),
            sem_weight: 1.0,
        }
    }

    pub fn novel_label(ray: Ray, label: u8, weight: f64) -> Self {
        Self {
            ray,
            origin: RayOrigin::Novel,
            rgb: None,
            sem: Some(Target { value: label, provenance: Provenance::TeacherRender }),
            sem_weight: weight,
        }
    }

    pub fn novel_rgb(ray: Ray, rgb: [f64; 3], provenance: Provenance) -> Self {
        Self { ray, origin: RayOrigin::Novel, rgb: Some(Target { value: rgb, provenance }), sem: None, sem_weight: 0.0 }
    }
}

/// Rays of one image block with mono-depth targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoPatch {
    pub rays: Vec<Ray>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayBatch {
    rays: Vec<TrainRay>,
    patches: Vec<MonoPatch>,
    novel_rgb_allowed: bool,
}

impl RayBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Batch for the color-supervision ablations, which place teacher or
    /// warped colors on novel rays.
    pub fn allowing_novel_rgb() -> Self {
        Self { novel_rgb_allowed: true, ..Self::default() }
    }

    /// Adds a ray after checking the quarantine rules: no oracle target ever
    /// enters a batch, source rays carry observed targets with `w = 1`, and
    /// novel rays carry colors only in the ablation batches.
    pub fn push(&mut self, ray: TrainRay) -> Result<()> {
        let provs = ray.rgb.map(|t| t.provenance).into_iter().chain(ray.sem.map(|t| t.provenance));
        for p in provs {
            if p == Provenance::Oracle {
                return Err(contract("oracle targets are quarantined from training"));
            }
            let expected = match ray.origin {
                RayOrigin::Source => p == Provenance::SourceObservation,
                RayOrigin::Novel => p != Provenance::SourceObservation,
            };
            if !expected {
                return Err(contract(format!("{:?} target on a {:?} ray", p, ray.origin)));
            }
        }
        if ray.sem_weight != 0.0 && ray.sem_weight != 1.0 {
            return Err(domain(format!("semantic weight must be 0 or 1, got {}", ray.sem_weight)));
        }
        match ray.origin {
            RayOrigin::Source if ray.sem.is_some() && ray.sem_weight != 1.0 => {
                return Err(contract("source rays are weighted 1"));
            }
            RayOrigin::Novel if ray.rgb.is_some() && !self.novel_rgb_allowed => {
                return Err(contract("novel rays carry no color targets"));
            }
            _ => {}
        }
        self.rays.push(ray);
        Ok(())
    }

    pub fn push_patch(&mut self, patch: MonoPatch) -> Result<()> {
        if patch.rays.len() != patch.target.len() || patch.rays.len() < 2 {
            return Err(contract("mono patch needs matching rays and targets, at least two"));
        }
        self.patches.push(patch);
        Ok(())
    }

    pub fn rays(&self) -> &[TrainRay] {
        &self.rays
    }

    pub fn patches(&self) -> &[MonoPatch] {
        &self.patches
    }

    pub fn count(&self, origin: RayOrigin) -> usize {
        self.rays.iter().filter(|r| r.origin == origin).count()
    }
}

/// A source view with everything training may read from it.
#[derive(Debug, Clone)]
pub struct SourceData {
    pub pose: Pose,
    pub rgb: RgbImage,
    pub labels: LabelMap,
    pub mono_depth: DepthMap,
}

/// What novel rays supervise.
#[derive(Debug, Clone)]
pub enum NovelTargets {
    /// Teacher labels; rays are drawn from the support of `valid`.
    Labels { labels: LabelMap, valid: Mask },
    /// Color targets at the covered pixels.
    Colors { rgb: RgbImage, covered: Mask, provenance: Provenance },
}

#[derive(Debug, Clone)]
pub struct NovelData {
    pub pose: Pose,
    pub targets: NovelTargets,
}

impl NovelData {
    fn support(&self) -> &Mask {
        match &self.targets {
            NovelTargets::Labels { valid, .. } => valid,
            NovelTargets::Colors { covered, .. } => covered,
        }
    }
}

/// Rays per stream in each batch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BatchPlan {
    pub source_rays: usize,
    pub novel_rays: usize,
    pub patch_width: usize,
    pub patch_height: usize,
    pub patches: usize,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self { source_rays: 1024, novel_rays: 1024, patch_width: 32, patch_height: 16, patches: 2 }
    }
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.source_rays == 0 {
            return Err(crate::Error::Config("source_rays must be positive".into()));
        }
        if self.patches > 0 && self.patch_width * self.patch_height < 2 {
            return Err(crate::Error::Config("mono patches need at least two pixels".into()));
        }
        Ok(())
    }
}

/// Draws batches from fixed source and novel data.
pub struct BatchSampler {
    pub intrinsics: Intrinsics,
    pub sampling: SamplingConfig,
    pub plan: BatchPlan,
    sources: Vec<SourceData>,
    novels: Vec<NovelData>,
    /// Per novel view, the pixel indices rays may be drawn from.
    supports: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(intrinsics: Intrinsics, sampling: SamplingConfig, plan: BatchPlan, sources: Vec<SourceData>, novels: Vec<NovelData>) -> Result<Self> {
        plan.validate()?;
        if sources.is_empty() {
            return Err(contract("training needs at least one source view"));
        }
        let (w, h) = (intrinsics.width, intrinsics.height);
        for s in &sources {
            for (mw, mh) in [(s.rgb.width, s.rgb.height), (s.labels.width, s.labels.height), (s.mono_depth.width, s.mono_depth.height)] {
                if (mw, mh) != (w, h) {
                    return Err(contract("source maps do not match the camera"));
                }
            }
        }
        if plan.patches > 0 && (plan.patch_width > w || plan.patch_height > h) {
            return Err(crate::Error::Config("mono patch larger than the image".into()));
        }
        let supports: Vec<Vec<usize>> = novels
            .iter()
            .map(|n| n.support().data.iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| i).collect())
            .collect();
        Ok(Self { intrinsics, sampling, plan, sources, novels, supports })
    }

    pub fn novel_support_size(&self) -> usize {
        self.supports.iter().map(Vec::len).sum()
    }

    fn ray(&self, pose: &Pose, x: usize, y: usize) -> Ray {
        pixel_ray(&self.intrinsics, pose, x, y, &self.sampling)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<RayBatch> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let color_ablation = self.novels.iter().any(|n| matches!(n.targets, NovelTargets::Colors { .. }));
        let mut batch = if color_ablation { RayBatch::allowing_novel_rgb() } else { RayBatch::new() };
        for _ in 0..self.plan.source_rays {
            let s = self.sources.choose(rng).expect("non-empty");
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            batch.push(TrainRay::source(self.ray(&s.pose, x, y), *s.rgb.get(x, y), *s.labels.get(x, y)))?;
        }
        for _ in 0..self.plan.patches {
            let s = self.sources.choose(rng).expect("non-empty");
            let x0 = rng.random_range(0..=w - self.plan.patch_width);
            let y0 = rng.random_range(0..=h - self.plan.patch_height);
            let mut patch = MonoPatch { rays: vec![], target: vec![] };
            for y in y0..y0 + self.plan.patch_height {
                for x in x0..x0 + self.plan.patch_width {
                    patch.rays.push(self.ray(&s.pose, x, y));
                    patch.target.push(*s.mono_depth.get(x, y));
                }
            }
            batch.push_patch(patch)?;
        }
        let eligible: Vec<usize> = (0..self.novels.len()).filter(|&i| !self.supports[i].is_empty()).collect();
        if !eligible.is_empty() {
            for _ in 0..self.plan.novel_rays {
                let i = *eligible.choose(rng).expect("non-empty");
                let idx = *self.supports[i].choose(rng).expect("non-empty");
                let (x, y) = (idx % w, idx / w);
                let n = &self.novels[i];
                let ray = self.ray(&n.pose, x, y);
                batch.push(match &n.targets {
                    NovelTargets::Labels { labels, .. } => TrainRay::novel_label(ray, *labels.get(x, y), 1.0),
                    NovelTargets::Colors { rgb, provenance, .. } => TrainRay::novel_rgb(ray, *rgb.get(x, y), *provenance),
                })?;
            }
        }
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::image::Map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ray() -> Ray {
        Ray { origin: Vec3::zeros(), direction: Vec3::z(), t_near: 0.5, t_far: 4.0, z_per_t: 1.0 }
    }

    #[test]
    fn quarantine_rules() {
        let mut b = RayBatch::new();
        b.push(TrainRay::source(ray(), [0.1; 3], 1)).unwrap();
        b.push(TrainRay::novel_label(ray(), 1, 0.0)).unwrap();
        assert!(b.push(TrainRay::novel_rgb(ray(), [0.0; 3], Provenance::TeacherRender)).is_err());
        let mut oracle = TrainRay::novel_label(ray(), 2, 1.0);
        oracle.sem.as_mut().unwrap().provenance = Provenance::Oracle;
        assert!(b.push(oracle).is_err());
        let mut stolen = TrainRay::novel_label(ray(), 2, 1.0);
        stolen.sem.as_mut().unwrap().provenance = Provenance::SourceObservation;
        assert!(b.push(stolen).is_err());
        assert!(b.push(TrainRay::novel_label(ray(), 2, 0.5)).is_err());
        let mut half = TrainRay::source(ray(), [0.1; 3], 1);
        half.sem_weight = 0.0;
        assert!(b.push(half).is_err());
        let mut ab = RayBatch::allowing_novel_rgb();
        ab.push(TrainRay::novel_rgb(ray(), [0.0; 3], Provenance::SourceWarp)).unwrap();
        assert!(ab.push(TrainRay::novel_rgb(ray(), [0.0; 3], Provenance::Oracle)).is_err());
        assert_eq!(b.count(RayOrigin::Source), 1);
        assert_eq!(b.count(RayOrigin::Novel), 1);
    }

    #[test]
    fn sampler_draws_novel_rays_from_valid_support() {
        let k = Intrinsics::from_fov(8, 8, 60.0).unwrap();
        let src = SourceData {
            pose: Pose::identity(),
            rgb: Map::filled(8, 8, [0.5; 3]),
            labels: Map::filled(8, 8, 1),
            mono_depth: Map::filled(8, 8, 2.0),
        };
        let mut valid = Map::filled(8, 8, false);
        valid.set(3, 5, true);
        let nov = NovelData { pose: Pose::identity(), targets: NovelTargets::Labels { labels: Map::filled(8, 8, 2), valid } };
        let plan = BatchPlan { source_rays: 5, novel_rays: 7, patch_width: 4, patch_height: 2, patches: 1 };
        let sampler = BatchSampler::new(k, SamplingConfig::default(), plan, vec![src], vec![nov]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sampler.sample(&mut rng).unwrap();
        assert_eq!(b.count(RayOrigin::Source), 5);
        assert_eq!(b.count(RayOrigin::Novel), 7);
        assert_eq!(b.patches()[0].rays.len(), 8);
        let expected = pixel_ray(&k, &Pose::identity(), 3, 5, &SamplingConfig::default());
        for r in b.rays().iter().filter(|r| r.origin == RayOrigin::Novel) {
            assert_eq!(r.ray, expected);
            assert_eq!(r.sem.unwrap().value, 2);
        }
    }
}
