use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::render::SamplingConfig;
use crate::scene::SceneLayout;
use crate::training::{LossWeights, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TeacherOnly,
    StudentSupervisionLevel,
    StudentFull,
    AblationNoVerification,
    AblationNoRenderedLabels,
    AblationRenderedRgb,
    AblationWarpedRgb,
    AblationCodebookOnly,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::TeacherOnly,
        Mode::StudentSupervisionLevel,
        Mode::StudentFull,
        Mode::AblationNoVerification,
        Mode::AblationNoRenderedLabels,
        Mode::AblationRenderedRgb,
        Mode::AblationWarpedRgb,
        Mode::AblationCodebookOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::TeacherOnly => "teacher_only",
            Mode::StudentSupervisionLevel => "student_supervision_level",
            Mode::StudentFull => "student_full",
            Mode::AblationNoVerification => "ablation_no_verification",
            Mode::AblationNoRenderedLabels => "ablation_no_rendered_labels",
            Mode::AblationRenderedRgb => "ablation_rendered_rgb",
            Mode::AblationWarpedRgb => "ablation_warped_rgb",
            Mode::AblationCodebookOnly => "ablation_codebook_only",
        }
    }

    /// Row label in the ablation table.
    pub fn row_label(self) -> &'static str {
        match self {
            Mode::TeacherOnly => "baseline",
            Mode::StudentSupervisionLevel => "+supervision",
            Mode::StudentFull => "+feature",
            Mode::AblationNoVerification => "w/o verification",
            Mode::AblationNoRenderedLabels => "w/o rendered labels",
            Mode::AblationRenderedRgb => "rendered RGB",
            Mode::AblationWarpedRgb => "warped RGB",
            Mode::AblationCodebookOnly => "codebook only",
        }
    }

    pub fn trains_student(self) -> bool {
        self != Mode::TeacherOnly
    }

    pub fn uses_codebook(self) -> bool {
        !matches!(self, Mode::TeacherOnly | Mode::StudentSupervisionLevel)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub primitives: usize,
    pub classes: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub layout: SceneLayout,
    /// Pseudo monocular depth: `scale * z + shift + N(0, noise)`.
    pub mono_scale: f64,
    pub mono_shift: f64,
    pub mono_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            primitives: 8,
            classes: 5,
            width: 64,
            height: 64,
            fov_deg: 90.0,
            layout: SceneLayout::default(),
            mono_scale: 0.5,
            mono_shift: 0.3,
            mono_noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    pub sources: usize,
    pub novel: usize,
    pub test: usize,
    /// Radius of the camera ring around the scene center.
    pub ring_radius: f64,
    /// Positional jitter (world units) applied to every generated pose.
    pub jitter: f64,
    /// Yaw jitter of source poses, degrees.
    pub yaw_jitter_deg: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self { sources: 6, novel: 60, test: 12, ring_radius: 0.3, jitter: 0.05, yaw_jitter_deg: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub mode: Mode,
    pub scene: SceneConfig,
    pub poses: PoseConfig,
    /// Shared by teacher and student; the pipeline sets the routing and
    /// codebook switches per stage and mode.
    pub field: FieldConfig,
    pub sampling: SamplingConfig,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub loss: LossWeights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::StudentFull,
            scene: SceneConfig::default(),
            poses: PoseConfig::default(),
            field: FieldConfig::default(),
            sampling: SamplingConfig::default(),
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.scene;
        if s.primitives == 0 || !(2..=255).contains(&s.classes) {
            return bad("scene needs primitives and 2..=255 classes".into());
        }
        if s.width == 0 || s.height == 0 || !(s.fov_deg > 0.0 && s.fov_deg < 180.0) {
            return bad("invalid image size or field of view".into());
        }
        if !(s.mono_scale > 0.0 && s.mono_noise >= 0.0) {
            return bad("mono depth scale must be positive and noise non-negative".into());
        }
        if self.poses.sources < 2 {
            return bad("verification needs at least two source views".into());
        }
        if self.poses.test == 0 {
            return bad("need at least one test pose".into());
        }
        if self.field.num_classes != s.classes {
            return bad(format!("field has {} classes, scene has {}", self.field.num_classes, s.classes));
        }
        if (self.sampling.t_near, self.sampling.t_far) != (s.layout.t_near, s.layout.t_far) {
            return bad("sampling bounds must match the scene's t_near and t_far".into());
        }
        self.field.validate()?;
        self.sampling.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.loss.validate()
    }

    /// Independent seed for a named stream.
    pub fn derive_seed(&self, stream: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325 ^ self.seed.wrapping_mul(0x9e3779b97f4a7c15);
        for b in stream.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}
