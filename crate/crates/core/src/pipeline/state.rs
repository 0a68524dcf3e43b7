use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "mode", rename_all = "snake_case")]
pub enum Stage {
    SceneBuilt,
    TeacherTrained,
    NovelRendered,
    Verified,
    StudentTrained(Mode),
    Evaluated(Mode),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::SceneBuilt => f.write_str("build-scene"),
            Stage::TeacherTrained => f.write_str("train-teacher"),
            Stage::NovelRendered => f.write_str("render-novel"),
            Stage::Verified => f.write_str("verify"),
            Stage::StudentTrained(m) => write!(f, "train-student[{m}]"),
            Stage::Evaluated(m) => write!(f, "evaluate[{m}]"),
        }
    }
}

/// Completed stages of one experiment directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    /// Hash of the configuration with the mode cleared, so every mode of one
    /// experiment shares a directory.
    pub fingerprint: String,
    pub completed: Vec<Stage>,
}

impl PipelineState {
    pub fn new(fingerprint: String) -> Self {
        Self { fingerprint, completed: vec![] }
    }

    pub fn is_complete(&self, stage: &Stage) -> bool {
        self.completed.contains(stage)
    }

    /// Records `stage`, dropping every completed stage that was built on a
    /// previous run of it.
    pub fn complete(&mut self, stage: Stage) {
        self.completed.retain(|s| *s != stage && !s.depends_on(&stage));
        self.completed.push(stage);
    }
}

impl Stage {
    fn parents(&self) -> Vec<Stage> {
        match *self {
            Stage::SceneBuilt => vec![],
            Stage::TeacherTrained => vec![Stage::SceneBuilt],
            Stage::NovelRendered => vec![Stage::TeacherTrained],
            Stage::Verified => vec![Stage::NovelRendered],
            Stage::StudentTrained(_) => vec![Stage::Verified],
            Stage::Evaluated(Mode::TeacherOnly) => vec![Stage::TeacherTrained, Stage::Verified],
            Stage::Evaluated(m) => vec![Stage::StudentTrained(m)],
        }
    }

    /// Whether `self` transitively consumes the output of `other`.
    pub fn depends_on(&self, other: &Stage) -> bool {
        self.parents().iter().any(|p| p == other || p.depends_on(other))
    }
}

pub(crate) fn fingerprint(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.mode = Mode::StudentFull;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in c.to_toml().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Exclusive hold on an experiment directory, released on drop.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => {
                fs::write(&path, std::process::id().to_string())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
