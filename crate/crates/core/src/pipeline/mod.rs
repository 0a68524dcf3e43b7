//! End-to-end experiment: scene, teacher, novel renders, verification,
//! student, evaluation.
//!
//! Every stage reads its inputs from the experiment directory and writes its
//! outputs there before recording itself in `state.json`, so any stage can be
//! rerun or resumed from disk alone.

mod config;
mod poses;
mod state;

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{de::DeserializeOwned, Serialize};

pub use config::{ExperimentConfig, Mode, PoseConfig, SceneConfig};
pub use poses::{generate_poses, PoseSet};
pub use state::{LockGuard, PipelineState, Stage};

use crate::bdv::{validity_map, warp_rgb_multi, ViewBundle};
use crate::error::{contract, Error, Result};
use crate::field::{load_checkpoint, save_checkpoint, FieldConfig, FieldParams};
use crate::geometry::{Intrinsics, Pose};
use crate::image::{LabelMap, Map, Mask, RgbImage};
use crate::io::{read_depth, read_pbm, read_pgm, read_ppm, write_bytes, write_depth, write_logits, write_pbm, write_pgm, write_ppm};
use crate::metrics::{psnr, semantic_accuracy, ssim, validity_report, EvalReport, ViewMetrics};
use crate::render::render_view;
use crate::scene::{generate_scene_with, pseudo_mono_depth, SyntheticScene};
use crate::training::{train, write_history_csv, BatchSampler, NovelData, NovelTargets, Provenance, SourceData, TrainConfig};

/// Modes in the order of the ablation table.
pub const TABLE_ORDER: [Mode; 5] = [
    Mode::TeacherOnly,
    Mode::StudentSupervisionLevel,
    Mode::StudentFull,
    Mode::AblationNoVerification,
    Mode::AblationNoRenderedLabels,
];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, serde_json::to_string_pretty(value).expect("serializable").as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = crate::io::read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// An experiment directory owned by this process.
pub struct Pipeline {
    pub config: ExperimentConfig,
    out: PathBuf,
    _lock: LockGuard,
}

/// A view as stored on disk.
struct StoredView {
    rgb: RgbImage,
    labels: LabelMap,
    depth: Map<f64>,
}

impl Pipeline {
    /// Opens (or creates) `out` for `config`. Fails if another process holds
    /// the directory or if it was created by a different configuration.
    pub fn open(config: ExperimentConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(out)?;
        let lock = LockGuard::acquire(out)?;
        let fingerprint = state::fingerprint(&config);
        let state_path = out.join("state.json");
        if state_path.exists() {
            let state: PipelineState = read_json(&state_path)?;
            if state.fingerprint != fingerprint {
                return Err(Error::Config(format!("{} holds an experiment with a different configuration", out.display())));
            }
        } else {
            write_json(&state_path, &PipelineState::new(fingerprint))?;
        }
        write_bytes(&out.join("config.toml"), config.to_toml().as_bytes())?;
        Ok(Self { config, out: out.to_path_buf(), _lock: lock })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn state(&self) -> Result<PipelineState> {
        read_json(&self.out.join("state.json"))
    }

    fn mark(&self, stage: Stage) -> Result<()> {
        let mut s = self.state()?;
        s.complete(stage);
        write_json(&self.out.join("state.json"), &s)
    }

    fn require(&self, stage: Stage) -> Result<()> {
        if self.state()?.is_complete(&stage) {
            Ok(())
        } else {
            Err(contract(format!("stage {stage} has not completed")))
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let s = &self.config.scene;
        Intrinsics::from_fov(s.width, s.height, s.fov_deg).expect("validated config")
    }

    fn provenance(&self) -> String {
        self.config.to_toml()
    }

    fn view_path(&self, dir: &str, stem: &str, ext: &str) -> PathBuf {
        self.dir(dir).join(format!("{stem}.{ext}"))
    }

    fn write_view(&self, dir: &str, stem: &str, rgb: &RgbImage, labels: &LabelMap, depth: &Map<f64>) -> Result<()> {
        write_ppm(&self.view_path(dir, stem, "ppm"), rgb)?;
        write_pgm(&self.view_path(dir, stem, "pgm"), labels)?;
        write_depth(&self.view_path(dir, stem, "dpth"), depth)
    }

    fn read_view(&self, dir: &str, stem: &str) -> Result<StoredView> {
        Ok(StoredView {
            rgb: read_ppm(&self.view_path(dir, stem, "ppm"))?,
            labels: read_pgm(&self.view_path(dir, stem, "pgm"))?,
            depth: read_depth(&self.view_path(dir, stem, "dpth"))?,
        })
    }

    pub fn poses(&self) -> Result<PoseSet> {
        read_json(&self.dir("scene").join("poses.json"))
    }

    pub fn scene(&self) -> Result<SyntheticScene> {
        read_json(&self.dir("scene").join("scene.json"))
    }

    /// Scene, GT source views with pseudo-mono depth, GT test views, and
    /// quarantined GT for the novel poses.
    pub fn build_scene(&self) -> Result<()> {
        let c = &self.config;
        let scene = generate_scene_with(c.derive_seed("scene"), c.scene.primitives, c.scene.classes, &c.scene.layout)?;
        let poses = generate_poses(&c.poses, c.derive_seed("poses"))?;
        let k = self.intrinsics();
        write_json(&self.dir("scene").join("scene.json"), &scene)?;
        write_json(&self.dir("scene").join("poses.json"), &poses)?;
        for (i, pose) in poses.sources.iter().enumerate() {
            let v = scene.render_gt_view(pose, &k);
            if !v.labels.data.iter().any(|&l| l != scene.background_class) {
                return Err(Error::Config(format!("source view {i} sees no primitive")));
            }
            let mono = pseudo_mono_depth(&v, c.derive_seed(&format!("mono{i}")), c.scene.mono_scale, c.scene.mono_shift, c.scene.mono_noise)?;
            self.write_view("scene", &format!("source_{i:02}"), &v.rgb, &v.labels, &v.depth)?;
            write_depth(&self.view_path("scene", &format!("source_{i:02}_mono"), "dpth"), &mono)?;
        }
        for (i, pose) in poses.test.iter().enumerate() {
            let v = scene.render_gt_view(pose, &k);
            self.write_view("scene", &format!("test_{i:02}"), &v.rgb, &v.labels, &v.depth)?;
        }
        for (i, pose) in poses.novel.iter().enumerate() {
            let v = scene.render_gt_view(pose, &k);
            self.write_view("scene/quarantine", &format!("novel_{i:02}"), &v.rgb, &v.labels, &v.depth)?;
        }
        self.mark(Stage::SceneBuilt)
    }

    fn source_data(&self, poses: &PoseSet) -> Result<Vec<SourceData>> {
        (0..poses.sources.len())
            .map(|i| {
                let v = self.read_view("scene", &format!("source_{i:02}"))?;
                Ok(SourceData {
                    pose: poses.sources[i],
                    rgb: v.rgb,
                    labels: v.labels,
                    mono_depth: read_depth(&self.view_path("scene", &format!("source_{i:02}_mono"), "dpth"))?,
                })
            })
            .collect()
    }

    fn field_config(&self, mode: Mode) -> FieldConfig {
        FieldConfig {
            use_codebook: mode.uses_codebook(),
            detach_semantics: mode == Mode::TeacherOnly,
            ..self.config.field.clone()
        }
    }

    fn run_training(&self, mode: Mode, sampler: BatchSampler, train_cfg: &TrainConfig, dir: &Path) -> Result<FieldParams> {
        let init = FieldParams::init(self.config.derive_seed("init"), &self.field_config(mode))?;
        let stream = if mode == Mode::TeacherOnly { "teacher-train" } else { "student-train" };
        let cfg = TrainConfig { seed: self.config.derive_seed(stream), ..train_cfg.clone() };
        let prov = self.provenance();
        let outcome = train(init, &cfg, &self.config.loss, &self.config.sampling, |rng| sampler.sample(rng), |it, p| {
            save_checkpoint(&dir.join(format!("iter_{it:06}.ckpt")), p, &prov)
        })?;
        write_history_csv(&dir.join("loss.csv"), &outcome.history)?;
        Ok(outcome.params)
    }

    pub fn train_teacher(&self) -> Result<()> {
        self.require(Stage::SceneBuilt)?;
        let poses = self.poses()?;
        let sampler = BatchSampler::new(
            self.intrinsics(),
            self.config.sampling.clone(),
            self.config.teacher.batch,
            self.source_data(&poses)?,
            vec![],
        )?;
        info!("training teacher");
        let params = self.run_training(Mode::TeacherOnly, sampler, &self.config.teacher, &self.dir("teacher"))?;
        save_checkpoint(&self.dir("teacher").join("teacher.ckpt"), &params, &self.provenance())?;
        self.mark(Stage::TeacherTrained)
    }

    fn checkpoint_path(&self, mode: Mode) -> PathBuf {
        if mode == Mode::TeacherOnly {
            self.dir("teacher").join("teacher.ckpt")
        } else {
            self.dir("student").join(mode.name()).join("student.ckpt")
        }
    }

    pub fn load_model(&self, mode: Mode) -> Result<FieldParams> {
        Ok(load_checkpoint(&self.checkpoint_path(mode))?.params)
    }

    /// Teacher renders of every novel pose, plus its source-view renders
    /// (whose depths feed verification).
    pub fn render_novel(&self) -> Result<()> {
        self.require(Stage::TeacherTrained)?;
        let teacher = self.load_model(Mode::TeacherOnly)?;
        let poses = self.poses()?;
        let k = self.intrinsics();
        for (j, pose) in poses.novel.iter().enumerate() {
            let v = render_view(&teacher, pose, &k, &self.config.sampling)?;
            let stem = format!("novel_{j:02}");
            self.write_view("novel", &stem, &v.rgb, &v.labels, &v.depth)?;
            write_logits(&self.view_path("novel", &stem, "lgts"), &v.logits)?;
        }
        for (i, pose) in poses.sources.iter().enumerate() {
            let v = render_view(&teacher, pose, &k, &self.config.sampling)?;
            self.write_view("novel", &format!("source_{i:02}"), &v.rgb, &v.labels, &v.depth)?;
        }
        self.mark(Stage::NovelRendered)
    }

    /// Source bundles: observed colors and labels with teacher-rendered depth.
    fn source_bundles(&self, poses: &PoseSet) -> Result<Vec<ViewBundle>> {
        let bg = self.scene()?.background_class;
        (0..poses.sources.len())
            .map(|i| {
                let gt = self.read_view("scene", &format!("source_{i:02}"))?;
                Ok(ViewBundle {
                    pose: poses.sources[i],
                    depth: read_depth(&self.view_path("novel", &format!("source_{i:02}"), "dpth"))?,
                    labels: gt.labels,
                    rgb: Some(gt.rgb),
                    background_class: Some(bg),
                })
            })
            .collect()
    }

    fn novel_bundle(&self, poses: &PoseSet, j: usize) -> Result<ViewBundle> {
        let v = self.read_view("novel", &format!("novel_{j:02}"))?;
        Ok(ViewBundle { pose: poses.novel[j], depth: v.depth, labels: v.labels, rgb: Some(v.rgb), background_class: None })
    }

    /// Validity map per novel view, plus the warped-color images used by the
    /// warped-RGB ablation.
    pub fn verify(&self) -> Result<()> {
        self.require(Stage::NovelRendered)?;
        let poses = self.poses()?;
        let k = self.intrinsics();
        let sources = self.source_bundles(&poses)?;
        for j in 0..poses.novel.len() {
            let nov = self.novel_bundle(&poses, j)?;
            let v = validity_map(&sources, &nov, &k)?;
            write_pbm(&self.dir("validity").join(format!("validity_{j:02}.pbm")), &v.mask)?;
            let (warped, covered) = warp_rgb_multi(&sources, &poses.novel[j], &k)?;
            write_ppm(&self.dir("validity").join(format!("warped_{j:02}.ppm")), &warped)?;
            write_pbm(&self.dir("validity").join(format!("warped_{j:02}.pbm")), &covered)?;
        }
        self.mark(Stage::Verified)
    }

    pub fn validity(&self, j: usize) -> Result<Mask> {
        read_pbm(&self.dir("validity").join(format!("validity_{j:02}.pbm")))
    }

    fn novel_data(&self, mode: Mode, poses: &PoseSet) -> Result<Vec<NovelData>> {
        let k = self.intrinsics();
        let all = || Map::filled(k.width, k.height, true);
        let mut out = Vec::new();
        for (j, pose) in poses.novel.iter().enumerate() {
            let stem = format!("novel_{j:02}");
            let targets = match mode {
                Mode::TeacherOnly | Mode::AblationNoRenderedLabels | Mode::AblationCodebookOnly => continue,
                Mode::StudentSupervisionLevel | Mode::StudentFull => {
                    NovelTargets::Labels { labels: read_pgm(&self.view_path("novel", &stem, "pgm"))?, valid: self.validity(j)? }
                }
                Mode::AblationNoVerification => NovelTargets::Labels { labels: read_pgm(&self.view_path("novel", &stem, "pgm"))?, valid: all() },
                Mode::AblationRenderedRgb => NovelTargets::Colors {
                    rgb: read_ppm(&self.view_path("novel", &stem, "ppm"))?,
                    covered: all(),
                    provenance: Provenance::TeacherRender,
                },
                Mode::AblationWarpedRgb => NovelTargets::Colors {
                    rgb: read_ppm(&self.dir("validity").join(format!("warped_{j:02}.ppm")))?,
                    covered: read_pbm(&self.dir("validity").join(format!("warped_{j:02}.pbm")))?,
                    provenance: Provenance::SourceWarp,
                },
            };
            out.push(NovelData { pose: *pose, targets });
        }
        Ok(out)
    }

    pub fn train_student(&self, mode: Mode) -> Result<()> {
        if !mode.trains_student() {
            return Err(Error::Config(format!("mode {mode} trains no student")));
        }
        self.require(Stage::Verified)?;
        let poses = self.poses()?;
        let sampler = BatchSampler::new(
            self.intrinsics(),
            self.config.sampling.clone(),
            self.config.student.batch,
            self.source_data(&poses)?,
            self.novel_data(mode, &poses)?,
        )?;
        info!("training student ({mode}), {} supervised novel pixels", sampler.novel_support_size());
        let dir = self.dir("student").join(mode.name());
        let params = self.run_training(mode, sampler, &self.config.student, &dir)?;
        save_checkpoint(&self.checkpoint_path(mode), &params, &self.provenance())?;
        self.mark(Stage::StudentTrained(mode))
    }

    fn view_metrics(&self, model: &FieldParams, pose: &Pose, gt: &StoredView, view: usize) -> Result<ViewMetrics> {
        let r = render_view(model, pose, &self.intrinsics(), &self.config.sampling)?;
        Ok(ViewMetrics {
            view,
            psnr: psnr(&r.rgb, &gt.rgb)?,
            ssim: ssim(&r.rgb, &gt.rgb)?,
            sem_accuracy: semantic_accuracy(&r.labels, &gt.labels, None)?,
        })
    }

    /// Held-out metrics for the model trained under `mode`, with its
    /// source-view PSNR and pooled validity statistics of the novel set.
    pub fn evaluate(&self, mode: Mode) -> Result<EvalReport> {
        let trained = if mode == Mode::TeacherOnly { Stage::TeacherTrained } else { Stage::StudentTrained(mode) };
        self.require(trained)?;
        let model = self.load_model(mode)?;
        let poses = self.poses()?;
        let views = (0..poses.test.len())
            .map(|i| self.view_metrics(&model, &poses.test[i], &self.read_view("scene", &format!("test_{i:02}"))?, i))
            .collect::<Result<Vec<_>>>()?;
        let mut report = EvalReport::from_views(mode.name(), views)?;
        let source = (0..poses.sources.len())
            .map(|i| Ok(self.view_metrics(&model, &poses.sources[i], &self.read_view("scene", &format!("source_{i:02}"))?, i)?.psnr))
            .collect::<Result<Vec<f64>>>()?;
        report.source_psnr = Some(source.iter().sum::<f64>() / source.len() as f64);
        if self.state()?.is_complete(&Stage::Verified) {
            report.validity = Some(self.pooled_validity(&poses)?);
        }
        let reports = self.dir("reports");
        write_bytes(&reports.join(format!("{}.json", mode.name())), report.to_json().as_bytes())?;
        write_bytes(&reports.join(format!("{}.txt", mode.name())), report.table().as_bytes())?;
        self.mark(Stage::Evaluated(mode))?;
        Ok(report)
    }

    /// Validity precision and recall pooled over every novel view, scored
    /// against the quarantined ground truth.
    pub fn pooled_validity(&self, poses: &PoseSet) -> Result<crate::metrics::ValidityReport> {
        let k = self.intrinsics();
        let (mut mask, mut labels, mut gt) = (vec![], vec![], vec![]);
        for j in 0..poses.novel.len() {
            mask.extend(self.validity(j)?.data);
            labels.extend(read_pgm(&self.view_path("novel", &format!("novel_{j:02}"), "pgm"))?.data);
            gt.extend(read_pgm(&self.view_path("scene/quarantine", &format!("novel_{j:02}"), "pgm"))?.data);
        }
        let h = k.height * poses.novel.len();
        validity_report(&Map::from_vec(k.width, h, mask)?, &Map::from_vec(k.width, h, labels)?, &Map::from_vec(k.width, h, gt)?)
    }

    pub fn report(&self, mode: Mode) -> Result<EvalReport> {
        read_json(&self.dir("reports").join(format!("{}.json", mode.name())))
    }

    /// Runs every stage not yet recorded as complete, then evaluates `mode`.
    pub fn run_all(&self, mode: Mode) -> Result<EvalReport> {
        let state = self.state()?;
        let mut todo: Vec<(Stage, Box<dyn Fn() -> Result<()> + '_>)> = vec![
            (Stage::SceneBuilt, Box::new(|| self.build_scene())),
            (Stage::TeacherTrained, Box::new(|| self.train_teacher())),
        ];
        if mode != Mode::TeacherOnly {
            todo.push((Stage::NovelRendered, Box::new(|| self.render_novel())));
            todo.push((Stage::Verified, Box::new(|| self.verify())));
            todo.push((Stage::StudentTrained(mode), Box::new(move || self.train_student(mode))));
        }
        for (stage, run) in todo {
            if state.is_complete(&stage) {
                info!("skipping completed stage {stage}");
            } else {
                info!("running stage {stage}");
                run()?;
            }
        }
        if state.is_complete(&Stage::Evaluated(mode)) {
            return self.report(mode);
        }
        self.evaluate(mode)
    }

    /// Ablation table over whatever reports exist, in the canonical row order
    /// followed by the remaining modes.
    pub fn ablation_table(&self) -> Result<String> {
        let mut rows = Vec::new();
        let extra = Mode::ALL.into_iter().filter(|m| !TABLE_ORDER.contains(m));
        for mode in TABLE_ORDER.into_iter().chain(extra) {
            if let Ok(r) = self.report(mode) {
                rows.push((mode, r));
            }
        }
        let text = format_ablation_table(&rows);
        write_bytes(&self.dir("reports").join("ablation.txt"), text.as_bytes())?;
        Ok(text)
    }
}

/// Table of median held-out PSNR, mean SSIM, and semantic accuracy.
pub fn format_ablation_table(rows: &[(Mode, EvalReport)]) -> String {
    let mut s = String::from("| row | mode | median PSNR | SSIM | sem acc |\n|---|---|---|---|---|\n");
    for (mode, r) in rows {
        s += &format!("| {} | {} | {:.2} | {:.4} | {:.4} |\n", mode.row_label(), mode.name(), r.median_psnr, r.ssim, r.sem_accuracy);
    }
    s
}
