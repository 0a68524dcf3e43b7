//! The `s3` binary: stage commands, artifact layout, and exit codes.

use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
seed = 0
[scene]
width = 16
height = 16
primitives = 4
[poses]
sources = 3
novel = 4
test = 2
[field]
width = 8
codebook_size = 4
num_heads = 2
[field.encoding]
l_pos = 2
l_dir = 1
[sampling]
n_samples = 8
[teacher]
iterations = 3
[teacher.batch]
source_rays = 16
patch_width = 4
patch_height = 4
[student]
iterations = 3
[student.batch]
source_rays = 16
novel_rays = 16
patch_width = 4
patch_height = 4
"#;

fn s3(args: &[&str], config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_s3"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

#[test]
fn stage_commands_fill_the_artifact_tree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    for stage in ["build-scene", "train-teacher", "render-novel", "verify", "train-student", "evaluate"] {
        assert_eq!(s3(&[stage], &cfg, &out), 0, "{stage}");
    }
    assert_eq!(s3(&["run-all", "--mode", "ablation_warped_rgb"], &cfg, &out), 0);
    for sub in ["scene", "teacher", "novel", "validity", "student", "reports"] {
        assert!(out.join(sub).is_dir(), "{sub}");
    }
    assert!(out.join("scene/source_00.ppm").is_file());
    assert!(out.join("novel/novel_03.lgts").is_file());
    assert!(out.join("validity/validity_00.pbm").is_file());
    assert!(out.join("reports/student_full.json").is_file());
    let table = std::fs::read_to_string(out.join("reports/ablation.txt")).unwrap();
    assert!(table.contains("+feature") && table.contains("warped RGB"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[scene]\nclasses = 1\n").unwrap();
    assert_eq!(s3(&["build-scene"], &cfg, &dir.path().join("a")), 2);
    std::fs::write(&cfg, "bogus_key = 1\n").unwrap();
    assert_eq!(s3(&["build-scene"], &cfg, &dir.path().join("b")), 2);
    std::fs::write(&cfg, TINY).unwrap();
    assert_eq!(s3(&["run-all", "--mode", "no_such_mode"], &cfg, &dir.path().join("c")), 2);
    assert_eq!(s3(&["build-scene"], &dir.path().join("missing.toml"), &dir.path().join("d")), 2);
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    let text = TINY.replace("[teacher]\niterations = 3", "[teacher]\niterations = 20\nlr_init = 1e300\nlr_final = 1e300");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("run");
    assert_eq!(s3(&["build-scene"], &cfg, &out), 0);
    assert_eq!(s3(&["train-teacher"], &cfg, &out), 3);
}
