//! End-to-end checks of the command-line binary: flag mapping, exit codes,
//! and artifact emission, all on the fast toy domain.

use std::path::{Path, PathBuf};
use std::process::Command;

use dfkd::distill::EpochReport;
use dfkd::losses::LossBreakdown;
use dfkd::metrics::MetricsWriter;
use dfkd::persist;
use dfkd::toy2d;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dfkd"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "dfkd-cli-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .subsec_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Train the tiny 2-d teacher and save it as a regular checkpoint.
fn toy_teacher_ckpt(dir: &Path) -> PathBuf {
    let scene = toy2d::make_scene(3);
    let (teacher, _) = toy2d::train_toy_teacher(&scene, 3).unwrap();
    let path = dir.join("toy-teacher.nnt");
    persist::save_model(&path, &teacher, None, Default::default()).unwrap();
    path
}

#[test]
fn toy_demo_emits_an_image_per_epoch_and_summarizes_recalls() {
    let dir = tmp("toy");
    let out = bin()
        .args(["toy2d", "--no-bank", "--epochs", "2", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("epoch_001.png").is_file());
    assert!(dir.join("epoch_002.png").is_file());
    assert!(dir.join("recalls.tsv").is_file());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final per-class recalls"), "{stdout}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn distill_runs_a_config_end_to_end_and_resumes_politely() {
    let dir = tmp("distill");
    let teacher = toy_teacher_ckpt(&dir);
    let run_dir = dir.join("run");
    let out = bin()
        .args(["distill", "--config"])
        .arg(repo_path("configs/toy2d.toml"))
        .arg("--teacher")
        .arg(&teacher)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("run.toml").is_file());
    assert!(run_dir.join("metrics.log").is_file());
    assert!(run_dir.join("checkpoints/student.nnt").is_file());
    assert!(String::from_utf8_lossy(&out.stdout).contains("finished at epoch 40"));

    // Invoking the same run again finds it complete and succeeds as a no-op.
    let again = bin()
        .args(["distill", "--config"])
        .arg(repo_path("configs/toy2d.toml"))
        .arg("--teacher")
        .arg(&teacher)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("already covers"));

    // Deleting a replay batch behind the run's back must fail resumption
    // with an error that names the missing file.
    let victim = std::fs::read_dir(run_dir.join("bank"))
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|x| x == "nnt"))
        .expect("completed run should hold replay batches");
    std::fs::remove_file(&victim).unwrap();
    let broken = bin()
        .args(["distill", "--config"])
        .arg(repo_path("configs/toy2d.toml"))
        .arg("--teacher")
        .arg(&teacher)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(broken.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&broken.stderr);
    let name = victim.file_name().unwrap().to_string_lossy();
    assert!(stderr.contains(name.as_ref()), "{stderr}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn contradictory_generator_flags_are_a_usage_error() {
    let dir = tmp("flags");
    let out = bin()
        .args(["distill", "--config"])
        .arg(repo_path("configs/toy2d.toml"))
        .args(["--teacher", "does-not-matter.nnt", "--no-match", "--no-discrepancy", "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("generator objective would be empty"), "{stderr}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unknown_dataset_and_bad_flags_are_usage_errors() {
    let out = bin()
        .args([
            "train-teacher",
            "--dataset",
            "imagenet",
            "--arch",
            "lenet5",
            "--out",
            "nowhere.nnt",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown dataset"));

    // clap's own usage errors also exit 2.
    let out = bin().args(["distill", "--nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

/// Write a minimal plausible metrics log with accuracy probes.
fn fake_run(dir: &Path, accs: &[f32]) {
    std::fs::create_dir_all(dir).unwrap();
    let mut w = MetricsWriter::create(&dir.join("metrics.log"), &[]).unwrap();
    for (i, &acc) in accs.iter().enumerate() {
        w.append(&EpochReport {
            epoch: i as u64 + 1,
            l_kd_mean: 1.0 / (i as f32 + 1.0),
            breakdown: LossBreakdown {
                l_oh: 0.5,
                l_a: -0.1,
                l_ie: -2.0,
                l_d: 0.9,
                l_gen: -9.1,
            },
            bank_size: 10,
            test_acc: Some(acc),
        })
        .unwrap();
    }
}

#[test]
fn report_compares_runs_and_rejects_underfilled_input() {
    let dir = tmp("report");
    fake_run(&dir.join("steady"), &[0.5, 0.8, 0.9, 0.91, 0.92]);
    fake_run(&dir.join("jumpy"), &[0.5, 0.9, 0.4, 0.95, 0.6]);

    let out = bin()
        .args(["report", "--runs"])
        .arg(dir.join("steady"))
        .arg(dir.join("jumpy"))
        .arg("--out")
        .arg(dir.join("cmp"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("cmp/comparison.tsv").is_file());
    assert!(dir.join("cmp/accuracy.svg").is_file());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("steady"), "{stdout}");
    assert!(stdout.contains("jumpy"), "{stdout}");

    // One run is not a comparison.
    let out = bin()
        .args(["report", "--runs"])
        .arg(dir.join("steady"))
        .arg("--out")
        .arg(dir.join("cmp1"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Missing logs are listed by path.
    let out = bin()
        .args(["report", "--runs"])
        .arg(dir.join("steady"))
        .arg(dir.join("absent"))
        .arg("--out")
        .arg(dir.join("cmp2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent") && stderr.contains("metrics.log"), "{stderr}");
    std::fs::remove_dir_all(&dir).unwrap();
}
