//! Paired with/without-replay runs on the 2-d scene: the demonstration that
//! a fixed replay bank prevents the student from losing a learned class.

use std::path::PathBuf;

use dfkd::toy2d::{run_demo, DemoReport, DemoSettings};

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "dfkd-toy-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .subsec_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn paired_runs() -> (DemoReport, DemoReport) {
    let base = DemoSettings {
        render: false,
        ..DemoSettings::default()
    };
    let dir = tmp("paired");
    let without = run_demo(
        &DemoSettings {
            with_bank: false,
            ..base.clone()
        },
        &dir.join("no-bank"),
    )
    .unwrap();
    let with = run_demo(&base, &dir.join("bank")).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    (without, with)
}

#[test]
fn replay_preserves_the_class_the_plain_run_forgets() {
    let start = std::time::Instant::now();
    let (without, with) = paired_runs();

    // The plain run learns a class well (> 0.9 recall) and later loses it
    // (< 0.6): forgetting witnessed on a specific class.
    let mut witnessed = false;
    for class in 0..3 {
        let series: Vec<f32> = without.epochs.iter().map(|e| e.recalls[class]).collect();
        let peak_at = series
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.9)
            .map(|(i, _)| i)
            .next();
        if let Some(i) = peak_at {
            if series[i..].iter().any(|&r| r < 0.6) {
                witnessed = true;
            }
        }
    }
    assert!(witnessed, "no class rose above 0.9 then fell below 0.6");

    // Its final min-class recall also sits below its own peak.
    assert!(
        without.final_min_recall() < without.peak_min_recall(),
        "final {} vs peak {}",
        without.final_min_recall(),
        without.peak_min_recall()
    );

    // The replay run on the same seed keeps every class alive to the end.
    assert!(
        with.final_min_recall() > without.final_min_recall(),
        "bank {} vs no bank {}",
        with.final_min_recall(),
        without.final_min_recall()
    );

    // Both runs complete inside the promised minute.
    assert!(
        start.elapsed().as_secs() < 60,
        "paired demo took {:?}",
        start.elapsed()
    );
}

#[test]
fn generator_seeks_disagreement_and_keeps_moving() {
    let (without, with) = paired_runs();
    for (label, run) in [("no bank", &without), ("bank", &with)] {
        // The discrepancy term steers samples toward teacher-student
        // disagreement: at least five epochs show more divergence on the
        // synthetic batch than on a uniform sweep of the plane.
        let epochs_won = run
            .epochs
            .iter()
            .filter(|e| e.js_on_synthetic > e.js_on_grid)
            .count();
        assert!(epochs_won >= 5, "{label}: js advantage in {epochs_won} epochs");

        // Consecutive synthetic clouds never coincide: the generator keeps
        // producing new points instead of freezing on one batch.
        for pair in run.epochs.windows(2) {
            let moved = pair[0]
                .synthetic
                .iter()
                .zip(&pair[1].synthetic)
                .filter(|(p, q)| (p.0 - q.0).abs() > 1e-3 || (p.1 - q.1).abs() > 1e-3)
                .count();
            assert!(
                moved > 0,
                "{label}: cloud frozen between epochs {} and {}",
                pair[0].epoch,
                pair[1].epoch
            );
        }
    }
}

#[test]
fn demo_emits_one_boundary_image_per_epoch_and_a_recall_table() {
    let dir = tmp("render");
    let settings = DemoSettings {
        epochs: 2,
        render: true,
        ..DemoSettings::default()
    };
    let report = run_demo(&settings, &dir).unwrap();
    assert_eq!(report.epochs.len(), 2);
    for epoch in 1..=2 {
        let png = dir.join(format!("epoch_{epoch:03}.png"));
        let len = std::fs::metadata(&png).unwrap().len();
        assert!(len > 1000, "{} is suspiciously small ({len} bytes)", png.display());
    }
    let table = std::fs::read_to_string(dir.join("recalls.tsv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch\trecall_0\trecall_1\trecall_2\tmin\tjs_synthetic\tjs_grid"
    );
    assert_eq!(lines.count(), 2);
    std::fs::remove_dir_all(&dir).unwrap();
}
