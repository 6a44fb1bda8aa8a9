//! Replay-buffer contract tests: capacity, eviction statistics, scheduling,
//! and disk persistence.

use dfkd::bank::{BankSchedule, MemoryBank};
use dfkd::rng::{stream, StreamId};
use dfkd::types::{BatchOrigin, SyntheticBatch};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use std::collections::HashSet;

const SHAPE: &[usize] = &[2, 1, 2, 2];

/// A small batch tagged with its creation epoch; fill value varies so
/// round-trip tests can tell batches apart by content too.
fn batch(epoch: u64) -> SyntheticBatch {
    let len: usize = SHAPE.iter().product();
    let data: Vec<f32> = (0..len).map(|i| epoch as f32 + 0.25 * i as f32).collect();
    let images = ArrayD::from_shape_vec(IxDyn(SHAPE), data).unwrap();
    SyntheticBatch::new(images, BatchOrigin::Fresh, epoch).unwrap()
}

#[test]
fn size_tracks_capacity() {
    let mut rng = stream(7, StreamId::Bank);

    // below capacity: every update appends
    let mut bank = MemoryBank::new(3, None).unwrap();
    bank.update(batch(1), &mut rng).unwrap();
    assert_eq!(bank.len(), 1);

    // at capacity: one in, one out
    for e in 2..=4 {
        bank.update(batch(e), &mut rng).unwrap();
    }
    assert_eq!(bank.len(), 3);
    let tags: HashSet<u64> = bank.stored_epochs().into_iter().collect();
    assert!(tags.contains(&4), "newest batch must be present");
    let survivors = [1u64, 2, 3].iter().filter(|t| tags.contains(t)).count();
    assert_eq!(survivors, 2, "exactly one of the first three must be evicted");

    // capacity 0 accepts nothing
    let mut disabled = MemoryBank::new(0, None).unwrap();
    for e in 1..=20 {
        disabled.update(batch(e), &mut rng).unwrap();
    }
    assert_eq!(disabled.len(), 0);
    assert!(disabled.sample(&mut rng).is_none());
}

#[test]
fn capacity_holds_over_random_interleavings() {
    let mut rng = stream(11, StreamId::Bank);
    let mut op_rng = stream(12, StreamId::Bank);
    for capacity in [1usize, 2, 5] {
        let mut bank = MemoryBank::new(capacity, None).unwrap();
        let mut inserted = 0u64;
        for _ in 0..10_000 {
            if op_rng.random::<f32>() < 0.5 {
                inserted += 1;
                bank.update(batch(inserted), &mut rng).unwrap();
            } else if let Some(b) = bank.sample(&mut rng) {
                assert_eq!(b.images.shape(), SHAPE);
                assert_eq!(b.origin, BatchOrigin::Memory);
            }
            assert!(bank.len() <= capacity);
            assert_eq!(bank.len(), (inserted as usize).min(capacity));
        }
    }
}

#[test]
fn growth_follows_update_schedule() {
    // After E epochs at period P with capacity K the bank holds
    // min(K, floor(E / P)) batches (first update lands at epoch P).
    for (capacity, period, epochs) in [(10usize, 5u64, 23u64), (3, 1, 7), (4, 2, 4)] {
        let schedule = BankSchedule::new(period).unwrap();
        let mut bank = MemoryBank::new(capacity, None).unwrap();
        let mut rng = stream(13, StreamId::Bank);
        for epoch in 1..=epochs {
            if schedule.should_update(epoch) {
                bank.update(batch(epoch), &mut rng).unwrap();
            }
        }
        let expected = (epochs / period) as usize;
        assert_eq!(bank.len(), expected.min(capacity));
    }
}

#[test]
fn should_update_is_plain_divisibility() {
    let s5 = BankSchedule::new(5).unwrap();
    assert!(s5.should_update(5));
    assert!(!s5.should_update(7));
    assert!(s5.should_update(10));
    let s1 = BankSchedule::new(1).unwrap();
    for e in 1..=20 {
        assert!(s1.should_update(e));
    }
    assert!(BankSchedule::new(0).is_err());
}

#[test]
fn sampling_is_uniform_over_stored_batches() {
    let mut rng = stream(21, StreamId::Bank);
    let mut bank = MemoryBank::new(10, None).unwrap();
    for e in 1..=10 {
        bank.update(batch(e), &mut rng).unwrap();
    }
    let mut counts = [0u32; 11];
    for _ in 0..10_000 {
        let b = bank.sample(&mut rng).unwrap();
        counts[b.created_at_epoch as usize] += 1;
    }
    for e in 1..=10 {
        let freq = counts[e] as f64 / 10_000.0;
        assert!(
            (freq - 0.1).abs() <= 0.02,
            "batch {e} drawn with frequency {freq}, expected 0.1 +/- 0.02"
        );
    }
}

#[test]
fn eviction_is_uniform_over_slots() {
    // Fill to capacity K=5, run one forced eviction per trial, and check each
    // slot loses its batch with empirical probability 1/K +/- 0.03.
    const TRIALS: u64 = 5_000;
    let mut evictions = [0u32; 5];
    for trial in 0..TRIALS {
        let mut rng = stream(1000 + trial, StreamId::Bank);
        let mut bank = MemoryBank::new(5, None).unwrap();
        for e in 1..=5 {
            bank.update(batch(e), &mut rng).unwrap();
        }
        bank.update(batch(6), &mut rng).unwrap();
        let kept: HashSet<u64> = bank.stored_epochs().into_iter().collect();
        let gone: Vec<u64> = (1..=5).filter(|t| !kept.contains(t)).collect();
        assert_eq!(gone.len(), 1);
        evictions[(gone[0] - 1) as usize] += 1;
    }
    for (slot, &n) in evictions.iter().enumerate() {
        let freq = n as f64 / TRIALS as f64;
        assert!(
            (freq - 0.2).abs() <= 0.03,
            "slot {slot} evicted with frequency {freq}, expected 0.2 +/- 0.03"
        );
    }
}

#[test]
fn disk_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = stream(31, StreamId::Bank);
    let mut bank = MemoryBank::new(4, Some(dir.path())).unwrap();
    let mut content_rng = stream(32, StreamId::Bank);
    let mut originals = Vec::new();
    for e in 1..=6u64 {
        let images = ArrayD::from_shape_fn(IxDyn(SHAPE), |_| {
            content_rng.random::<f32>() * 8.0 - 4.0
        });
        let b = SyntheticBatch::new(images, BatchOrigin::Fresh, e).unwrap();
        originals.push(b.clone());
        bank.update(b, &mut rng).unwrap();
    }

    let reloaded = MemoryBank::load(4, dir.path()).unwrap();
    assert_eq!(reloaded.len(), bank.len());
    assert_eq!(reloaded.stored_epochs(), bank.stored_epochs());
    for (a, b) in bank.batches().iter().zip(reloaded.batches()) {
        assert_eq!(a.created_at_epoch, b.created_at_epoch);
        for (x, y) in a.images.iter().zip(b.images.iter()) {
            assert_eq!(x.to_bits(), y.to_bits(), "tensor round-trip must be bit-exact");
        }
        let orig = &originals[(a.created_at_epoch - 1) as usize];
        for (x, y) in a.images.iter().zip(orig.images.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn disk_state_mirrors_memory_after_every_update() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = stream(41, StreamId::Bank);
    let mut bank = MemoryBank::new(3, Some(dir.path())).unwrap();
    for e in 1..=8u64 {
        bank.update(batch(e), &mut rng).unwrap();
        let files: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|f| f.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".nnt"))
            .collect();
        assert_eq!(files.len(), bank.len(), "after update {e}");
        let reloaded = MemoryBank::load(3, dir.path()).unwrap();
        assert_eq!(reloaded.stored_epochs(), bank.stored_epochs());
    }
}

#[test]
fn load_names_missing_or_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = stream(51, StreamId::Bank);
    let mut bank = MemoryBank::new(3, Some(dir.path())).unwrap();
    for e in 1..=3u64 {
        bank.update(batch(e), &mut rng).unwrap();
    }
    let victim = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|f| f.unwrap())
        .find(|f| f.file_name().to_string_lossy().ends_with(".nnt"))
        .unwrap();
    let name = victim.file_name().to_string_lossy().into_owned();

    // corrupt: truncate
    std::fs::write(victim.path(), b"garbage").unwrap();
    let err = MemoryBank::load(3, dir.path()).unwrap_err().to_string();
    assert!(err.contains(&name), "error should name the file: {err}");

    // missing: delete
    std::fs::remove_file(victim.path()).unwrap();
    let err = MemoryBank::load(3, dir.path()).unwrap_err().to_string();
    assert!(err.contains(&name), "error should name the file: {err}");
}

#[test]
fn stale_temp_manifest_does_not_break_load() {
    // A crash between temp-write and rename leaves a *.tmp file behind; the
    // previous manifest must still load.
    let dir = tempfile::tempdir().unwrap();
    let mut rng = stream(61, StreamId::Bank);
    let mut bank = MemoryBank::new(2, Some(dir.path())).unwrap();
    bank.update(batch(1), &mut rng).unwrap();
    std::fs::write(dir.path().join("manifest.toml.tmp"), b"half-written junk").unwrap();
    let reloaded = MemoryBank::load(2, dir.path()).unwrap();
    assert_eq!(reloaded.stored_epochs(), vec![1]);
}

#[test]
fn eviction_sequence_resumes_identically_from_disk() {
    // Uninterrupted: 6 updates. Interrupted: 3 updates, reload, restore the
    // eviction stream position, 3 more. Stored tags must agree.
    let dir_a = tempfile::tempdir().unwrap();
    let mut rng = stream(71, StreamId::Bank);
    let mut full = MemoryBank::new(2, Some(dir_a.path())).unwrap();
    for e in 1..=6u64 {
        full.update(batch(e), &mut rng).unwrap();
    }

    let dir_b = tempfile::tempdir().unwrap();
    let mut rng = stream(71, StreamId::Bank);
    let mut first = MemoryBank::new(2, Some(dir_b.path())).unwrap();
    for e in 1..=3u64 {
        first.update(batch(e), &mut rng).unwrap();
    }
    let pos = rng.get_word_pos();
    drop(first);

    let mut rng = stream(71, StreamId::Bank);
    rng.set_word_pos(pos);
    let mut resumed = MemoryBank::load(2, dir_b.path()).unwrap();
    for e in 4..=6u64 {
        resumed.update(batch(e), &mut rng).unwrap();
    }
    assert_eq!(full.stored_epochs(), resumed.stored_epochs());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
    #[test]
    fn prop_size_never_exceeds_capacity(
        capacity in 0usize..6,
        ops in proptest::collection::vec(proptest::bool::ANY, 1..200),
        seed in 0u64..1000,
    ) {
        let mut rng = stream(seed, StreamId::Bank);
        let mut bank = MemoryBank::new(capacity, None).unwrap();
        let mut inserted = 0u64;
        for op in ops {
            if op {
                inserted += 1;
                bank.update(batch(inserted), &mut rng).unwrap();
            } else {
                let _ = bank.sample(&mut rng);
            }
            proptest::prop_assert!(bank.len() <= capacity);
            proptest::prop_assert_eq!(bank.len(), (inserted as usize).min(capacity));
        }
    }
}
