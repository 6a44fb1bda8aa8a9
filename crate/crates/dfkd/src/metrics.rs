//! Post-run analysis: the metrics-log format (emitter and strict parser),
//! tail-window stability statistics, and multi-run comparison output.

use crate::distill::EpochReport;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::plot::Chart;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

const FORMAT_TAG: &str = "# distillation metrics v1";
const COLUMNS: [&str; 9] = [
    "epoch", "l_kd_mean", "l_oh", "l_a", "l_ie", "l_d", "l_gen", "bank_size", "test_acc",
];

/// Append-only per-epoch log. Floats are written in shortest round-trip
/// form, so parsing is an exact inverse of emission.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    /// Start a fresh log with free-form header notes.
    pub fn create(path: &Path, notes: &[String]) -> Result<Self> {
        let mut text = format!("{FORMAT_TAG}\n");
        for n in notes {
            text.push_str(&format!("# {n}\n"));
        }
        text.push_str(&format!("# columns: {}\n", COLUMNS.join("\t")));
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Self::open_append(path)
    }

    /// Reopen a log for a resumed run: rows past `last_epoch` (an interrupted
    /// epoch's leftovers) are dropped so the rewritten tail stays consistent.
    pub fn resume(path: &Path, last_epoch: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut kept = String::new();
        for line in text.lines() {
            if line.starts_with('#') || line.is_empty() {
                kept.push_str(line);
                kept.push('\n');
                continue;
            }
            let epoch: u64 = line
                .split('\t')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Invalid(format!("unparsable metrics row: {line}")))?;
            if epoch <= last_epoch {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        crate::persist::write_atomic(path, kept.as_bytes())?;
        Self::open_append(path)
    }

    fn open_append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file })
    }

    pub fn append(&mut self, r: &EpochReport) -> Result<()> {
        let acc = match r.test_acc {
            Some(a) => a.to_string(),
            None => "-".to_string(),
        };
        let b = &r.breakdown;
        writeln!(
            self.file,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.epoch, r.l_kd_mean, b.l_oh, b.l_a, b.l_ie, b.l_d, b.l_gen, r.bank_size, acc
        )
        .and_then(|()| self.file.flush())
        .map_err(|e| Error::Invalid(format!("metrics append: {e}")))
    }
}

/// Strict parser: every data row must have the fixed columns, finite values,
/// and strictly increasing epochs. Errors carry the 1-based line number.
pub fn parse_log(path: &Path) -> Result<Vec<EpochReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == FORMAT_TAG => {}
        _ => {
            return Err(Error::Invalid(format!(
                "{}: not a metrics log (missing '{FORMAT_TAG}')",
                path.display()
            )))
        }
    }
    let bad = |no: usize, what: &str| {
        Error::Invalid(format!("{} line {}: {what}", path.display(), no + 1))
    };
    let mut out: Vec<EpochReport> = Vec::new();
    for (no, line) in lines {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != COLUMNS.len() {
            return Err(bad(
                no,
                &format!("expected {} fields, got {}", COLUMNS.len(), fields.len()),
            ));
        }
        let epoch: u64 = fields[0]
            .parse()
            .map_err(|_| bad(no, &format!("bad epoch '{}'", fields[0])))?;
        if let Some(prev) = out.last() {
            if epoch <= prev.epoch {
                return Err(bad(no, &format!("epoch {epoch} not increasing")));
            }
        }
        let mut nums = [0.0f64; 6];
        for (i, slot) in nums.iter_mut().enumerate() {
            let field = fields[1 + i];
            let v: f64 = field
                .parse()
                .map_err(|_| bad(no, &format!("bad {} '{field}'", COLUMNS[1 + i])))?;
            if !v.is_finite() {
                return Err(bad(no, &format!("non-finite {}", COLUMNS[1 + i])));
            }
            *slot = v;
        }
        let bank_size: usize = fields[7]
            .parse()
            .map_err(|_| bad(no, &format!("bad bank_size '{}'", fields[7])))?;
        let test_acc = match fields[8] {
            "-" => None,
            f => {
                let a: f32 = f.parse().map_err(|_| bad(no, &format!("bad test_acc '{f}'")))?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(bad(no, &format!("test_acc {a} outside [0, 1]")));
                }
                Some(a)
            }
        };
        out.push(EpochReport {
            epoch,
            l_kd_mean: nums[0] as f32,
            breakdown: LossBreakdown {
                l_oh: nums[1],
                l_a: nums[2],
                l_ie: nums[3],
                l_d: nums[4],
                l_gen: nums[5],
            },
            bank_size,
            test_acc,
        });
    }
    Ok(out)
}

/// Accuracy curve of a parsed run; epochs without a probe are skipped.
pub fn accuracy_curve(reports: &[EpochReport]) -> Vec<(u64, f64)> {
    reports
        .iter()
        .filter_map(|r| r.test_acc.map(|a| (r.epoch, a as f64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    /// Sample standard deviation over the tail window (0 if the window has
    /// one point).
    pub std: f64,
    /// Maximum over the whole series.
    pub peak: f64,
    pub final_value: f64,
}

/// Spread of the last `ceil(tail_fraction * len)` points, plus the series
/// peak and final value.
pub fn stability(series: &[f64], tail_fraction: f64) -> Result<Stability> {
    if series.len() < 2 {
        return Err(Error::Invalid(format!(
            "stability needs at least 2 points, got {}",
            series.len()
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "tail_fraction must be in (0, 1], got {tail_fraction}"
        )));
    }
    let w = ((tail_fraction * series.len() as f64).ceil() as usize).clamp(1, series.len());
    let tail = &series[series.len() - w..];
    let mean = tail.iter().sum::<f64>() / w as f64;
    let std = if w > 1 {
        (tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w - 1) as f64).sqrt()
    } else {
        0.0
    };
    let peak = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Stability {
        std,
        peak,
        final_value: *series.last().expect("non-empty"),
    })
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub label: String,
    pub epochs: usize,
    pub stats: Stability,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub table_path: PathBuf,
    pub plot_path: PathBuf,
}

/// Side-by-side stability table plus an overlaid accuracy plot. Runs with
/// different epoch ranges are truncated to the common range with a warning.
pub fn compare(
    runs: &[(String, Vec<EpochReport>)],
    tail_fraction: f64,
    out_dir: &Path,
) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::Invalid(format!(
            "comparison needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    let mut curves: Vec<(String, Vec<(u64, f64)>)> = Vec::new();
    for (label, reports) in runs {
        let curve = accuracy_curve(reports);
        if curve.is_empty() {
            return Err(Error::Invalid(format!(
                "run '{label}' has no accuracy probes to compare"
            )));
        }
        curves.push((label.clone(), curve));
    }
    let lo = curves
        .iter()
        .map(|(_, c)| c.first().expect("non-empty").0)
        .max()
        .expect(">= 2 runs");
    let hi = curves
        .iter()
        .map(|(_, c)| c.last().expect("non-empty").0)
        .min()
        .expect(">= 2 runs");
    if lo > hi {
        return Err(Error::Invalid(
            "runs share no common epoch range".to_string(),
        ));
    }
    for (label, curve) in &mut curves {
        let before = curve.len();
        curve.retain(|&(e, _)| (lo..=hi).contains(&e));
        if curve.len() != before {
            println!("note: run '{label}' truncated to common epochs {lo}..={hi}");
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut chart = Chart::new("student accuracy", "epoch", "accuracy");
    let mut rows = Vec::new();
    let mut table = String::from("label\tepochs\tpeak\tfinal\ttail_std\n");
    for (label, curve) in &curves {
        let series: Vec<f64> = curve.iter().map(|&(_, a)| a).collect();
        let stats = stability(&series, tail_fraction)?;
        table.push_str(&format!(
            "{label}\t{}\t{:.4}\t{:.4}\t{:.5}\n",
            series.len(),
            stats.peak,
            stats.final_value,
            stats.std
        ));
        chart.add(
            label,
            curve.iter().map(|&(e, a)| (e as f64, a)).collect(),
        );
        rows.push(CompareRow {
            label: label.clone(),
            epochs: series.len(),
            stats,
        });
    }
    let table_path = out_dir.join("comparison.tsv");
    std::fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;
    let plot_path = out_dir.join("accuracy.svg");
    chart.save_svg(&plot_path)?;
    Ok(Comparison {
        rows,
        table_path,
        plot_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GenLossWeights;

    fn report(epoch: u64, acc: Option<f32>) -> EpochReport {
        EpochReport {
            epoch,
            l_kd_mean: 0.5 / epoch as f32,
            breakdown: LossBreakdown::compose(
                1.25,
                -3.5,
                -2.302585,
                0.875,
                GenLossWeights::new(0.1, 5.0).unwrap(),
            ),
            bank_size: epoch.min(10) as usize,
            test_acc: acc,
        }
    }

    fn tmp(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("metrics_{tag}_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let dir = tmp("roundtrip");
        let path = dir.join("metrics.log");
        let reports: Vec<EpochReport> = (1..=5)
            .map(|e| report(e, if e % 2 == 0 { Some(0.738_412_5) } else { None }))
            .collect();
        let mut w = MetricsWriter::create(&path, &["lr_schedule: constant".into()]).unwrap();
        for r in &reports {
            w.append(r).unwrap();
        }
        let back = parse_log(&path).unwrap();
        assert_eq!(back, reports);
        assert_eq!(accuracy_curve(&back).len(), 2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn resume_truncates_rows_past_the_cursor() {
        let dir = tmp("resume");
        let path = dir.join("metrics.log");
        let mut w = MetricsWriter::create(&path, &[]).unwrap();
        for e in 1..=4 {
            w.append(&report(e, None)).unwrap();
        }
        drop(w);
        let mut w = MetricsWriter::resume(&path, 2).unwrap();
        w.append(&report(3, Some(0.5))).unwrap();
        let back = parse_log(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].epoch, 3);
        assert_eq!(back[2].test_acc, Some(0.5));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        let dir = tmp("strict");
        for (content, needle) in [
            ("nonsense\n", "not a metrics log"),
            (
                "# distillation metrics v1\n1\t0.5\t1\t2\t3\t4\t5\t6\n",
                "line 2",
            ),
            (
                "# distillation metrics v1\n1\t0.5\t1\t2\t3\t4\t5\t6\t-\n1\t0.5\t1\t2\t3\t4\t5\t6\t-\n",
                "not increasing",
            ),
            (
                "# distillation metrics v1\n1\t0.5\t1\t2\t3\t4\t5\t6\t1.5\n",
                "outside",
            ),
            (
                "# distillation metrics v1\n1\tNaN\t1\t2\t3\t4\t5\t6\t-\n",
                "non-finite",
            ),
        ] {
            let path = dir.join("m.log");
            std::fs::write(&path, content).unwrap();
            let err = parse_log(&path).unwrap_err().to_string();
            assert!(err.contains(needle), "{err} should mention {needle}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn stability_matches_hand_arithmetic() {
        // tail half of [0.9, 0.9, 0.8, 1.0] is {0.8, 1.0}:
        // mean 0.9, sample var (0.01 + 0.01) / 1, std = sqrt(0.02)
        let s = stability(&[0.9, 0.9, 0.8, 1.0], 0.5).unwrap();
        assert!((s.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.peak, 1.0);
        assert_eq!(s.final_value, 1.0);
        assert!(s.peak >= s.final_value);

        let flat = stability(&[0.7; 10], 0.2).unwrap();
        assert_eq!(flat.std, 0.0);

        // Window arithmetic: ceil(0.5 * 5) = 3 points.
        let s = stability(&[0.0, 0.0, 1.0, 1.0, 1.0], 0.5).unwrap();
        assert_eq!(s.std, 0.0);

        assert!(stability(&[0.5], 0.2).is_err());
        assert!(stability(&[0.5, 0.6], 0.0).is_err());
        assert!(stability(&[0.5, 0.6], 1.1).is_err());
    }

    #[test]
    fn stability_ignores_order_outside_the_tail() {
        let base = [0.1, 0.9, 0.3, 0.7, 0.42, 0.84];
        let mut shuffled = base;
        shuffled.swap(0, 3);
        shuffled.swap(1, 2);
        let a = stability(&base, 0.3).unwrap();
        let b = stability(&shuffled, 0.3).unwrap();
        assert_eq!(a.std, b.std);
        assert_eq!(a.final_value, b.final_value);
    }

    #[test]
    fn compare_emits_table_and_plot_over_common_range() {
        let dir = tmp("compare");
        let a: Vec<EpochReport> = (1..=6).map(|e| report(e, Some(0.1 * e as f32))).collect();
        let b: Vec<EpochReport> = (1..=4).map(|e| report(e, Some(0.2 * e as f32))).collect();
        let cmp = compare(
            &[("long".to_string(), a.clone()), ("short".to_string(), b)],
            0.5,
            &dir,
        )
        .unwrap();
        assert_eq!(cmp.rows.len(), 2);
        assert_eq!(cmp.rows[0].epochs, 4, "truncated to common range");
        assert!(cmp.table_path.is_file() && cmp.plot_path.is_file());

        assert!(compare(&[("one".to_string(), a)], 0.5, &dir).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
