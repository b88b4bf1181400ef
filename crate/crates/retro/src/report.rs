//! Evaluation outputs and the cross-run summary.
//!
//! Each evaluation stage writes its `EvalReport` twice: a one-row CSV with
//! the headline numbers, and a JSON detail file that adds the per-class
//! accuracies. `export` walks an experiment directory and collates every
//! run into `summary.csv` (one row per run) and `curves.csv` (per-epoch
//! mean losses, plot-ready).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use retro_core::eval::EvalReport;

use crate::error::{format_err, io_err, Result};
use crate::metrics::read_metrics;

pub const EVAL_HEADER: &str = "run_id,stage,top1,top5,config_hash";

/// Writes `eval_<stage>.csv` and `eval_<stage>.json` into `dir`.
pub fn write_eval(dir: &Path, run_id: &str, stage: &str, report: &EvalReport) -> Result<()> {
    let csv_path = dir.join(format!("eval_{stage}.csv"));
    let mut csv = String::new();
    let _ = writeln!(csv, "{EVAL_HEADER}");
    let _ = writeln!(
        csv,
        "{run_id},{stage},{:?},{:?},{}",
        report.top1, report.top5, report.config_hash
    );
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;

    let json_path = dir.join(format!("eval_{stage}.json"));
    let mut per_class = String::new();
    for (i, v) in report.per_class.iter().enumerate() {
        if i > 0 {
            per_class.push_str(", ");
        }
        let _ = write!(per_class, "{v:?}");
    }
    let json = format!(
        "{{\n  \"run_id\": \"{run_id}\",\n  \"stage\": \"{stage}\",\n  \"top1\": {:?},\n  \
         \"top5\": {:?},\n  \"config_hash\": {},\n  \"per_class\": [{per_class}]\n}}\n",
        report.top1, report.top5, report.config_hash
    );
    fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))
}

/// The `(top1, top5)` pair from an eval CSV written by [`write_eval`].
pub fn read_eval_csv(path: &Path) -> Result<(f64, f64)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(EVAL_HEADER) {
        return Err(format_err(format!("{}: unexpected eval header", path.display())));
    }
    let row = lines
        .next()
        .ok_or_else(|| format_err(format!("{}: missing data row", path.display())))?;
    let cols: Vec<&str> = row.split(',').collect();
    if cols.len() != 5 {
        return Err(format_err(format!("{}: expected 5 columns", path.display())));
    }
    let parse = |v: &str| -> Result<f64> {
        v.parse().map_err(|_| format_err(format!("{}: bad accuracy `{v}`", path.display())))
    };
    Ok((parse(cols[2])?, parse(cols[3])?))
}

fn fmt_acc(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:?}"),
        None => "n/a".to_string(),
    }
}

/// Collates every run directory under `out_dir`. Returns the paths of the
/// two files written: `summary.csv` and `curves.csv`.
pub fn export_report(out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut run_dirs: Vec<PathBuf> = fs::read_dir(out_dir)
        .map_err(|e| io_err(out_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("metrics.csv").is_file())
        .collect();
    run_dirs.sort();
    if run_dirs.is_empty() {
        return Err(format_err(format!(
            "{}: no run directories with a metrics.csv to export",
            out_dir.display()
        )));
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "run_id,mode,probe_top1,probe_top5,knn_top1,finetune_top1");
    let mut curves = String::new();
    let _ = writeln!(curves, "run_id,mode,epoch,loss_total,loss_dis,loss_con");

    for dir in &run_dirs {
        let rows = read_metrics(&dir.join("metrics.csv"))?;
        let (run_id, mode) = match rows.first() {
            Some(r) => (r.run_id.clone(), r.mode.clone()),
            None => {
                let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
                (name, "n/a".to_string())
            }
        };
        let probe = dir.join("eval_probe.csv");
        let (probe_top1, probe_top5) = if probe.is_file() {
            let (a, b) = read_eval_csv(&probe)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        let knn = dir.join("eval_knn.csv");
        let knn_top1 = if knn.is_file() { Some(read_eval_csv(&knn)?.0) } else { None };
        let ft = dir.join("eval_finetune.csv");
        let ft_top1 = if ft.is_file() { Some(read_eval_csv(&ft)?.0) } else { None };
        let _ = writeln!(
            summary,
            "{run_id},{mode},{},{},{},{}",
            fmt_acc(probe_top1),
            fmt_acc(probe_top5),
            fmt_acc(knn_top1),
            fmt_acc(ft_top1)
        );

        // per-epoch means of the step losses
        let mut epoch = None;
        let mut acc = (0.0f64, 0.0f64, 0.0f64, 0usize);
        let flush = |curves: &mut String, epoch: Option<usize>, acc: &(f64, f64, f64, usize)| {
            if let Some(e) = epoch {
                let n = acc.3 as f64;
                let _ = writeln!(
                    curves,
                    "{run_id},{mode},{e},{:?},{:?},{:?}",
                    acc.0 / n,
                    acc.1 / n,
                    acc.2 / n
                );
            }
        };
        for r in &rows {
            if epoch != Some(r.epoch) {
                flush(&mut curves, epoch, &acc);
                epoch = Some(r.epoch);
                acc = (0.0, 0.0, 0.0, 0);
            }
            acc.0 += r.loss_total;
            acc.1 += r.loss_dis;
            acc.2 += r.loss_con;
            acc.3 += 1;
        }
        flush(&mut curves, epoch, &acc);
    }

    let summary_path = out_dir.join("summary.csv");
    fs::write(&summary_path, summary).map_err(|e| io_err(&summary_path, e))?;
    let curves_path = out_dir.join("curves.csv");
    fs::write(&curves_path, curves).map_err(|e| io_err(&curves_path, e))?;
    Ok((summary_path, curves_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::write_metrics;
    use retro_core::train::{Mode, StepMetrics};

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("retro-report-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn report() -> EvalReport {
        EvalReport::new(0.75, 0.95, vec![0.5, 1.0], 42).unwrap()
    }

    fn step(epoch: usize, step: u64, total: f64) -> StepMetrics {
        StepMetrics {
            epoch,
            step,
            lr: 0.01,
            loss_total: total,
            loss_dis: total / 2.0,
            loss_con: total / 2.0,
            forwards: 5,
            head_trainable: true,
            bank_ptr_v: 0,
            bank_ptr_v_prime: 0,
        }
    }

    #[test]
    fn eval_round_trip_preserves_the_headline_numbers() {
        let dir = tmp_dir("eval");
        write_eval(&dir, "r1", "probe", &report()).unwrap();
        let (top1, top5) = read_eval_csv(&dir.join("eval_probe.csv")).unwrap();
        assert_eq!(top1, 0.75);
        assert_eq!(top5, 0.95);
        let json = std::fs::read_to_string(dir.join("eval_probe.json")).unwrap();
        assert!(json.contains("\"per_class\": [0.5, 1.0]"), "{json}");
        assert!(json.contains("\"config_hash\": 42"), "{json}");
    }

    #[test]
    fn export_collates_runs_and_marks_missing_evals() {
        let out = tmp_dir("export");
        for (run, mode) in [("a_base", Mode::BaselineMoco), ("b_retro", Mode::Retro)] {
            let dir = out.join(run);
            std::fs::create_dir_all(&dir).unwrap();
            let steps = [step(0, 0, 2.0), step(0, 1, 1.0), step(1, 2, 0.5)];
            write_metrics(&dir.join("metrics.csv"), run, mode, &steps).unwrap();
        }
        write_eval(&out.join("b_retro"), "b_retro", "probe", &report()).unwrap();

        let (summary_path, curves_path) = export_report(&out).unwrap();
        let summary = std::fs::read_to_string(summary_path).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines.len(), 3, "header plus one row per run:\n{summary}");
        assert!(lines[1].starts_with("a_base,baseline_moco,n/a,n/a,n/a,n/a"), "{summary}");
        assert!(lines[2].starts_with("b_retro,retro,0.75,0.95,n/a,n/a"), "{summary}");

        let curves = std::fs::read_to_string(curves_path).unwrap();
        assert!(curves.contains("a_base,baseline_moco,0,1.5,"), "epoch-0 mean:\n{curves}");
        assert!(curves.contains("a_base,baseline_moco,1,0.5,"), "epoch-1 mean:\n{curves}");
    }

    #[test]
    fn export_of_an_empty_directory_is_an_error() {
        let out = tmp_dir("empty");
        let err = export_report(&out).unwrap_err();
        assert!(err.to_string().contains("no run directories"), "{err}");
    }
}
