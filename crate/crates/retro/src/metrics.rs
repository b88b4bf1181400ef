//! Metrics CSV: one row per training step, with a versioned fixed header.
//!
//! `wall_ms` is written as 0 by design: the column exists for external
//! tooling, but clock readings would break byte-identical replay, which the
//! pipeline guarantees end to end.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use retro_core::train::{Mode, StepMetrics};

use crate::error::{format_err, io_err, Result};

pub const METRICS_VERSION_LINE: &str = "# retro metrics v1";
pub const METRICS_HEADER: &str =
    "run_id,mode,epoch,step,loss_total,loss_dis,loss_con,lr,head_frozen,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub mode: String,
    pub epoch: usize,
    pub step: u64,
    pub loss_total: f64,
    pub loss_dis: f64,
    pub loss_con: f64,
    pub lr: f32,
    pub head_frozen: bool,
    pub wall_ms: u64,
}

impl MetricsRecord {
    fn to_row(&self) -> String {
        format!(
            "{},{},{},{},{:?},{:?},{:?},{:?},{},{}",
            self.run_id,
            self.mode,
            self.epoch,
            self.step,
            self.loss_total,
            self.loss_dis,
            self.loss_con,
            self.lr,
            u8::from(self.head_frozen),
            self.wall_ms
        )
    }
}

/// Renders training-step metrics to the CSV document. Fails on non-finite
/// losses rather than writing them.
pub fn render_metrics(run_id: &str, mode: Mode, steps: &[StepMetrics]) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "{METRICS_VERSION_LINE}");
    let _ = writeln!(out, "{METRICS_HEADER}");
    for s in steps {
        for (what, v) in
            [("loss_total", s.loss_total), ("loss_dis", s.loss_dis), ("loss_con", s.loss_con)]
        {
            if !v.is_finite() {
                return Err(format_err(format!(
                    "refusing to write non-finite {what} at step {}",
                    s.step
                )));
            }
        }
        let rec = MetricsRecord {
            run_id: run_id.to_string(),
            mode: mode.as_str().to_string(),
            epoch: s.epoch,
            step: s.step,
            loss_total: s.loss_total,
            loss_dis: s.loss_dis,
            loss_con: s.loss_con,
            lr: s.lr,
            head_frozen: !s.head_trainable,
            wall_ms: 0,
        };
        let _ = writeln!(out, "{}", rec.to_row());
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, run_id: &str, mode: Mode, steps: &[StepMetrics]) -> Result<()> {
    let text = render_metrics(run_id, mode, steps)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_VERSION_LINE) {
        return Err(format_err(format!(
            "{}: first line is not `{METRICS_VERSION_LINE}`",
            path.display()
        )));
    }
    if lines.next() != Some(METRICS_HEADER) {
        return Err(format_err(format!("{}: unexpected CSV header", path.display())));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(format_err(format!(
                "{}: row {} has {} columns, expected 10",
                path.display(),
                i + 1,
                cols.len()
            )));
        }
        let num = |what: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| format_err(format!("{}: bad {what} `{v}`", path.display())))
        };
        out.push(MetricsRecord {
            run_id: cols[0].to_string(),
            mode: cols[1].to_string(),
            epoch: num("epoch", cols[2])? as usize,
            step: num("step", cols[3])? as u64,
            loss_total: num("loss_total", cols[4])?,
            loss_dis: num("loss_dis", cols[5])?,
            loss_con: num("loss_con", cols[6])?,
            lr: num("lr", cols[7])? as f32,
            head_frozen: cols[8] == "1",
            wall_ms: num("wall_ms", cols[9])? as u64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps() -> Vec<StepMetrics> {
        vec![
            StepMetrics {
                epoch: 0,
                step: 0,
                lr: 0.015,
                loss_total: 2.5,
                loss_dis: 0.5,
                loss_con: 2.0,
                forwards: 6,
                head_trainable: false,
                bank_ptr_v: 8,
                bank_ptr_v_prime: 8,
            },
            StepMetrics {
                epoch: 1,
                step: 1,
                lr: 0.0075,
                loss_total: 2.25,
                loss_dis: 0.25,
                loss_con: 2.0,
                forwards: 6,
                head_trainable: true,
                bank_ptr_v: 0,
                bank_ptr_v_prime: 0,
            },
        ]
    }

    #[test]
    fn render_and_read_round_trip() {
        let dir = std::env::temp_dir().join(format!("retro-metrics-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        write_metrics(&path, "r1", Mode::Retro, &steps()).unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].run_id, "r1");
        assert_eq!(rows[0].mode, "retro");
        assert!(rows[0].head_frozen);
        assert!(!rows[1].head_frozen);
        assert_eq!(rows[1].loss_total, 2.25);
        assert_eq!(rows[0].wall_ms, 0, "wall time is pinned to zero for replayability");
    }

    #[test]
    fn non_finite_losses_are_refused() {
        let mut bad = steps();
        bad[0].loss_con = f64::NAN;
        let err = render_metrics("r", Mode::Disco, &bad).unwrap_err();
        assert!(err.to_string().contains("loss_con"), "{err}");
    }

    #[test]
    fn version_line_is_checked() {
        let dir = std::env::temp_dir().join(format!("retro-metrics2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        std::fs::write(&path, "run_id,mode\nx,y\n").unwrap();
        let err = read_metrics(&path).unwrap_err();
        assert!(err.to_string().contains("first line"), "{err}");
    }
}
