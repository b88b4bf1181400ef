//! The pipeline stages behind the CLI subcommands.
//!
//! Every stage is a plain function of an [`ExperimentConfig`]; the CLI only
//! parses flags and forwards here. Stages write into
//! `out_dir/<run>/` (the teacher pretrain uses the fixed run name
//! `teacher`), each run directory carrying a copy of the effective config
//! and its SHA-256 fingerprint so results stay traceable to exact inputs.

use std::fs;
use std::path::{Path, PathBuf};

use retro_core::data::{generate_synthetic, parse_cifar_records, Dataset};
use retro_core::eval::{knn_eval, linear_probe, semi_supervised_finetune, EvalReport};
use retro_core::nn::{Encoder, Network};
use retro_core::train::{build_state, pretrain_teacher, run_training, Mode};

use crate::checkpoint::{
    fill_params, load_entries, network_entries, save_entries, state_entries,
};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::{format_err, io_err, Result};
use crate::metrics::write_metrics;
use crate::report::{export_report, write_eval};

/// Offset mixed into the data seed for the held-out split so train and test
/// draw from unrelated streams.
const TEST_SPLIT_OFFSET: u64 = 0x7e57_da7a;

pub const TEACHER_RUN: &str = "teacher";

/// Loads `(train, test)` according to the config's dataset selection.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let train =
                generate_synthetic(cfg.classes, cfg.per_class, cfg.image_size, cfg.data_seed)?;
            let test = generate_synthetic(
                cfg.classes,
                cfg.test_per_class,
                cfg.image_size,
                cfg.data_seed.wrapping_add(TEST_SPLIT_OFFSET),
            )?;
            Ok((train, test))
        }
        DatasetKind::Cifar10 => {
            if cfg.classes != 10 || cfg.image_size != 32 {
                return Err(format_err(
                    "dataset = cifar10 is 10 classes at 32x32; set classes = 10 and image_size = 32",
                ));
            }
            let dir = cfg.data_dir.as_ref().expect("checked at parse time");
            let mut train_bytes = Vec::new();
            for i in 1..=5 {
                let p = dir.join(format!("data_batch_{i}.bin"));
                train_bytes.extend(fs::read(&p).map_err(|e| io_err(&p, e))?);
            }
            let p = dir.join("test_batch.bin");
            let test_bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
            Ok((parse_cifar_records(&train_bytes)?, parse_cifar_records(&test_bytes)?))
        }
    }
}

/// Creates the run directory and drops the self-description files into it:
/// the canonical config text and its fingerprint.
fn prepare_run_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let config_path = dir.join("config.cfg");
    fs::write(&config_path, cfg.to_text()).map_err(|e| io_err(&config_path, e))?;
    let fp_path = dir.join("fingerprint.txt");
    fs::write(&fp_path, format!("config_sha256 = {}\n", cfg.fingerprint()))
        .map_err(|e| io_err(&fp_path, e))
}

/// Contrastive pretraining of the teacher. Writes `teacher/teacher.rtro`
/// plus metrics, and returns the checkpoint path.
pub fn run_pretrain(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.join(TEACHER_RUN);
    prepare_run_dir(cfg, &dir)?;
    let (train, _) = load_dataset(cfg)?;
    let tcfg = cfg.teacher_train_config();
    log::info!(
        "pretraining teacher: {} epochs on {} samples",
        tcfg.epochs,
        train.len()
    );
    let (teacher, steps) = pretrain_teacher(&train, &cfg.teacher_arch(), &tcfg)?;
    write_metrics(&dir.join("metrics.csv"), TEACHER_RUN, Mode::BaselineMoco, &steps)?;
    let ckpt = cfg.teacher_ckpt_path();
    save_entries(&ckpt, &network_entries(&teacher, ""))?;
    log::info!("teacher checkpoint written to {}", ckpt.display());
    Ok(ckpt)
}

fn load_teacher(cfg: &ExperimentConfig) -> Result<Network> {
    let path = cfg.teacher_ckpt_path();
    if !path.is_file() {
        return Err(format_err(format!(
            "teacher checkpoint not found at {}; run the pretrain stage first",
            path.display()
        )));
    }
    let entries = load_entries(&path, None)?;
    let mut teacher = cfg.teacher_arch().build(0)?;
    fill_params(teacher.params_mut(), "", &entries)?;
    Ok(teacher)
}

/// Student training in the configured mode. Baseline needs no teacher; the
/// distillation modes load the pretrained one. Writes `student.rtro` with
/// the full training state plus metrics, and returns the checkpoint path.
pub fn run_distill(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    prepare_run_dir(cfg, &dir)?;
    let (train, _) = load_dataset(cfg)?;
    let teacher = match cfg.mode {
        Mode::BaselineMoco => None,
        _ => Some(load_teacher(cfg)?),
    };
    let student = cfg.student_arch().build(cfg.seed)?;
    let tcfg = cfg.train_config();
    let mut state = build_state(student, teacher, &tcfg)?;
    log::info!(
        "training student in {} mode: {} epochs on {} samples",
        cfg.mode,
        tcfg.epochs,
        train.len()
    );
    let steps = run_training(&mut state, &train, &tcfg)?;
    write_metrics(&dir.join("metrics.csv"), &cfg.run_id, cfg.mode, &steps)?;
    let ckpt = dir.join("student.rtro");
    save_entries(&ckpt, &state_entries(&state))?;
    log::info!("student checkpoint written to {}", ckpt.display());
    Ok(ckpt)
}

fn student_ckpt(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = cfg.run_dir().join("student.rtro");
    if !path.is_file() {
        return Err(format_err(format!(
            "student checkpoint not found at {}; run the distill stage first",
            path.display()
        )));
    }
    Ok(path)
}

/// The student encoder alone, restored from a training checkpoint via
/// name-prefix filtering.
fn load_student_encoder(cfg: &ExperimentConfig) -> Result<Encoder> {
    let entries = load_entries(&student_ckpt(cfg)?, Some("student.encoder."))?;
    let mut net = cfg.student_arch().build(0)?;
    fill_params(net.encoder.params_mut(), "student.", &entries)?;
    Ok(net.encoder)
}

fn load_student_network(cfg: &ExperimentConfig) -> Result<Network> {
    // the "student." prefix filter excludes the optimizer's
    // "student_momentum." entries by construction
    let entries = load_entries(&student_ckpt(cfg)?, Some("student."))?;
    let mut net = cfg.student_arch().build(0)?;
    fill_params(net.params_mut(), "student.", &entries)?;
    Ok(net)
}

pub fn run_probe(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut encoder = load_student_encoder(cfg)?;
    let (train, test) = load_dataset(cfg)?;
    log::info!("linear probe on {} train / {} test samples", train.len(), test.len());
    let report = linear_probe(&mut encoder, &train, &test, &cfg.probe_config())?;
    write_eval(&cfg.run_dir(), &cfg.run_id, "probe", &report)?;
    log::info!("probe top-1 {:.4}, top-5 {:.4}", report.top1, report.top5);
    Ok(report)
}

pub fn run_knn(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut encoder = load_student_encoder(cfg)?;
    let (train, test) = load_dataset(cfg)?;
    log::info!("knn (k = {}) on {} train / {} test", cfg.knn_k, train.len(), test.len());
    let report = knn_eval(&mut encoder, &train, &test, cfg.knn_k)?;
    write_eval(&cfg.run_dir(), &cfg.run_id, "knn", &report)?;
    log::info!("knn top-1 {:.4}", report.top1);
    Ok(report)
}

pub fn run_finetune(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut net = load_student_network(cfg)?;
    let (train, test) = load_dataset(cfg)?;
    log::info!(
        "semi-supervised fine-tune on a {:.1}% label fraction",
        cfg.finetune_fraction * 100.0
    );
    let report = semi_supervised_finetune(
        &mut net,
        &train,
        &test,
        cfg.finetune_fraction,
        &cfg.finetune_config(),
    )?;
    write_eval(&cfg.run_dir(), &cfg.run_id, "finetune", &report)?;
    log::info!("fine-tune top-1 {:.4}", report.top1);
    Ok(report)
}

pub fn run_export(out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (summary, curves) = export_report(out_dir)?;
    log::info!("wrote {} and {}", summary.display(), curves.display());
    Ok((summary, curves))
}
