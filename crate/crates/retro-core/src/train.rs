//! Training engine: contrastive pretraining, the two distillation step
//! variants, EMA maintenance, freeze scheduling, and the per-step metric
//! stream.
//!
//! All three modes drive the same state through the same loop; they differ
//! only in which forwards run and how the loss is wired. Every source of
//! randomness is keyed by `(seed, epoch, step)`, so a single-threaded rerun
//! of any stage reproduces the trajectory bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::bank::MemoryBank;
use crate::data::{epoch_permutation, two_views, AugConfig, Dataset};
use crate::error::{Error, Result};
use crate::loss::{consistency_loss, info_nce, symmetric_info_nce, total_loss};
use crate::nn::{EncoderConfig, ForwardTrace, ModelAssembly, Network};
use crate::optim::sgd_step;
use crate::tape::{BnMode, Tape, ValueId};
use crate::tensor::Tensor;

/// Which objective drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain contrastive learning: query network vs EMA key network.
    BaselineMoco,
    /// Distillation with a consistency term and the student's own head.
    Disco,
    /// Distillation that reuses the frozen teacher head behind an adapter,
    /// with the symmetric two-bank contrastive term.
    Retro,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::BaselineMoco => "baseline_moco",
            Mode::Disco => "disco",
            Mode::Retro => "retro",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_moco" => Ok(Mode::BaselineMoco),
            "disco" => Ok(Mode::Disco),
            "retro" => Ok(Mode::Retro),
            other => Err(Error::Parse {
                detail: format!(
                    "unknown mode `{other}` (expected baseline_moco, disco, or retro)"
                ),
            }),
        }
    }
}

/// How many leading epochs keep the head frozen. The two fields must sum to
/// the epoch budget, so the schedule is total by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeSchedule {
    pub frozen_epochs: usize,
    pub unfrozen_epochs: usize,
}

impl FreezeSchedule {
    pub fn frozen_for_all(epochs: usize) -> Self {
        FreezeSchedule { frozen_epochs: epochs, unfrozen_epochs: 0 }
    }

    pub fn never_frozen(epochs: usize) -> Self {
        FreezeSchedule { frozen_epochs: 0, unfrozen_epochs: epochs }
    }
}

/// Everything one training run needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate for a 256-sample batch; scaled linearly to the
    /// actual batch size and cosine-decayed per epoch.
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Contrastive temperature.
    pub tau: f32,
    /// Weight of the contrastive term in the total loss.
    pub gamma: f32,
    /// Weight of the consistency term; 0 recovers plain contrastive
    /// training on the same code path.
    pub dis_weight: f32,
    /// EMA momentum for the mean network.
    pub ema_momentum: f64,
    pub bank_size: usize,
    pub freeze: FreezeSchedule,
    pub aug: AugConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// Conventional defaults: tau 0.2, gamma 1, EMA momentum 0.999, head
    /// frozen for the whole run in the head-reuse mode and never otherwise.
    pub fn defaults(mode: Mode, epochs: usize, seed: u64) -> Self {
        let freeze = match mode {
            Mode::Retro => FreezeSchedule::frozen_for_all(epochs),
            _ => FreezeSchedule::never_frozen(epochs),
        };
        TrainConfig {
            mode,
            epochs,
            batch_size: 64,
            lr: 0.06,
            momentum: 0.9,
            weight_decay: 1e-4,
            tau: 0.2,
            gamma: 1.0,
            dis_weight: 1.0,
            ema_momentum: 0.999,
            bank_size: 256,
            freeze,
            aug: AugConfig::desk_default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Config { detail });
        if self.epochs == 0 {
            return bad(format!("epochs must be positive, got {}", self.epochs));
        }
        if self.batch_size == 0 {
            return bad(String::from("batch_size must be positive"));
        }
        if self.batch_size > self.bank_size {
            return bad(format!(
                "batch_size {} exceeds bank_size {}; a full batch of keys must fit",
                self.batch_size, self.bank_size
            ));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !self.dis_weight.is_finite() || self.dis_weight < 0.0 {
            return bad(format!("dis_weight must be non-negative, got {}", self.dis_weight));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum must be in [0,1), got {}", self.ema_momentum));
        }
        if self.freeze.frozen_epochs + self.freeze.unfrozen_epochs != self.epochs {
            return bad(format!(
                "freeze schedule ({} frozen + {} unfrozen) must sum to {} epochs",
                self.freeze.frozen_epochs, self.freeze.unfrozen_epochs, self.epochs
            ));
        }
        self.aug.validate()
    }

    /// Linear batch-size scaling of the base rate.
    pub fn scaled_lr(&self) -> f32 {
        self.lr * self.batch_size as f32 / 256.0
    }
}

/// Network geometry for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub encoder: EncoderConfig,
    /// 1x1-conv adapter output channels, widening the encoder representation
    /// before the head. `None` feeds the representation straight in.
    pub adapter_to: Option<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head_hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config {
                detail: String::from("head_hidden and embed_dim must be positive"),
            });
        }
        if self.adapter_to == Some(0) {
            return Err(Error::Config { detail: String::from("adapter_to must be positive") });
        }
        Ok(())
    }

    pub fn build(&self, seed: u64) -> Result<Network> {
        self.validate()?;
        Network::new(&self.encoder, self.adapter_to, self.head_hidden, self.embed_dim, seed)
    }

    /// Desk-scale teacher: wider encoder, head straight on the pooled
    /// representation.
    pub fn desk_teacher() -> Self {
        ArchConfig {
            encoder: EncoderConfig {
                in_channels: 3,
                widths: vec![16, 32, 64],
                strides: vec![2, 2, 2],
            },
            adapter_to: None,
            head_hidden: 64,
            embed_dim: 32,
        }
    }

    /// Desk-scale student: half the teacher's width, plus an adapter that
    /// lifts the pooled features to the teacher's representation size so a
    /// transplanted head fits. Every student arm uses this same assembly;
    /// the modes differ only in head provenance and loss wiring.
    pub fn desk_student(teacher_representation: usize) -> Self {
        ArchConfig {
            encoder: EncoderConfig {
                in_channels: 3,
                widths: vec![8, 16, 32],
                strides: vec![2, 2, 2],
            },
            adapter_to: Some(teacher_representation),
            head_hidden: 64,
            embed_dim: 32,
        }
    }
}

/// Cosine decay over epochs: full rate at epoch 0, approaching zero at the
/// end of the budget.
pub fn cosine_lr(base: f32, epoch: usize, total_epochs: usize) -> f32 {
    let t = epoch as f32 / total_epochs as f32;
    base * 0.5 * (1.0 + libm::cosf(core::f32::consts::PI * t))
}

/// Keeps the v and v' banks warm-started from distinct streams.
const BANK_VIEW_SPLIT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Mutable state of one training run. Both banks always exist; the
/// single-direction modes only ever read and write the v' bank. Bank
/// identities never swap between views.
#[derive(Debug)]
pub struct DistillState {
    pub assembly: ModelAssembly,
    pub bank_v: MemoryBank,
    pub bank_v_prime: MemoryBank,
    /// First epoch the next `run_training` call will execute.
    pub epoch: usize,
    pub global_step: u64,
}

/// Assembles networks and banks for a run. Distillation modes require a
/// teacher; the baseline rejects one so a misconfigured ablation arm fails
/// loudly instead of silently ignoring the teacher.
pub fn build_state(
    student: Network,
    teacher: Option<Network>,
    cfg: &TrainConfig,
) -> Result<DistillState> {
    cfg.validate()?;
    let need_teacher = |t: Option<Network>| {
        t.ok_or_else(|| Error::Config {
            detail: format!("{} mode needs a pretrained teacher", cfg.mode),
        })
    };
    let assembly = match cfg.mode {
        Mode::BaselineMoco => {
            if teacher.is_some() {
                return Err(Error::Config {
                    detail: String::from("baseline_moco does not take a teacher"),
                });
            }
            ModelAssembly::moco(student)
        }
        Mode::Disco => ModelAssembly::distill(student, need_teacher(teacher)?, false)?,
        Mode::Retro => ModelAssembly::distill(student, need_teacher(teacher)?, true)?,
    };
    let dim = assembly.student.embed_dim();
    let bank_v = MemoryBank::init(cfg.bank_size, dim, cfg.seed)?;
    let bank_v_prime = MemoryBank::init(cfg.bank_size, dim, cfg.seed ^ BANK_VIEW_SPLIT)?;
    Ok(DistillState { assembly, bank_v, bank_v_prime, epoch: 0, global_step: 0 })
}

/// One step's worth of numbers, straight off the tape.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub epoch: usize,
    /// Global step index (not per-epoch).
    pub step: u64,
    pub lr: f32,
    pub loss_total: f64,
    /// Consistency term, already scaled by `dis_weight`.
    pub loss_dis: f64,
    /// Contrastive term, unscaled (the total applies gamma).
    pub loss_con: f64,
    /// Forward passes this step ran across student, teacher, and mean
    /// networks.
    pub forwards: u8,
    pub head_trainable: bool,
    pub bank_ptr_v: usize,
    pub bank_ptr_v_prime: usize,
}

/// Mean losses per epoch, for loss-curve reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub loss_total: f64,
    pub loss_dis: f64,
    pub loss_con: f64,
}

pub fn epoch_means(metrics: &[StepMetrics]) -> Vec<EpochSummary> {
    let mut out: Vec<EpochSummary> = Vec::new();
    for m in metrics {
        match out.last_mut() {
            Some(s) if s.epoch == m.epoch => {
                s.steps += 1;
                s.loss_total += m.loss_total;
                s.loss_dis += m.loss_dis;
                s.loss_con += m.loss_con;
            }
            _ => out.push(EpochSummary {
                epoch: m.epoch,
                steps: 1,
                loss_total: m.loss_total,
                loss_dis: m.loss_dis,
                loss_con: m.loss_con,
            }),
        }
    }
    for s in &mut out {
        let n = s.steps as f64;
        s.loss_total /= n;
        s.loss_dis /= n;
        s.loss_con /= n;
    }
    out
}

/// Sets the head's trainable flag for this epoch per the schedule. Returns
/// whether the flag flipped; flips are logged.
pub fn apply_freeze_schedule(
    student: &mut Network,
    schedule: &FreezeSchedule,
    epoch: usize,
) -> bool {
    let want = epoch >= schedule.frozen_epochs;
    let flipped = student.head.trainable() != want;
    if flipped {
        student.set_head_trainable(want);
        log::info!(
            "epoch {epoch}: projection head is now {}",
            if want { "trainable" } else { "frozen" }
        );
    }
    flipped
}

/// Shared step tail: read losses, backprop, update student, move the mean
/// network, enqueue this step's keys.
#[allow(clippy::too_many_arguments)]
fn finish_step(
    state: &mut DistillState,
    t: &mut Tape,
    traces: &[ForwardTrace],
    total: ValueId,
    dis: ValueId,
    con: ValueId,
    lr: f32,
    cfg: &TrainConfig,
    keys_v: Option<&Tensor>,
    keys_v_prime: &Tensor,
    forwards: u8,
) -> Result<StepMetrics> {
    let loss_total = t.scalar_f64(total);
    if !loss_total.is_finite() {
        return Err(Error::NonFinite {
            context: format!(
                "total loss at epoch {} step {} in {} mode (training diverged; lower the lr)",
                state.epoch, state.global_step, cfg.mode
            ),
        });
    }
    let loss_dis = t.scalar_f64(dis);
    let loss_con = t.scalar_f64(con);
    t.backward(total)?;
    if !state.assembly.student.head.trainable() {
        // contract hook: the four head leaves sit at the tail of every
        // trace, and a frozen head must never materialize a gradient
        for tr in traces {
            for &id in tr.weight_ids.iter().rev().take(4) {
                debug_assert!(t.grad(id).is_none(), "frozen head received a gradient");
            }
        }
    }
    for tr in traces {
        state.assembly.student.collect_grads(t, tr)?;
    }
    sgd_step(state.assembly.student.weights_mut(), lr, cfg.momentum, cfg.weight_decay)?;
    let ModelAssembly { student, mean, .. } = &mut state.assembly;
    mean.ema_update(student, cfg.ema_momentum)?;
    if let Some(kv) = keys_v {
        state.bank_v.enqueue_tensor(kv)?;
    }
    state.bank_v_prime.enqueue_tensor(keys_v_prime)?;
    let step = state.global_step;
    state.global_step += 1;
    Ok(StepMetrics {
        epoch: state.epoch,
        step,
        lr,
        loss_total,
        loss_dis,
        loss_con,
        forwards,
        head_trainable: state.assembly.student.head.trainable(),
        bank_ptr_v: state.bank_v.write_ptr(),
        bank_ptr_v_prime: state.bank_v_prime.write_ptr(),
    })
}

/// Plain contrastive step: student query on v against the mean network's
/// key on v' plus the v' bank. The zero consistency leaf keeps the loss
/// wiring identical to the distillation modes.
pub fn distill_step_baseline(
    state: &mut DistillState,
    views: &crate::data::ViewPair,
    cfg: &TrainConfig,
    lr: f32,
) -> Result<StepMetrics> {
    let mut t = Tape::new();
    let trace = state.assembly.student.forward(&mut t, &views.v, BnMode::Train)?;
    let keys = state.assembly.mean.forward_detached(&views.v_prime, BnMode::BatchNoUpdate)?;
    let k_pos = t.leaf_tensor(&keys);
    let negatives = state.bank_v_prime.negatives();
    let negs = t.leaf_tensor(&negatives);
    let con = info_nce(&mut t, trace.embedding, k_pos, negs, cfg.tau)?;
    let zero = t.leaf(vec![1], vec![0.0], false)?;
    let dis = t.scale(zero, cfg.dis_weight)?;
    let total = total_loss(&mut t, dis, con, cfg.gamma)?;
    finish_step(state, &mut t, &[trace], total, dis, con, lr, cfg, None, &keys, 2)
}

/// Distillation with the student's own trainable head: consistency against
/// the frozen teacher on both views plus a single-direction contrastive
/// term (query from v, key and bank from v').
pub fn distill_step_disco(
    state: &mut DistillState,
    views: &crate::data::ViewPair,
    cfg: &TrainConfig,
    lr: f32,
) -> Result<StepMetrics> {
    let (e_t, e_t_prime) = {
        let teacher = state.assembly.teacher.as_mut().ok_or_else(|| Error::Config {
            detail: String::from("distillation step without a teacher"),
        })?;
        (
            teacher.forward_detached(&views.v, BnMode::Eval)?,
            teacher.forward_detached(&views.v_prime, BnMode::Eval)?,
        )
    };
    let mut t = Tape::new();
    let trace_v = state.assembly.student.forward(&mut t, &views.v, BnMode::Train)?;
    let trace_vp = state.assembly.student.forward(&mut t, &views.v_prime, BnMode::Train)?;
    let keys = state.assembly.mean.forward_detached(&views.v_prime, BnMode::BatchNoUpdate)?;
    let et = t.leaf_tensor(&e_t);
    let etp = t.leaf_tensor(&e_t_prime);
    let dis_raw = consistency_loss(&mut t, trace_v.embedding, et, trace_vp.embedding, etp)?;
    let dis = t.scale(dis_raw, cfg.dis_weight)?;
    let k_pos = t.leaf_tensor(&keys);
    let negatives = state.bank_v_prime.negatives();
    let negs = t.leaf_tensor(&negatives);
    let con = info_nce(&mut t, trace_v.embedding, k_pos, negs, cfg.tau)?;
    let total = total_loss(&mut t, dis, con, cfg.gamma)?;
    finish_step(state, &mut t, &[trace_v, trace_vp], total, dis, con, lr, cfg, None, &keys, 5)
}

/// Head-reuse distillation step. Six forwards: the student sees both views
/// on the gradient tape, the teacher and the mean network see both views
/// detached. The contrastive term is symmetric with one bank per view; the
/// mean network's keys go to their matching banks after the loss.
pub fn distill_step_retro(
    state: &mut DistillState,
    views: &crate::data::ViewPair,
    cfg: &TrainConfig,
    lr: f32,
) -> Result<StepMetrics> {
    let (e_t, e_t_prime) = {
        let teacher = state.assembly.teacher.as_mut().ok_or_else(|| Error::Config {
            detail: String::from("distillation step without a teacher"),
        })?;
        (
            teacher.forward_detached(&views.v, BnMode::Eval)?,
            teacher.forward_detached(&views.v_prime, BnMode::Eval)?,
        )
    };
    let mut t = Tape::new();
    let trace_v = state.assembly.student.forward(&mut t, &views.v, BnMode::Train)?;
    let trace_vp = state.assembly.student.forward(&mut t, &views.v_prime, BnMode::Train)?;
    let keys_v = state.assembly.mean.forward_detached(&views.v, BnMode::BatchNoUpdate)?;
    let keys_vp = state.assembly.mean.forward_detached(&views.v_prime, BnMode::BatchNoUpdate)?;
    let et = t.leaf_tensor(&e_t);
    let etp = t.leaf_tensor(&e_t_prime);
    let dis_raw = consistency_loss(&mut t, trace_v.embedding, et, trace_vp.embedding, etp)?;
    let dis = t.scale(dis_raw, cfg.dis_weight)?;
    let k_pos_prime = t.leaf_tensor(&keys_vp);
    let k_pos = t.leaf_tensor(&keys_v);
    let negatives_prime = state.bank_v_prime.negatives();
    let negatives = state.bank_v.negatives();
    let negs_prime = t.leaf_tensor(&negatives_prime);
    let negs = t.leaf_tensor(&negatives);
    let con = symmetric_info_nce(
        &mut t,
        trace_v.embedding,
        trace_vp.embedding,
        k_pos_prime,
        k_pos,
        negs_prime,
        negs,
        cfg.tau,
    )?;
    let total = total_loss(&mut t, dis, con, cfg.gamma)?;
    finish_step(
        state,
        &mut t,
        &[trace_v, trace_vp],
        total,
        dis,
        con,
        lr,
        cfg,
        Some(&keys_v),
        &keys_vp,
        6,
    )
}

/// Runs the configured number of epochs (resuming from `state.epoch`),
/// returning the per-step metrics in order.
pub fn run_training(
    state: &mut DistillState,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    let mut metrics = Vec::new();
    for epoch in state.epoch..cfg.epochs {
        state.epoch = epoch;
        apply_freeze_schedule(&mut state.assembly.student, &cfg.freeze, epoch);
        let lr = cosine_lr(cfg.scaled_lr(), epoch, cfg.epochs);
        let order = epoch_permutation(ds.len(), cfg.seed, epoch as u64);
        for (i, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (images, _) = ds.gather(chunk)?;
            let views = two_views(&images, &cfg.aug, cfg.seed, epoch as u64, i as u64)?;
            let step = match cfg.mode {
                Mode::BaselineMoco => distill_step_baseline(state, &views, cfg, lr)?,
                Mode::Disco => distill_step_disco(state, &views, cfg, lr)?,
                Mode::Retro => distill_step_retro(state, &views, cfg, lr)?,
            };
            metrics.push(step);
        }
        state.epoch = epoch + 1;
        if let Some(last) = epoch_means(&metrics).last() {
            log::debug!(
                "epoch {epoch}: mean loss {:.4} (dis {:.4}, con {:.4})",
                last.loss_total,
                last.loss_dis,
                last.loss_con
            );
        }
    }
    Ok(metrics)
}

/// Contrastive pretraining of the teacher. Returns the trained query
/// network (encoder + head, batch-norm statistics included) and the loss
/// curve.
pub fn pretrain_teacher(
    ds: &Dataset,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<StepMetrics>)> {
    if cfg.mode != Mode::BaselineMoco {
        return Err(Error::Config {
            detail: format!("teacher pretraining runs in baseline_moco mode, got {}", cfg.mode),
        });
    }
    let query = arch.build(cfg.seed)?;
    let mut state = build_state(query, None, cfg)?;
    let metrics = run_training(&mut state, ds, cfg)?;
    Ok((state.assembly.student, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use alloc::vec;

    fn tiny_teacher() -> ArchConfig {
        ArchConfig {
            encoder: EncoderConfig { in_channels: 3, widths: vec![4, 8], strides: vec![2, 2] },
            adapter_to: None,
            head_hidden: 8,
            embed_dim: 8,
        }
    }

    fn tiny_student() -> ArchConfig {
        ArchConfig {
            encoder: EncoderConfig { in_channels: 3, widths: vec![2, 4], strides: vec![2, 2] },
            adapter_to: Some(8),
            head_hidden: 8,
            embed_dim: 8,
        }
    }

    fn tiny_cfg(mode: Mode) -> TrainConfig {
        let mut cfg = TrainConfig::defaults(mode, 2, 7);
        cfg.batch_size = 8;
        cfg.bank_size = 16;
        cfg.ema_momentum = 0.9;
        cfg
    }

    fn tiny_data(seed: u64) -> Dataset {
        generate_synthetic(2, 16, 8, seed).unwrap()
    }

    fn tiny_state(mode: Mode, cfg: &TrainConfig) -> DistillState {
        let student_arch = tiny_student();
        match mode {
            Mode::BaselineMoco => build_state(student_arch.build(cfg.seed).unwrap(), None, cfg),
            _ => {
                let teacher = tiny_teacher().build(999).unwrap();
                build_state(student_arch.build(cfg.seed).unwrap(), Some(teacher), cfg)
            }
        }
        .unwrap()
    }

    fn bits(net: &Network) -> Vec<(String, Vec<u32>)> {
        net.params()
            .iter()
            .map(|p| {
                (
                    alloc::string::ToString::to_string(p.name()),
                    p.tensor.data().iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }

    fn trainable_bits(net: &Network) -> Vec<(String, Vec<u32>)> {
        net.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| {
                (
                    alloc::string::ToString::to_string(p.name()),
                    p.tensor.data().iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [Mode::BaselineMoco, Mode::Disco, Mode::Retro] {
            assert_eq!(mode.as_str().parse::<Mode>().unwrap(), mode);
        }
        assert!(matches!("moco_v3".parse::<Mode>(), Err(Error::Parse { .. })));
    }

    #[test]
    fn cosine_schedule_starts_at_base_and_decays() {
        let base = 0.5;
        assert_eq!(cosine_lr(base, 0, 10), base);
        let mut prev = f32::INFINITY;
        for e in 0..10 {
            let lr = cosine_lr(base, e, 10);
            assert!(lr > 0.0 && lr < prev, "epoch {e}: {lr} vs {prev}");
            prev = lr;
        }
        assert!((cosine_lr(base, 5, 10) - base * 0.5).abs() < 1e-7);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let good = tiny_cfg(Mode::Retro);
        good.validate().unwrap();
        let cases: Vec<(&str, TrainConfig)> = vec![
            ("tau", TrainConfig { tau: 0.0, ..good.clone() }),
            ("gamma", TrainConfig { gamma: -1.0, ..good.clone() }),
            ("ema", TrainConfig { ema_momentum: 1.0, ..good.clone() }),
            ("momentum", TrainConfig { momentum: 1.0, ..good.clone() }),
            ("lr", TrainConfig { lr: 0.0, ..good.clone() }),
            (
                "freeze",
                TrainConfig {
                    freeze: FreezeSchedule { frozen_epochs: 1, unfrozen_epochs: 2 },
                    ..good.clone()
                },
            ),
            ("bank", TrainConfig { bank_size: 4, ..good.clone() }),
        ];
        for (what, cfg) in cases {
            assert!(cfg.validate().is_err(), "{what} should have been rejected");
        }
    }

    #[test]
    fn pretraining_loss_drops() {
        // enough samples that a batch's own stale keys rarely pollute the
        // negative pool: with N comparable to K, half of every batch finds
        // itself in the bank and the loss has nowhere to go. 16px keeps the
        // random crop from displacing most of the image content.
        let ds = generate_synthetic(2, 64, 16, 1).unwrap();
        let mut cfg = tiny_cfg(Mode::BaselineMoco);
        cfg.epochs = 5;
        cfg.freeze = FreezeSchedule::never_frozen(5);
        cfg.bank_size = 8;
        // the linear batch-size rule would leave a batch of 8 crawling
        cfg.lr = 0.5;
        let (_, metrics) = pretrain_teacher(&ds, &tiny_teacher(), &cfg).unwrap();
        let curve = epoch_means(&metrics);
        assert_eq!(curve.len(), 5);
        assert!(metrics.iter().all(|m| m.loss_total.is_finite()));
        assert!(
            curve[4].loss_con < curve[0].loss_con,
            "contrastive loss did not drop: {} -> {}",
            curve[0].loss_con,
            curve[4].loss_con
        );
    }

    #[test]
    fn zero_ema_momentum_makes_the_mean_a_copy() {
        let ds = tiny_data(2);
        let mut cfg = tiny_cfg(Mode::BaselineMoco);
        cfg.ema_momentum = 0.0;
        let mut state = tiny_state(Mode::BaselineMoco, &cfg);
        let lr = cfg.scaled_lr();
        for step in 0..3 {
            let (images, _) = ds.gather(&(0..8).collect::<Vec<_>>()).unwrap();
            let views = two_views(&images, &cfg.aug, cfg.seed, 0, step).unwrap();
            distill_step_baseline(&mut state, &views, &cfg, lr).unwrap();
            assert_eq!(
                bits(&state.assembly.student),
                bits(state.assembly.mean.net()),
                "mean network must shadow the student exactly at m = 0"
            );
        }
    }

    #[test]
    fn forward_counts_match_the_wiring() {
        for (mode, expect) in [(Mode::BaselineMoco, 2), (Mode::Disco, 5), (Mode::Retro, 6)] {
            let mut cfg = tiny_cfg(mode);
            cfg.epochs = 1;
            cfg.freeze = match mode {
                Mode::Retro => FreezeSchedule::frozen_for_all(1),
                _ => FreezeSchedule::never_frozen(1),
            };
            let mut state = tiny_state(mode, &cfg);
            let metrics = run_training(&mut state, &tiny_data(3), &cfg).unwrap();
            assert!(metrics.iter().all(|m| m.forwards == expect), "{mode}");
        }
    }

    #[test]
    fn frozen_phase_keeps_heads_and_teacher_bit_identical() {
        let cfg = tiny_cfg(Mode::Retro);
        let mut state = tiny_state(Mode::Retro, &cfg);
        let teacher_before = bits(state.assembly.teacher.as_ref().unwrap());
        let head_before: Vec<Vec<u32>> = state
            .assembly
            .student
            .head
            .params()
            .iter()
            .map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let ds = tiny_data(4);
        let metrics = run_training(&mut state, &ds, &cfg).unwrap();
        assert!(!metrics.is_empty());
        assert_eq!(teacher_before, bits(state.assembly.teacher.as_ref().unwrap()));
        let check = |net: &Network, what: &str| {
            let now: Vec<Vec<u32>> = net
                .head
                .params()
                .iter()
                .map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect())
                .collect();
            assert_eq!(head_before, now, "{what} head drifted during the frozen phase");
        };
        check(&state.assembly.student, "student");
        check(state.assembly.mean.net(), "mean");
        check(state.assembly.teacher.as_ref().unwrap(), "teacher");
    }

    #[test]
    fn logged_losses_recompose_to_the_total() {
        for mode in [Mode::BaselineMoco, Mode::Disco, Mode::Retro] {
            let mut cfg = tiny_cfg(mode);
            cfg.gamma = 0.7;
            cfg.dis_weight = 1.3;
            let mut state = tiny_state(mode, &cfg);
            let metrics = run_training(&mut state, &tiny_data(5), &cfg).unwrap();
            for m in &metrics {
                let recomposed = m.loss_dis + cfg.gamma as f64 * m.loss_con;
                assert!(
                    (m.loss_total - recomposed).abs() < 1e-6,
                    "{mode} step {}: total {} vs parts {}",
                    m.step,
                    m.loss_total,
                    recomposed
                );
            }
        }
    }

    #[test]
    fn bank_pointers_track_enqueued_rows() {
        let cfg = tiny_cfg(Mode::Retro);
        let mut state = tiny_state(Mode::Retro, &cfg);
        let ds = tiny_data(6);
        let metrics = run_training(&mut state, &ds, &cfg).unwrap();
        // 32 samples / batch 8 = 4 steps per epoch, 2 epochs, bank of 16
        assert_eq!(metrics.len(), 8);
        for m in &metrics {
            let expect = ((m.step + 1) * 8 % 16) as usize;
            assert_eq!(m.bank_ptr_v, expect, "v bank at step {}", m.step);
            assert_eq!(m.bank_ptr_v_prime, expect, "v' bank at step {}", m.step);
        }
    }

    #[test]
    fn zero_consistency_weight_walks_the_baseline_trajectory() {
        // Same student init, same seeds; the only difference is that the
        // distillation arm drags a zero-weighted consistency term and a
        // teacher along. Trainable parameters and losses must match the
        // plain contrastive run step for step.
        let ds = tiny_data(7);
        let mut base_cfg = tiny_cfg(Mode::BaselineMoco);
        base_cfg.epochs = 3;
        base_cfg.freeze = FreezeSchedule::never_frozen(3);
        let mut disco_cfg = tiny_cfg(Mode::Disco);
        disco_cfg.epochs = 3;
        disco_cfg.freeze = FreezeSchedule::never_frozen(3);
        disco_cfg.dis_weight = 0.0;
        let mut base_state = tiny_state(Mode::BaselineMoco, &base_cfg);
        let mut disco_state = tiny_state(Mode::Disco, &disco_cfg);
        let base_metrics = run_training(&mut base_state, &ds, &base_cfg).unwrap();
        let disco_metrics = run_training(&mut disco_state, &ds, &disco_cfg).unwrap();
        assert_eq!(base_metrics.len(), disco_metrics.len());
        assert!(base_metrics.len() >= 10, "want at least 10 steps of evidence");
        for (b, d) in base_metrics.iter().zip(&disco_metrics) {
            assert_eq!(b.loss_total, d.loss_total, "step {}", b.step);
            assert_eq!(b.loss_con, d.loss_con, "step {}", b.step);
            assert_eq!(d.loss_dis, 0.0, "step {}", d.step);
        }
        assert_eq!(
            trainable_bits(&base_state.assembly.student),
            trainable_bits(&disco_state.assembly.student),
            "trainable parameters diverged"
        );
    }

    #[test]
    fn freeze_flip_lands_on_the_configured_epoch() {
        let mut cfg = tiny_cfg(Mode::Retro);
        cfg.epochs = 3;
        cfg.freeze = FreezeSchedule { frozen_epochs: 2, unfrozen_epochs: 1 };
        let mut state = tiny_state(Mode::Retro, &cfg);
        let teacher_head: Vec<Vec<u32>> = state
            .assembly
            .teacher
            .as_ref()
            .unwrap()
            .head
            .params()
            .iter()
            .map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let metrics = run_training(&mut state, &tiny_data(8), &cfg).unwrap();
        for m in &metrics {
            assert_eq!(m.head_trainable, m.epoch >= 2, "epoch {} step {}", m.epoch, m.step);
        }
        // once unfrozen, the head actually moves off the teacher's bits
        let student_head: Vec<Vec<u32>> = state
            .assembly
            .student
            .head
            .params()
            .iter()
            .map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_ne!(teacher_head, student_head, "unfrozen head never trained");
    }

    #[test]
    fn divergence_aborts_with_a_diagnostic() {
        let ds = tiny_data(9);
        let mut cfg = tiny_cfg(Mode::BaselineMoco);
        cfg.lr = 1e12;
        let mut state = tiny_state(Mode::BaselineMoco, &cfg);
        let err = run_training(&mut state, &ds, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn head_reuse_saves_exactly_the_head_parameters() {
        let retro_cfg = tiny_cfg(Mode::Retro);
        let disco_cfg = tiny_cfg(Mode::Disco);
        let retro = tiny_state(Mode::Retro, &retro_cfg);
        let disco = tiny_state(Mode::Disco, &disco_cfg);
        let head = disco.assembly.student.head.param_count();
        assert!(head > 0);
        assert_eq!(
            disco.assembly.student.trainable_param_count()
                - retro.assembly.student.trainable_param_count(),
            head
        );
    }

    #[test]
    fn state_counters_advance_for_resume() {
        let cfg = tiny_cfg(Mode::Disco);
        let mut state = tiny_state(Mode::Disco, &cfg);
        let metrics = run_training(&mut state, &tiny_data(10), &cfg).unwrap();
        assert_eq!(state.epoch, 2);
        assert_eq!(state.global_step, metrics.len() as u64);
        // a second call is a no-op: the budget is already spent
        assert!(run_training(&mut state, &tiny_data(10), &cfg).unwrap().is_empty());
    }
}
