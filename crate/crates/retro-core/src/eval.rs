//! Evaluation harness: linear probing on frozen features, cosine kNN, and
//! semi-supervised fine-tuning on label fractions.
//!
//! Every entry point is a pure function of (weights, datasets, config,
//! seed): the classifier starts from zeros, permutations are keyed, and all
//! similarity math runs in f64, so single-threaded replays reproduce every
//! number exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{epoch_permutation, label_fraction_subset, Dataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::{Encoder, Network};
use crate::optim::sgd_step;
use crate::tape::{BnMode, Tape};
use crate::tensor::{Parameter, Tensor};

/// Classifier-training knobs shared by the probe and the fine-tune paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f32,
    /// Fractions of the epoch budget at which the lr divides by
    /// `drop_factor`; strictly increasing, all in (0,1).
    pub milestones: Vec<f32>,
    pub drop_factor: f32,
    pub batch_size: usize,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl ProbeConfig {
    /// High-lr linear-eval convention: 30 epochs at lr 3 with factor-10
    /// drops after 60% and 80% of the budget.
    pub fn desk_default(seed: u64) -> Self {
        ProbeConfig {
            epochs: 30,
            lr: 3.0,
            milestones: vec![0.6, 0.8],
            drop_factor: 10.0,
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Config { detail });
        if self.epochs == 0 || self.batch_size == 0 {
            return bad(String::from("epochs and batch_size must be positive"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !self.drop_factor.is_finite() || self.drop_factor <= 0.0 {
            return bad(format!("drop_factor must be positive, got {}", self.drop_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        let mut prev = 0.0f32;
        for &m in &self.milestones {
            if !(m > prev && m < 1.0) {
                return bad(format!(
                    "milestones must be strictly increasing within (0,1), got {:?}",
                    self.milestones
                ));
            }
            prev = m;
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f32 {
        let drops = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f32) as usize)
            .count();
        let mut lr = self.lr;
        for _ in 0..drops {
            lr /= self.drop_factor;
        }
        lr
    }

    fn fingerprint(&self, kind: &str, extra: u64) -> u64 {
        let desc = format!(
            "{kind}|epochs={}|lr={:?}|milestones={:?}|drop={:?}|batch={}|momentum={:?}|wd={:?}|seed={}|extra={extra}",
            self.epochs,
            self.lr,
            self.milestones,
            self.drop_factor,
            self.batch_size,
            self.momentum,
            self.weight_decay,
            self.seed,
        );
        fnv1a(desc.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Accuracy summary of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    /// Accuracy per class index; classes absent from the test set read 0.
    pub per_class: Vec<f64>,
    /// Fingerprint of the configuration (and subset, where one applies)
    /// that produced the numbers.
    pub config_hash: u64,
}

impl EvalReport {
    pub fn new(top1: f64, top5: f64, per_class: Vec<f64>, config_hash: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&top1) || !(0.0..=1.0).contains(&top5) || top1 > top5 {
            return Err(Error::Config {
                detail: format!("accuracies must satisfy 0 <= top1 <= top5 <= 1, got {top1}/{top5}"),
            });
        }
        Ok(EvalReport { top1, top5, per_class, config_hash })
    }
}

/// Class indices ranked by descending score, equal scores by ascending
/// class. Total order, so rankings never depend on sort internals.
fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
    });
    idx
}

/// Builds a report from per-sample class scores.
fn report_from_scores(
    scores: &[Vec<f64>],
    labels: &[usize],
    class_count: usize,
    config_hash: u64,
) -> Result<EvalReport> {
    assert!(scores.len() == labels.len(), "one score row per label");
    let mut hit1 = 0usize;
    let mut hit5 = 0usize;
    let mut class_total = vec![0usize; class_count];
    let mut class_hit = vec![0usize; class_count];
    let cutoff = class_count.min(5);
    for (row, &label) in scores.iter().zip(labels) {
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { context: String::from("evaluation scores") });
        }
        let ranking = rank_desc(row);
        class_total[label] += 1;
        if ranking[0] == label {
            hit1 += 1;
            class_hit[label] += 1;
        }
        if ranking[..cutoff].contains(&label) {
            hit5 += 1;
        }
    }
    let n = labels.len() as f64;
    let per_class = class_hit
        .iter()
        .zip(&class_total)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    EvalReport::new(hit1 as f64 / n, hit5 as f64 / n, per_class, config_hash)
}

/// Pooled eval-mode encoder features for a whole dataset, as [N, D].
/// Processed in fixed-size batches; eval-mode normalization is per-sample,
/// so the split cannot change any value.
pub fn pooled_dataset_features(
    encoder: &mut Encoder,
    ds: &Dataset,
    batch: usize,
) -> Result<Tensor> {
    assert!(batch > 0, "batch must be positive");
    let n = ds.len();
    let d = encoder.representation_dim();
    let mut data = Vec::with_capacity(n * d);
    let mut at = 0;
    while at < n {
        let hi = (at + batch).min(n);
        let idx: Vec<usize> = (at..hi).collect();
        let (images, _) = ds.gather(&idx)?;
        let feats = encoder.pooled_features(&images, BnMode::Eval)?;
        data.extend_from_slice(feats.data());
        at = hi;
    }
    Tensor::new(vec![n, d], data)
}

fn check_class_counts(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.class_count != test.class_count {
        return Err(Error::Config {
            detail: format!(
                "train set has {} classes but test set has {}",
                train.class_count, test.class_count
            ),
        });
    }
    Ok(())
}

fn gather_rows(feats: &Tensor, idx: &[usize]) -> Tensor {
    let d = feats.shape()[1];
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        out.extend_from_slice(&feats.data()[i * d..(i + 1) * d]);
    }
    Tensor::new(vec![idx.len(), d], out).unwrap()
}

/// Zero-initialized linear classifier; the zeros make every evaluation
/// deterministic without touching an RNG, and a single linear layer needs
/// no symmetry breaking.
fn fresh_classifier(d: usize, classes: usize) -> (Parameter, Parameter) {
    let w = Parameter::new("classifier.weight", Tensor::zeros(vec![classes, d]), true);
    let b = Parameter::new("classifier.bias", Tensor::zeros(vec![classes]), true);
    (w, b)
}

fn logits_to_scores(logits: &Tensor) -> Vec<Vec<f64>> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| row.iter().map(|&v| v as f64).collect())
        .collect()
}

/// Trains a softmax probe on frozen pooled features and reports test
/// accuracy. The encoder is read-only: features are extracted once in eval
/// mode and never touched again.
pub fn linear_probe(
    encoder: &mut Encoder,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProbeConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_class_counts(train, test)?;
    let classes = train.class_count;
    let train_feats = pooled_dataset_features(encoder, train, cfg.batch_size.max(64))?;
    let test_feats = pooled_dataset_features(encoder, test, cfg.batch_size.max(64))?;
    let d = train_feats.shape()[1];
    let (mut w, mut b) = fresh_classifier(d, classes);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_permutation(train.len(), cfg.seed, epoch as u64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather_rows(&train_feats, chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut t = Tape::new();
            let x = t.leaf_tensor(&batch);
            let wid = t.leaf_param(&w);
            let bid = t.leaf_param(&b);
            let logits = t.linear(x, wid, Some(bid))?;
            let loss = t.cross_entropy(logits, &labels)?;
            if !t.scalar_f64(loss).is_finite() {
                return Err(Error::NonFinite {
                    context: format!("probe loss at epoch {epoch}"),
                });
            }
            t.backward(loss)?;
            if let Some(g) = t.take_grad(wid) {
                w.tensor.accumulate_grad(&g);
            }
            if let Some(g) = t.take_grad(bid) {
                b.tensor.accumulate_grad(&g);
            }
            sgd_step([&mut w, &mut b], lr, cfg.momentum, cfg.weight_decay)?;
        }
    }
    let mut t = Tape::new();
    let x = t.leaf_tensor(&test_feats);
    let wid = t.leaf_param(&w);
    let bid = t.leaf_param(&b);
    let logits_id = t.linear(x, wid, Some(bid))?;
    let logits = Tensor::new(t.shape(logits_id).to_vec(), t.value(logits_id).to_vec())?;
    report_from_scores(
        &logits_to_scores(&logits),
        &test.labels,
        classes,
        cfg.fingerprint("linear_probe", 0),
    )
}

/// Predicted labels from a cosine k-nearest-neighbor vote. Rows need not be
/// normalized; similarities are computed on unit vectors in f64. Neighbor
/// ties break toward the lower training index, vote ties toward the lower
/// class index.
pub fn knn_predict(
    train_feats: &Tensor,
    train_labels: &[usize],
    test_feats: &Tensor,
    k: usize,
    class_count: usize,
) -> Result<Vec<usize>> {
    let n = train_feats.shape()[0];
    let d = train_feats.shape()[1];
    if train_labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "knn",
            expected: format!("{n} labels"),
            got: format!("{}", train_labels.len()),
        });
    }
    if k == 0 || k > n {
        return Err(Error::Config {
            detail: format!("k must be in 1..={n} (train size), got {k}"),
        });
    }
    if test_feats.shape().len() != 2 || test_feats.shape()[1] != d {
        return Err(Error::ShapeMismatch {
            op: "knn",
            expected: format!("test features [*, {d}]"),
            got: format!("{:?}", test_feats.shape()),
        });
    }
    let unit = |t: &Tensor| -> Vec<f64> {
        t.data()
            .chunks(d)
            .flat_map(|row| {
                let norm = libm::sqrt(linalg::dot_f64(row, row)).max(1e-12);
                row.iter().map(move |&v| v as f64 / norm)
            })
            .collect()
    };
    let train_u = unit(train_feats);
    let test_u = unit(test_feats);
    let mut out = Vec::with_capacity(test_feats.shape()[0]);
    for q in test_u.chunks(d) {
        let mut sims: Vec<(f64, usize)> = train_u
            .chunks(d)
            .enumerate()
            .map(|(i, r)| (q.iter().zip(r).map(|(a, b)| a * b).sum::<f64>(), i))
            .collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; class_count];
        for &(_, i) in &sims[..k] {
            votes[train_labels[i]] += 1;
        }
        let scores: Vec<f64> = votes.iter().map(|&v| v as f64).collect();
        out.push(rank_desc(&scores)[0]);
    }
    Ok(out)
}

/// kNN evaluation in pooled representation space. `top5` ranks classes by
/// vote count with the same tie order as the prediction.
pub fn knn_eval(
    encoder: &mut Encoder,
    train: &Dataset,
    test: &Dataset,
    k: usize,
) -> Result<EvalReport> {
    check_class_counts(train, test)?;
    let classes = train.class_count;
    let train_feats = pooled_dataset_features(encoder, train, 256)?;
    let test_feats = pooled_dataset_features(encoder, test, 256)?;
    // reuse the prediction path for correctness, then recompute vote scores
    // for the top-5 ranking
    let n = train.len();
    if k == 0 || k > n {
        return Err(Error::Config {
            detail: format!("k must be in 1..={n} (train size), got {k}"),
        });
    }
    let d = train_feats.shape()[1];
    let unit = |t: &Tensor| -> Vec<f64> {
        t.data()
            .chunks(d)
            .flat_map(|row| {
                let norm = libm::sqrt(linalg::dot_f64(row, row)).max(1e-12);
                row.iter().map(move |&v| v as f64 / norm)
            })
            .collect()
    };
    let train_u = unit(&train_feats);
    let test_u = unit(&test_feats);
    let mut scores = Vec::with_capacity(test.len());
    for q in test_u.chunks(d) {
        let mut sims: Vec<(f64, usize)> = train_u
            .chunks(d)
            .enumerate()
            .map(|(i, r)| (q.iter().zip(r).map(|(a, b)| a * b).sum::<f64>(), i))
            .collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0.0f64; classes];
        for &(_, i) in &sims[..k] {
            votes[train.labels[i]] += 1.0;
        }
        scores.push(votes);
    }
    let hash = fnv1a(format!("knn|k={k}|n_train={n}|n_test={}", test.len()).as_bytes());
    report_from_scores(&scores, &test.labels, classes, hash)
}

/// Core of the fine-tune path: trains encoder + classifier jointly on the
/// given training set and reports test accuracy. Train-mode normalization,
/// so the encoder's running statistics move with the fine-tune.
fn finetune_on(
    net: &mut Network,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProbeConfig,
    config_hash: u64,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_class_counts(train, test)?;
    let classes = train.class_count;
    let d = net.encoder.representation_dim();
    let (mut w, mut b) = fresh_classifier(d, classes);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_permutation(train.len(), cfg.seed, epoch as u64);
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = train.gather(chunk)?;
            let mut t = Tape::new();
            let x = t.leaf_tensor(&images);
            let mut ids = Vec::new();
            let feat = net.encoder.forward(&mut t, x, BnMode::Train, &mut ids)?;
            let pooled = t.global_avg_pool(feat)?;
            let wid = t.leaf_param(&w);
            let bid = t.leaf_param(&b);
            let logits = t.linear(pooled, wid, Some(bid))?;
            let loss = t.cross_entropy(logits, &labels)?;
            if !t.scalar_f64(loss).is_finite() {
                return Err(Error::NonFinite {
                    context: format!("fine-tune loss at epoch {epoch}"),
                });
            }
            t.backward(loss)?;
            for (p, id) in net.encoder.weights_mut().into_iter().zip(&ids) {
                if let Some(g) = t.take_grad(*id) {
                    p.tensor.accumulate_grad(&g);
                }
            }
            if let Some(g) = t.take_grad(wid) {
                w.tensor.accumulate_grad(&g);
            }
            if let Some(g) = t.take_grad(bid) {
                b.tensor.accumulate_grad(&g);
            }
            let params = net.encoder.weights_mut().into_iter().chain([&mut w, &mut b]);
            sgd_step(params, lr, cfg.momentum, cfg.weight_decay)?;
        }
    }
    let test_feats = pooled_dataset_features(&mut net.encoder, test, cfg.batch_size.max(64))?;
    let mut t = Tape::new();
    let x = t.leaf_tensor(&test_feats);
    let wid = t.leaf_param(&w);
    let bid = t.leaf_param(&b);
    let logits_id = t.linear(x, wid, Some(bid))?;
    let logits = Tensor::new(t.shape(logits_id).to_vec(), t.value(logits_id).to_vec())?;
    report_from_scores(&logits_to_scores(&logits), &test.labels, classes, config_hash)
}

/// Fine-tunes the whole encoder plus a fresh classifier on a stratified
/// label fraction. The report's fingerprint covers the exact subset, so
/// identical seeds are verifiably identical data.
pub fn semi_supervised_finetune(
    net: &mut Network,
    train: &Dataset,
    test: &Dataset,
    fraction: f64,
    cfg: &ProbeConfig,
) -> Result<EvalReport> {
    let (subset, picked) = label_fraction_subset(train, fraction, cfg.seed)?;
    let subset_hash = crate::data::index_hash(&picked);
    let hash = cfg.fingerprint("finetune", subset_hash);
    finetune_on(net, &subset, test, cfg, hash)
}
