//! Encoder, adapter, and projection-head blocks plus the three-network
//! assembly (student / mean student / teacher) used during distillation.
//!
//! All parameters come from a seeded init stream, so the same seed always
//! produces a bit-identical network. A forward pass records onto a
//! caller-supplied tape and reports the leaf id of every weight so the
//! training loop can pull gradients back out. Teacher and mean-student
//! passes run on throwaway tapes and never carry gradients.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{BnMode, Tape, ValueId};
use crate::tensor::{Parameter, Tensor};

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;

/// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn fan_in_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let bound = 1.0 / libm::sqrtf(fan_in as f32);
    let dist = Uniform::new(-bound, bound);
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Stage layout of a convolutional encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Output channels per stage; the last entry is the representation dim.
    pub widths: Vec<usize>,
    /// Downsampling factor per stage.
    pub strides: Vec<usize>,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config {
                detail: String::from("encoder needs at least one stage"),
            });
        }
        if self.widths.len() != self.strides.len() {
            return Err(Error::Config {
                detail: format!(
                    "encoder has {} widths but {} strides",
                    self.widths.len(),
                    self.strides.len()
                ),
            });
        }
        if self.in_channels == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config {
                detail: String::from("encoder channel counts must be positive"),
            });
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(Error::Config {
                detail: String::from("encoder strides must be positive"),
            });
        }
        Ok(())
    }

    /// Channel count entering the final pooling layer.
    pub fn representation_dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }
}

/// conv (no bias) -> batchnorm -> relu.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Parameter,
    gamma: Parameter,
    beta: Parameter,
    running_mean: Parameter,
    running_var: Parameter,
    stride: usize,
    pad: usize,
}

impl ConvBlock {
    fn new(
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let w = fan_in_uniform(rng, fan_in, out_c * fan_in);
        ConvBlock {
            conv: Parameter::new(
                &format!("{prefix}.conv.weight"),
                Tensor::new(alloc::vec![out_c, in_c, kernel, kernel], w).expect("sized above"),
                true,
            ),
            gamma: Parameter::new(
                &format!("{prefix}.bn.gamma"),
                Tensor::filled(alloc::vec![out_c], 1.0),
                true,
            ),
            beta: Parameter::new(
                &format!("{prefix}.bn.beta"),
                Tensor::zeros(alloc::vec![out_c]),
                true,
            ),
            running_mean: Parameter::new(
                &format!("{prefix}.bn.running_mean"),
                Tensor::zeros(alloc::vec![out_c]),
                false,
            ),
            running_var: Parameter::new(
                &format!("{prefix}.bn.running_var"),
                Tensor::filled(alloc::vec![out_c], 1.0),
                false,
            ),
            stride,
            pad,
        }
    }

    fn out_channels(&self) -> usize {
        self.conv.tensor.shape()[0]
    }

    /// Records conv+bn+relu; pushes the conv/gamma/beta leaf ids onto `trace`
    /// in the same order `collect_weights_mut` yields them.
    fn forward(
        &mut self,
        t: &mut Tape,
        x: ValueId,
        mode: BnMode,
        trace: &mut Vec<ValueId>,
    ) -> Result<ValueId> {
        let w = t.leaf_param(&self.conv);
        let g = t.leaf_param(&self.gamma);
        let b = t.leaf_param(&self.beta);
        trace.push(w);
        trace.push(g);
        trace.push(b);
        let y = t.conv2d(x, w, self.stride, self.pad)?;
        let y = t.batch_norm2d(
            y,
            g,
            b,
            self.running_mean.tensor.data_mut(),
            self.running_var.tensor.data_mut(),
            mode,
            BN_MOMENTUM,
            BN_EPS,
        )?;
        t.relu(y)
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Parameter>) {
        out.push(&self.conv);
        out.push(&self.gamma);
        out.push(&self.beta);
        out.push(&self.running_mean);
        out.push(&self.running_var);
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter>) {
        out.push(&mut self.conv);
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }

    fn collect_weights_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter>) {
        out.push(&mut self.conv);
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

/// Stack of conv blocks ending in a pre-pool feature map.
///
/// Each stage uses kernel = stride + 2 with padding 1, which shrinks the
/// spatial extent by exactly the stride whenever the stride divides it
/// (a 32x32 input through strides [2,2,2] lands on 4x4).
#[derive(Debug, Clone)]
pub struct Encoder {
    stages: Vec<ConvBlock>,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(cfg.widths.len());
        let mut in_c = cfg.in_channels;
        for (i, (&out_c, &stride)) in cfg.widths.iter().zip(&cfg.strides).enumerate() {
            let prefix = format!("encoder.stage{i}");
            stages.push(ConvBlock::new(&prefix, in_c, out_c, stride + 2, stride, 1, rng));
            in_c = out_c;
        }
        Ok(Encoder { stages })
    }

    pub fn representation_dim(&self) -> usize {
        self.stages.last().expect("at least one stage").out_channels()
    }

    /// Records the full stack; returns the pre-pool feature map id.
    pub fn forward(
        &mut self,
        t: &mut Tape,
        x: ValueId,
        mode: BnMode,
        trace: &mut Vec<ValueId>,
    ) -> Result<ValueId> {
        let mut cur = x;
        for stage in &mut self.stages {
            cur = stage.forward(t, cur, mode, trace)?;
        }
        Ok(cur)
    }

    /// Pooled representation [B, D] on a throwaway tape. Used for probe and
    /// kNN feature extraction; carries no gradient state.
    pub fn pooled_features(&mut self, images: &Tensor, mode: BnMode) -> Result<Tensor> {
        let mut t = Tape::new();
        let x = t.leaf_tensor(images);
        let mut trace = Vec::new();
        let feat = self.forward(&mut t, x, mode, &mut trace)?;
        let pooled = t.global_avg_pool(feat)?;
        let out = Tensor::new(t.shape(pooled).to_vec(), t.value(pooled).to_vec())?;
        out.validate_finite("encoder pooled features")?;
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for s in &self.stages {
            s.collect_params(&mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            s.collect_params_mut(&mut out);
        }
        out
    }

    pub fn weights_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            s.collect_weights_mut(&mut out);
        }
        out
    }
}

/// 1x1 conv + batchnorm + relu placed before the final pooling so a narrow
/// student feature map can enter a wider head.
#[derive(Debug, Clone)]
pub struct Adapter {
    block: ConvBlock,
}

impl Adapter {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config {
                detail: String::from("adapter dims must be positive"),
            });
        }
        Ok(Adapter {
            block: ConvBlock::new("adapter", d_in, d_out, 1, 1, 0, rng),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.block.out_channels()
    }

    fn forward(
        &mut self,
        t: &mut Tape,
        x: ValueId,
        mode: BnMode,
        trace: &mut Vec<ValueId>,
    ) -> Result<ValueId> {
        self.block.forward(t, x, mode, trace)
    }
}

/// Two linear layers with one ReLU between them, mapping the pooled
/// representation to the embedding the losses operate on.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    fc1_w: Parameter,
    fc1_b: Parameter,
    fc2_w: Parameter,
    fc2_b: Parameter,
}

impl ProjectionHead {
    pub fn new(d_in: usize, hidden: usize, embed: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if d_in == 0 || hidden == 0 || embed == 0 {
            return Err(Error::Config {
                detail: String::from("projection head dims must be positive"),
            });
        }
        if embed > d_in {
            return Err(Error::Config {
                detail: format!("projection head embed dim {embed} exceeds input dim {d_in}"),
            });
        }
        let fc1_w = fan_in_uniform(rng, d_in, hidden * d_in);
        let fc1_b = fan_in_uniform(rng, d_in, hidden);
        let fc2_w = fan_in_uniform(rng, hidden, embed * hidden);
        let fc2_b = fan_in_uniform(rng, hidden, embed);
        Ok(ProjectionHead {
            fc1_w: Parameter::new(
                "head.fc1.weight",
                Tensor::new(alloc::vec![hidden, d_in], fc1_w)?,
                true,
            ),
            fc1_b: Parameter::new("head.fc1.bias", Tensor::new(alloc::vec![hidden], fc1_b)?, true),
            fc2_w: Parameter::new(
                "head.fc2.weight",
                Tensor::new(alloc::vec![embed, hidden], fc2_w)?,
                true,
            ),
            fc2_b: Parameter::new("head.fc2.bias", Tensor::new(alloc::vec![embed], fc2_b)?, true),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.fc1_w.tensor.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1_w.tensor.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.fc2_w.tensor.shape()[0]
    }

    /// Total parameter count (weights and biases of both layers).
    pub fn param_count(&self) -> usize {
        self.fc1_w.numel() + self.fc1_b.numel() + self.fc2_w.numel() + self.fc2_b.numel()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.fc1_w.set_trainable(trainable);
        self.fc1_b.set_trainable(trainable);
        self.fc2_w.set_trainable(trainable);
        self.fc2_b.set_trainable(trainable);
    }

    pub fn trainable(&self) -> bool {
        self.fc1_w.trainable
    }

    /// Bitwise copy of another head's parameters into this one.
    pub fn copy_from(&mut self, src: &ProjectionHead) -> Result<()> {
        for (dst, s) in [
            (&mut self.fc1_w, &src.fc1_w),
            (&mut self.fc1_b, &src.fc1_b),
            (&mut self.fc2_w, &src.fc2_w),
            (&mut self.fc2_b, &src.fc2_b),
        ] {
            if dst.tensor.shape() != s.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "transplant_head",
                    expected: crate::tensor::shape_string(dst.tensor.shape()),
                    got: crate::tensor::shape_string(s.tensor.shape()),
                });
            }
            dst.tensor.copy_from(s.tensor.data());
        }
        Ok(())
    }

    fn forward(&self, t: &mut Tape, x: ValueId, trace: &mut Vec<ValueId>) -> Result<ValueId> {
        let w1 = t.leaf_param(&self.fc1_w);
        let b1 = t.leaf_param(&self.fc1_b);
        let w2 = t.leaf_param(&self.fc2_w);
        let b2 = t.leaf_param(&self.fc2_b);
        trace.push(w1);
        trace.push(b1);
        trace.push(w2);
        trace.push(b2);
        let h = t.linear(x, w1, Some(b1))?;
        let h = t.relu(h)?;
        t.linear(h, w2, Some(b2))
    }

    pub fn params(&self) -> Vec<&Parameter> {
        alloc::vec![&self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Parameter>) {
        out.push(&mut self.fc1_w);
        out.push(&mut self.fc1_b);
        out.push(&mut self.fc2_w);
        out.push(&mut self.fc2_b);
    }
}

/// Everything one forward pass leaves behind: the embedding node and the
/// weight leaf ids, aligned with [`Network::weights_mut`] order.
#[derive(Debug)]
pub struct ForwardTrace {
    pub embedding: ValueId,
    pub weight_ids: Vec<ValueId>,
}

/// Encoder (+ optional adapter) + projection head. The same shape serves as
/// student, teacher, and pretraining query network; only the adapter's
/// presence and the trainable flags differ.
#[derive(Debug, Clone)]
pub struct Network {
    pub encoder: Encoder,
    pub adapter: Option<Adapter>,
    pub head: ProjectionHead,
}

impl Network {
    /// Builds a fresh network from a seeded init stream. `adapter_out`
    /// widens the pooled features to that many channels before the head;
    /// `None` feeds the encoder representation straight in.
    pub fn new(
        enc_cfg: &EncoderConfig,
        adapter_out: Option<usize>,
        head_hidden: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::stream_tagged(seed, rng::tag::INIT);
        let encoder = Encoder::new(enc_cfg, &mut rng)?;
        let d = encoder.representation_dim();
        let adapter = match adapter_out {
            Some(out) => Some(Adapter::new(d, out, &mut rng)?),
            None => None,
        };
        let head_in = adapter_out.unwrap_or(d);
        let head = ProjectionHead::new(head_in, head_hidden, embed_dim, &mut rng)?;
        Ok(Network { encoder, adapter, head })
    }

    pub fn head_input_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.head.embed_dim()
    }

    /// Records encoder -> adapter -> pool -> head -> l2 normalize.
    pub fn forward(&mut self, t: &mut Tape, images: &Tensor, mode: BnMode) -> Result<ForwardTrace> {
        let x = t.leaf_tensor(images);
        let mut weight_ids = Vec::new();
        let mut feat = self.encoder.forward(t, x, mode, &mut weight_ids)?;
        if let Some(a) = &mut self.adapter {
            feat = a.forward(t, feat, mode, &mut weight_ids)?;
        }
        let pooled = t.global_avg_pool(feat)?;
        let raw = self.head.forward(t, pooled, &mut weight_ids)?;
        let embedding = t.l2_normalize_rows(raw)?;
        Ok(ForwardTrace { embedding, weight_ids })
    }

    /// Same pass on a throwaway tape, returning the embedding by value.
    /// Used for the teacher and anywhere gradients are not wanted.
    pub fn forward_detached(&mut self, images: &Tensor, mode: BnMode) -> Result<Tensor> {
        let mut t = Tape::new();
        let trace = self.forward(&mut t, images, mode)?;
        let out = Tensor::new(
            t.shape(trace.embedding).to_vec(),
            t.value(trace.embedding).to_vec(),
        )?;
        out.validate_finite("detached embedding")?;
        Ok(out)
    }

    /// Pulls gradients off the tape into the parameters, accumulating when
    /// the same weight appeared in several forwards. Frozen weights have no
    /// gradient on the tape and are skipped.
    pub fn collect_grads(&mut self, t: &mut Tape, trace: &ForwardTrace) -> Result<()> {
        let mut weights = self.weights_mut();
        if weights.len() != trace.weight_ids.len() {
            return Err(Error::NameSetMismatch {
                detail: format!(
                    "trace has {} weight ids, network has {} weights",
                    trace.weight_ids.len(),
                    weights.len()
                ),
            });
        }
        for (p, &id) in weights.iter_mut().zip(&trace.weight_ids) {
            if let Some(g) = t.take_grad(id) {
                p.tensor.accumulate_grad(&g);
            }
        }
        Ok(())
    }

    /// Every tensor, including BN running stats. Order is stable; names are
    /// unique. This is the EMA / checkpoint view.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = self.encoder.params();
        if let Some(a) = &self.adapter {
            a.block.collect_params(&mut out);
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.encoder.params_mut();
        if let Some(a) = &mut self.adapter {
            a.block.collect_params_mut(&mut out);
        }
        self.head.collect_params_mut(&mut out);
        out
    }

    /// The optimizer view: conv/bn weights plus head layers, no running
    /// stats. Aligned with the ids a forward pushes into its trace.
    pub fn weights_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.encoder.weights_mut();
        if let Some(a) = &mut self.adapter {
            a.block.collect_weights_mut(&mut out);
        }
        self.head.collect_params_mut(&mut out);
        out
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.numel())
            .sum()
    }

    pub fn set_head_trainable(&mut self, trainable: bool) {
        self.head.set_trainable(trainable);
    }

    pub fn freeze_all(&mut self) {
        for p in self.params_mut() {
            p.set_trainable(false);
        }
    }
}

/// Copies the source head's parameters into the destination network's head,
/// bit-exact. Fails when the geometries differ (that is what the adapter is
/// for). Idempotent.
pub fn transplant_head(src: &Network, dst: &mut Network) -> Result<()> {
    dst.head.copy_from(&src.head)
}

/// EMA shadow of a network. The running average lives in f64 so thousands
/// of small updates do not lose mass to f32 rounding; the f32 tensors the
/// forwards read are rematerialized after every update.
#[derive(Debug, Clone)]
pub struct MeanNetwork {
    net: Network,
    masters: Vec<Vec<f64>>,
}

impl MeanNetwork {
    /// Starts as a bit-exact copy of `src` with every flag frozen.
    pub fn from_network(src: &Network) -> Self {
        let mut net = src.clone();
        net.freeze_all();
        for p in net.params_mut() {
            p.momentum = None;
            p.tensor.grad = None;
        }
        let masters = net
            .params()
            .iter()
            .map(|p| p.tensor.data().iter().map(|&v| v as f64).collect())
            .collect();
        MeanNetwork { net, masters }
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn forward_detached(&mut self, images: &Tensor, mode: BnMode) -> Result<Tensor> {
        self.net.forward_detached(images, mode)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.net.params()
    }

    /// The f64 running averages, one `(name, values)` pair per tensor.
    pub fn masters(&self) -> Vec<(&str, &[f64])> {
        self.net
            .params()
            .iter()
            .zip(&self.masters)
            .map(|(p, m)| (p.name(), m.as_slice()))
            .collect()
    }

    /// Restores one master from a checkpoint and rematerializes its f32 view.
    pub fn set_master(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let idx = self
            .net
            .params()
            .iter()
            .position(|p| p.name() == name)
            .ok_or_else(|| Error::NameSetMismatch {
                detail: format!("no mean-network tensor named `{name}`"),
            })?;
        if data.len() != self.masters[idx].len() {
            return Err(Error::ShapeMismatch {
                op: "set_master",
                expected: format!("[{}]", self.masters[idx].len()),
                got: format!("[{}]", data.len()),
            });
        }
        self.masters[idx].copy_from_slice(data);
        let mut params = self.net.params_mut();
        let dst = params[idx].tensor.data_mut();
        for (d, &m) in dst.iter_mut().zip(data) {
            *d = m as f32;
        }
        Ok(())
    }

    /// θ_k ← m·θ_k + (1−m)·θ_q over every tensor, running stats included.
    ///
    /// Computed in delta form `x += (1−m)(q−x)` so a tensor whose source
    /// never moves stays bit-identical forever; m = 0 copies exactly.
    pub fn ema_update(&mut self, student: &Network, m: f64) -> Result<()> {
        if !(0.0..1.0).contains(&m) {
            return Err(Error::Config {
                detail: format!("ema momentum must be in [0,1), got {m}"),
            });
        }
        self.check_name_sets(student)?;
        let src = student.params();
        for ((master, sp), mp) in self.masters.iter_mut().zip(&src).zip(self.net.params_mut()) {
            let q = sp.tensor.data();
            if m == 0.0 {
                for (x, &qv) in master.iter_mut().zip(q) {
                    *x = qv as f64;
                }
            } else {
                for (x, &qv) in master.iter_mut().zip(q) {
                    *x += (1.0 - m) * (qv as f64 - *x);
                }
            }
            let dst = mp.tensor.data_mut();
            for (d, &x) in dst.iter_mut().zip(master.iter()) {
                *d = x as f32;
            }
        }
        Ok(())
    }

    fn check_name_sets(&self, student: &Network) -> Result<()> {
        let mine = self.net.params();
        let theirs = student.params();
        let aligned = mine.len() == theirs.len()
            && mine
                .iter()
                .zip(&theirs)
                .all(|(a, b)| a.name() == b.name() && a.numel() == b.numel());
        if aligned {
            return Ok(());
        }
        let a: BTreeSet<&str> = mine.iter().map(|p| p.name()).collect();
        let b: BTreeSet<&str> = theirs.iter().map(|p| p.name()).collect();
        let only_mean: Vec<&str> = a.difference(&b).copied().collect();
        let only_student: Vec<&str> = b.difference(&a).copied().collect();
        Err(Error::NameSetMismatch {
            detail: format!(
                "only in mean network: {only_mean:?}; only in student: {only_student:?}"
            ),
        })
    }
}

/// The three networks a distillation step touches. `teacher` is `None` for
/// plain contrastive pretraining, where only query (student) and key (mean)
/// networks exist.
#[derive(Debug)]
pub struct ModelAssembly {
    pub student: Network,
    pub mean: MeanNetwork,
    pub teacher: Option<Network>,
}

impl ModelAssembly {
    /// Query network plus EMA key network; no teacher.
    pub fn moco(student: Network) -> Self {
        let mean = MeanNetwork::from_network(&student);
        ModelAssembly { student, mean, teacher: None }
    }

    /// Student under a frozen teacher. With `reuse_teacher_head` the
    /// teacher's head is transplanted into the student (and hence into the
    /// mean network) before the EMA copy is taken, and starts out frozen.
    /// Dimension problems surface here, not at forward time.
    pub fn distill(
        mut student: Network,
        mut teacher: Network,
        reuse_teacher_head: bool,
    ) -> Result<Self> {
        teacher.freeze_all();
        if student.embed_dim() != teacher.embed_dim() {
            return Err(Error::Config {
                detail: format!(
                    "student embeds to {} dims but teacher to {}",
                    student.embed_dim(),
                    teacher.embed_dim()
                ),
            });
        }
        if reuse_teacher_head {
            if student.head_input_dim() != teacher.head_input_dim() {
                return Err(Error::Config {
                    detail: format!(
                        "teacher head expects {} input dims, student provides {}; \
                         size the adapter to the teacher representation",
                        teacher.head_input_dim(),
                        student.head_input_dim()
                    ),
                });
            }
            transplant_head(&teacher, &mut student)?;
            student.set_head_trainable(false);
        }
        let mean = MeanNetwork::from_network(&student);
        Ok(ModelAssembly { student, mean, teacher: Some(teacher) })
    }
}
