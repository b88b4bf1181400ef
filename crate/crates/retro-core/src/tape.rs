//! Define-by-run reverse-mode autodiff.
//!
//! A `Tape` is rebuilt on every forward pass. Recording an op executes it
//! immediately and stores the inputs/saved context needed for the backward
//! rule; `backward` walks the node list in reverse once and accumulates
//! gradients. Values are f32; reductions (sums, means, logsumexp, norms,
//! batch statistics, cross-entropy) accumulate in f64, and scalar losses
//! keep an f64 readout alongside the f32 value so finite-difference checks
//! are not limited by f32 cancellation.
//!
//! Gradients flow only into nodes with `requires_grad`; a frozen parameter
//! enters the tape as a non-tracked leaf and never materializes a gradient
//! buffer.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::mem;

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{numel_of, shape_string, Parameter, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(u32);

impl ValueId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// How batch normalization sources its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running buffers updated (trained network).
    Train,
    /// Batch statistics; running buffers left untouched (EMA network,
    /// whose buffers follow the student via the EMA instead).
    BatchNoUpdate,
    /// Running statistics; nothing updated (frozen teacher, probes).
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// y[B,O] = x[B,I] . w[O,I]^T + b[O]
    Linear { x: ValueId, w: ValueId, b: Option<ValueId> },
    /// y[B,F,OH,OW]; w is [F,C,K,K]; `cols` is the saved im2col buffer
    /// ([B*OH*OW, C*K*K]), kept only when a gradient will be needed.
    Conv2d { x: ValueId, w: ValueId, stride: usize, pad: usize, cols: Option<Vec<f32>> },
    Relu { x: ValueId },
    /// Saved statistics are the ones used for normalization (batch or
    /// running, depending on mode).
    BatchNorm2d {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        mode: BnMode,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
    },
    GlobalAvgPool { x: ValueId },
    /// Row-wise x / ||x||; `inv_norm` has one entry per row.
    L2NormalizeRows { x: ValueId, inv_norm: Vec<f32> },
    /// y[M,N] = a[M,K] . b[N,K]^T
    MatMulNT { a: ValueId, b: ValueId },
    /// y[B] = sum_e a[B,e] * b[B,e]
    RowDot { a: ValueId, b: ValueId },
    ConcatCols { a: ValueId, b: ValueId },
    /// y[B] = log sum_c exp(x[B,c]), computed with max subtraction.
    LogSumExpRows { x: ValueId },
    /// y[B] = x[B, j]
    ColumnAt { x: ValueId, j: usize },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Scale { x: ValueId, c: f32 },
    Reshape { x: ValueId },
    MeanAll { x: ValueId },
    SumAll { x: ValueId },
    /// Mean softmax cross-entropy against integer labels; `probs` is the
    /// saved softmax.
    CrossEntropy { logits: ValueId, labels: Vec<usize>, probs: Vec<f32> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    /// High-precision readout for scalar reductions and their affine
    /// combinations.
    value_f64: Option<f64>,
    op: Op,
}

/// Gradient tape; one per forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, op: Op) -> ValueId {
        debug_assert_eq!(numel_of(&shape), data.len());
        self.nodes.push(Node { shape, data, grad: None, requires_grad, value_f64: None, op });
        ValueId((self.nodes.len() - 1) as u32)
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Result<ValueId> {
        let n = numel_of(&shape);
        if shape.is_empty() || n == 0 {
            return Err(Error::Degenerate { op: "leaf", detail: format!("empty shape {}", shape_string(&shape)) });
        }
        if data.len() != n {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                expected: format!("{n} elements"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    pub fn leaf_tensor(&mut self, t: &Tensor) -> ValueId {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad, Op::Leaf)
    }

    pub fn leaf_param(&mut self, p: &Parameter) -> ValueId {
        self.push(p.tensor.shape().to_vec(), p.tensor.data().to_vec(), p.trainable, Op::Leaf)
    }

    // ── accessors ───────────────────────────────────────────────────────

    pub fn value(&self, id: ValueId) -> &[f32] {
        &self.nodes[id.idx()].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.idx()].shape
    }

    pub fn scalar(&self, id: ValueId) -> f32 {
        self.nodes[id.idx()].data[0]
    }

    /// f64 readout of a scalar; falls back to the f32 value when the node
    /// is not a reduction.
    pub fn scalar_f64(&self, id: ValueId) -> f64 {
        let n = &self.nodes[id.idx()];
        n.value_f64.unwrap_or(n.data[0] as f64)
    }

    pub fn grad(&self, id: ValueId) -> Option<&[f32]> {
        self.nodes[id.idx()].grad.as_deref()
    }

    pub fn take_grad(&mut self, id: ValueId) -> Option<Vec<f32>> {
        self.nodes[id.idx()].grad.take()
    }

    fn rg(&self, id: ValueId) -> bool {
        self.nodes[id.idx()].requires_grad
    }

    fn dims2(&self, id: ValueId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                expected: "rank-2 tensor".to_string(),
                got: shape_string(s),
            });
        }
        Ok((s[0], s[1]))
    }

    fn dims4(&self, id: ValueId, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        let s = self.shape(id);
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op,
                expected: "rank-4 tensor".to_string(),
                got: shape_string(s),
            });
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    // ── ops ─────────────────────────────────────────────────────────────

    pub fn linear(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        let (bsz, i) = self.dims2(x, "linear")?;
        let (o, wi) = self.dims2(w, "linear")?;
        if wi != i {
            return Err(Error::ShapeMismatch {
                op: "linear",
                expected: format!("weight [O,{i}] to match input {}", shape_string(self.shape(x))),
                got: shape_string(self.shape(w)),
            });
        }
        if let Some(bid) = b {
            let bs = self.shape(bid);
            if bs != [o] {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    expected: format!("bias [{o}]"),
                    got: shape_string(bs),
                });
            }
        }
        let mut out = vec![0.0f32; bsz * o];
        linalg::matmul_nt(self.value(x), self.value(w), bsz, i, o, &mut out);
        if let Some(bid) = b {
            let bias = self.value(bid);
            for r in 0..bsz {
                for (c, bv) in bias.iter().enumerate() {
                    out[r * o + c] += bv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.map(|bid| self.rg(bid)).unwrap_or(false);
        Ok(self.push(vec![bsz, o], out, rg, Op::Linear { x, w, b }))
    }

    pub fn conv2d(&mut self, x: ValueId, w: ValueId, stride: usize, pad: usize) -> Result<ValueId> {
        let (bsz, c, h, wd) = self.dims4(x, "conv2d")?;
        let (f, wc, kh, kw) = self.dims4(w, "conv2d")?;
        if wc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: format!("kernel in-channels {c}"),
                got: shape_string(self.shape(w)),
            });
        }
        if kh != kw {
            return Err(Error::BadDim { op: "conv2d", detail: format!("non-square kernel {kh}x{kw}") });
        }
        if stride == 0 {
            return Err(Error::BadDim { op: "conv2d", detail: "stride 0".to_string() });
        }
        let ph = h + 2 * pad;
        let pw = wd + 2 * pad;
        if kh > ph || kw > pw {
            return Err(Error::BadDim {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}"),
            });
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::BadDim {
                op: "conv2d",
                detail: format!(
                    "stride {stride} does not divide padded extent ({ph}-{kh}, {pw}-{kw}); output size would be fractional"
                ),
            });
        }
        let oh = (ph - kh) / stride + 1;
        let ow = (pw - kw) / stride + 1;
        let k = c * kh * kw;
        let m = bsz * oh * ow;

        let mut cols = vec![0.0f32; m * k];
        im2col(self.value(x), bsz, c, h, wd, kh, stride, pad, oh, ow, &mut cols);

        // rows[M,F] = cols . w^T, then transpose per image into [B,F,OH,OW].
        let mut rows = vec![0.0f32; m * f];
        linalg::matmul_nt(&cols, self.value(w), m, k, f, &mut rows);
        let mut out = vec![0.0f32; bsz * f * oh * ow];
        let hw = oh * ow;
        for b in 0..bsz {
            for p in 0..hw {
                let r = (b * hw + p) * f;
                let o = b * f * hw + p;
                for fi in 0..f {
                    out[o + fi * hw] = rows[r + fi];
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        let saved = if rg { Some(cols) } else { None };
        Ok(self.push(vec![bsz, f, oh, ow], out, rg, Op::Conv2d { x, w, stride, pad, cols: saved }))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let out: Vec<f32> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, rg, Op::Relu { x }))
    }

    /// Batch normalization over the channel axis of a [B,C,H,W] input.
    ///
    /// `running_mean` / `running_var` are the caller-owned buffers; in
    /// `Train` mode they are updated in place with momentum `momentum`
    /// (running variance uses the unbiased batch variance), in `Eval` mode
    /// they supply the statistics, and in `BatchNoUpdate` they are ignored.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &mut [f32],
        running_var: &mut [f32],
        mode: BnMode,
        momentum: f32,
        eps: f32,
    ) -> Result<ValueId> {
        let (bsz, c, h, w) = self.dims4(x, "batch_norm2d")?;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(id);
            if s != [c] {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm2d",
                    expected: format!("{name} [{c}]"),
                    got: shape_string(s),
                });
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::ShapeMismatch {
                op: "batch_norm2d",
                expected: format!("running buffers [{c}]"),
                got: format!("[{}], [{}]", running_mean.len(), running_var.len()),
            });
        }
        let n = bsz * h * w;
        if matches!(mode, BnMode::Train | BnMode::BatchNoUpdate) && n < 2 {
            return Err(Error::Degenerate {
                op: "batch_norm2d",
                detail: format!("batch statistics need at least 2 values per channel, got {n}"),
            });
        }

        let hw = h * w;
        let (mean, inv_std) = match mode {
            BnMode::Train | BnMode::BatchNoUpdate => {
                let mut mean = vec![0.0f32; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    let mut s2 = 0.0f64;
                    for b in 0..bsz {
                        let base = (b * c + ch) * hw;
                        for v in &self.value(x)[base..base + hw] {
                            let v = *v as f64;
                            s += v;
                            s2 += v * v;
                        }
                    }
                    let m = s / n as f64;
                    mean[ch] = m as f32;
                    var[ch] = (s2 / n as f64 - m * m).max(0.0);
                }
                if matches!(mode, BnMode::Train) {
                    let unbias = n as f64 / (n as f64 - 1.0);
                    for ch in 0..c {
                        let mom = momentum as f64;
                        running_mean[ch] =
                            ((1.0 - mom) * running_mean[ch] as f64 + mom * mean[ch] as f64) as f32;
                        running_var[ch] =
                            ((1.0 - mom) * running_var[ch] as f64 + mom * var[ch] * unbias) as f32;
                    }
                }
                let inv_std: Vec<f32> =
                    var.iter().map(|v| (1.0 / libm::sqrt(v + eps as f64)) as f32).collect();
                (mean, inv_std)
            }
            BnMode::Eval => {
                let mean = running_mean.to_vec();
                let inv_std: Vec<f32> = running_var
                    .iter()
                    .map(|v| (1.0 / libm::sqrt(*v as f64 + eps as f64)) as f32)
                    .collect();
                (mean, inv_std)
            }
        };

        let gamma_v = self.value(gamma).to_vec();
        let beta_v = self.value(beta).to_vec();
        let mut out = vec![0.0f32; bsz * c * hw];
        for b in 0..bsz {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let (m, is, g, bt) = (mean[ch], inv_std[ch], gamma_v[ch], beta_v[ch]);
                let xs = &self.value(x)[base..base + hw];
                for (o, v) in out[base..base + hw].iter_mut().zip(xs) {
                    *o = (v - m) * is * g + bt;
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            vec![bsz, c, h, w],
            out,
            rg,
            Op::BatchNorm2d { x, gamma, beta, mode, mean, inv_std },
        ))
    }

    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId> {
        let (bsz, c, h, w) = self.dims4(x, "global_avg_pool")?;
        let hw = h * w;
        let mut out = vec![0.0f32; bsz * c];
        for b in 0..bsz {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                out[b * c + ch] =
                    (linalg::sum_f64(&self.value(x)[base..base + hw]) / hw as f64) as f32;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![bsz, c], out, rg, Op::GlobalAvgPool { x }))
    }

    /// Row-wise L2 normalization of a [B,E] matrix. A zero row has no
    /// direction and is rejected rather than epsilon-fudged.
    pub fn l2_normalize_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let (bsz, e) = self.dims2(x, "l2_normalize")?;
        let mut inv_norm = vec![0.0f32; bsz];
        let mut out = vec![0.0f32; bsz * e];
        for b in 0..bsz {
            let row = &self.value(x)[b * e..(b + 1) * e];
            let norm = libm::sqrt(linalg::dot_f64(row, row));
            if norm == 0.0 {
                return Err(Error::Degenerate {
                    op: "l2_normalize",
                    detail: format!("row {b} has zero norm"),
                });
            }
            let inv = (1.0 / norm) as f32;
            inv_norm[b] = inv;
            for (o, v) in out[b * e..(b + 1) * e].iter_mut().zip(row) {
                *o = v * inv;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![bsz, e], out, rg, Op::L2NormalizeRows { x, inv_norm }))
    }

    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, ka) = self.dims2(a, "matmul_nt")?;
        let (n, kb) = self.dims2(b, "matmul_nt")?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                expected: format!("inner dims to agree, lhs {}", shape_string(self.shape(a))),
                got: shape_string(self.shape(b)),
            });
        }
        let mut out = vec![0.0f32; m * n];
        linalg::matmul_nt(self.value(a), self.value(b), m, ka, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, rg, Op::MatMulNT { a, b }))
    }

    pub fn row_dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (bsz, e) = self.dims2(a, "row_dot")?;
        if self.shape(b) != [bsz, e] {
            return Err(Error::ShapeMismatch {
                op: "row_dot",
                expected: shape_string(self.shape(a)),
                got: shape_string(self.shape(b)),
            });
        }
        let mut out = vec![0.0f32; bsz];
        for i in 0..bsz {
            out[i] = linalg::dot_f64(
                &self.value(a)[i * e..(i + 1) * e],
                &self.value(b)[i * e..(i + 1) * e],
            ) as f32;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![bsz], out, rg, Op::RowDot { a, b }))
    }

    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ba, ca) = self.dims2(a, "concat_cols")?;
        let (bb, cb) = self.dims2(b, "concat_cols")?;
        if ba != bb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                expected: format!("matching row counts, lhs {}", shape_string(self.shape(a))),
                got: shape_string(self.shape(b)),
            });
        }
        let cols = ca + cb;
        let mut out = vec![0.0f32; ba * cols];
        for r in 0..ba {
            out[r * cols..r * cols + ca].copy_from_slice(&self.value(a)[r * ca..(r + 1) * ca]);
            out[r * cols + ca..(r + 1) * cols].copy_from_slice(&self.value(b)[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![ba, cols], out, rg, Op::ConcatCols { a, b }))
    }

    pub fn logsumexp_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let (bsz, c) = self.dims2(x, "logsumexp")?;
        let mut out = vec![0.0f32; bsz];
        for r in 0..bsz {
            let row = &self.value(x)[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut s = 0.0f64;
            for v in row {
                s += libm::exp((*v - mx) as f64);
            }
            out[r] = (mx as f64 + libm::log(s)) as f32;
        }
        let rg = self.rg(x);
        Ok(self.push(vec![bsz], out, rg, Op::LogSumExpRows { x }))
    }

    pub fn column_at(&mut self, x: ValueId, j: usize) -> Result<ValueId> {
        let (bsz, c) = self.dims2(x, "column_at")?;
        if j >= c {
            return Err(Error::BadDim { op: "column_at", detail: format!("column {j} of {c}") });
        }
        let out: Vec<f32> = (0..bsz).map(|r| self.value(x)[r * c + j]).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![bsz], out, rg, Op::ColumnAt { x, j }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_ew(a, b, "add")
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_ew(a, b, "sub")
    }

    fn zip_ew(&mut self, a: ValueId, b: ValueId, which: &'static str) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: which,
                expected: shape_string(self.shape(a)),
                got: shape_string(self.shape(b)),
            });
        }
        let out: Vec<f32> = if which == "add" {
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect()
        } else {
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        // scalar results keep an f64 shadow; operands without one enter at
        // their f32 value, so the tracking never silently degrades mid-chain
        let f64v = if out.len() == 1 {
            let x = self.nodes[a.idx()].value_f64.unwrap_or(self.value(a)[0] as f64);
            let y = self.nodes[b.idx()].value_f64.unwrap_or(self.value(b)[0] as f64);
            Some(if which == "add" { x + y } else { x - y })
        } else {
            None
        };
        let op = if which == "add" { Op::Add { a, b } } else { Op::Sub { a, b } };
        let id = self.push(shape, out, rg, op);
        self.nodes[id.idx()].value_f64 = f64v;
        Ok(id)
    }

    /// Elementwise product of two same-shape values.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                expected: shape_string(self.shape(a)),
                got: shape_string(self.shape(b)),
            });
        }
        let out: Vec<f32> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: ValueId, c: f32) -> Result<ValueId> {
        let out: Vec<f32> = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        let f64v = if out.len() == 1 {
            let v = self.nodes[x.idx()].value_f64.unwrap_or(self.value(x)[0] as f64);
            Some(v * c as f64)
        } else {
            None
        };
        let id = self.push(shape, out, rg, Op::Scale { x, c });
        self.nodes[id.idx()].value_f64 = f64v;
        Ok(id)
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let n = numel_of(&shape);
        if n != self.value(x).len() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                expected: format!("{} elements", self.value(x).len()),
                got: format!("{} for shape {}", n, shape_string(&shape)),
            });
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::Reshape { x }))
    }

    pub fn mean_all(&mut self, x: ValueId) -> Result<ValueId> {
        let n = self.value(x).len();
        let s = linalg::sum_f64(self.value(x)) / n as f64;
        let rg = self.rg(x);
        let id = self.push(vec![1], vec![s as f32], rg, Op::MeanAll { x });
        self.nodes[id.idx()].value_f64 = Some(s);
        Ok(id)
    }

    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        let s = linalg::sum_f64(self.value(x));
        let rg = self.rg(x);
        let id = self.push(vec![1], vec![s as f32], rg, Op::SumAll { x });
        self.nodes[id.idx()].value_f64 = Some(s);
        Ok(id)
    }

    /// Mean softmax cross-entropy of [B,C] logits against integer labels.
    pub fn cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let (bsz, c) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != bsz {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                expected: format!("{bsz} labels"),
                got: format!("{}", labels.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|l| **l >= c) {
            return Err(Error::BadDim { op: "cross_entropy", detail: format!("label {bad} >= {c} classes") });
        }
        let mut probs = vec![0.0f32; bsz * c];
        let mut loss = 0.0f64;
        for r in 0..bsz {
            let row = &self.value(logits)[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut s = 0.0f64;
            for v in row {
                s += libm::exp((*v - mx) as f64);
            }
            let lse = mx as f64 + libm::log(s);
            for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = libm::exp(*v as f64 - lse) as f32;
            }
            loss -= row[labels[r]] as f64 - lse;
        }
        loss /= bsz as f64;
        let rg = self.rg(logits);
        let id = self.push(
            vec![1],
            vec![loss as f32],
            rg,
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
        );
        self.nodes[id.idx()].value_f64 = Some(loss);
        Ok(id)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Each node is visited once;
    /// gradients accumulate into every `requires_grad` node reachable from
    /// the loss. Calling this a second time on the same tape is an error.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let numel = self.value(loss).len();
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        self.backward_done = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.idx()].grad = Some(vec![1.0]);

        for i in (0..=loss.idx()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match mem::take(&mut self.nodes[i].grad) {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    /// Compute the contributions of node `i` (upstream grad `g`) to its
    /// parents and accumulate them.
    fn propagate(&mut self, i: usize, g: &[f32]) {
        // Contributions are computed into owned buffers under an immutable
        // borrow, then applied; this keeps each backward rule a single
        // readable block.
        let mut contrib: Vec<(ValueId, Vec<f32>)> = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (bsz, icnt) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                if self.rg(*x) {
                    let mut dx = vec![0.0f32; bsz * icnt];
                    linalg::matmul_nn_acc(g, self.value(*w), bsz, o, icnt, &mut dx);
                    contrib.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0f32; o * icnt];
                    linalg::outer_acc(g, self.value(*x), bsz, o, icnt, &mut dw);
                    contrib.push((*w, dw));
                }
                if let Some(bid) = b {
                    if self.rg(*bid) {
                        let mut db = vec![0.0f32; o];
                        for r in 0..bsz {
                            for (c, dbv) in db.iter_mut().enumerate() {
                                *dbv += g[r * o + c];
                            }
                        }
                        contrib.push((*bid, db));
                    }
                }
            }
            Op::Conv2d { x, w, stride, pad, cols } => {
                let (bsz, c, h, wd) = {
                    let s = self.shape(*x);
                    (s[0], s[1], s[2], s[3])
                };
                let (f, _, kh, _) = {
                    let s = self.shape(*w);
                    (s[0], s[1], s[2], s[3])
                };
                let (oh, ow) = {
                    let s = &self.nodes[i].shape;
                    (s[2], s[3])
                };
                let cols = cols.as_ref().expect("conv2d: grad requested but cols not saved");
                let k = c * kh * kh;
                let m = bsz * oh * ow;
                let hw = oh * ow;
                // gather g [B,F,OH,OW] into row-major [M,F]
                let mut g_rows = vec![0.0f32; m * f];
                for b in 0..bsz {
                    for p in 0..hw {
                        let r = (b * hw + p) * f;
                        let o = b * f * hw + p;
                        for fi in 0..f {
                            g_rows[r + fi] = g[o + fi * hw];
                        }
                    }
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0f32; f * k];
                    linalg::outer_acc(&g_rows, cols, m, f, k, &mut dw);
                    contrib.push((*w, dw));
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0f32; m * k];
                    linalg::matmul_nn_acc(&g_rows, self.value(*w), m, f, k, &mut dcols);
                    let mut dx = vec![0.0f32; bsz * c * h * wd];
                    col2im_acc(&dcols, bsz, c, h, wd, kh, *stride, *pad, oh, ow, &mut dx);
                    contrib.push((*x, dx));
                }
            }
            Op::Relu { x } => {
                if self.rg(*x) {
                    let dx: Vec<f32> = self
                        .value(*x)
                        .iter()
                        .zip(g)
                        .map(|(v, gi)| if *v > 0.0 { *gi } else { 0.0 })
                        .collect();
                    contrib.push((*x, dx));
                }
            }
            Op::BatchNorm2d { x, gamma, beta, mode, mean, inv_std } => {
                let (bsz, c, h, w) = {
                    let s = self.shape(*x);
                    (s[0], s[1], s[2], s[3])
                };
                let hw = h * w;
                let n = (bsz * hw) as f64;
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                // per-channel sums of g and g*xhat
                for b in 0..bsz {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let (m, is) = (mean[ch] as f64, inv_std[ch] as f64);
                        for t in 0..hw {
                            let gi = g[base + t] as f64;
                            let xhat = (xv[base + t] as f64 - m) * is;
                            dbeta[ch] += gi;
                            dgamma[ch] += gi * xhat;
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0f32; xv.len()];
                    match mode {
                        BnMode::Train | BnMode::BatchNoUpdate => {
                            for b in 0..bsz {
                                for ch in 0..c {
                                    let base = (b * c + ch) * hw;
                                    let (m, is, ga) =
                                        (mean[ch] as f64, inv_std[ch] as f64, gv[ch] as f64);
                                    let sg = dbeta[ch];
                                    let sgx = dgamma[ch];
                                    for t in 0..hw {
                                        let gi = g[base + t] as f64;
                                        let xhat = (xv[base + t] as f64 - m) * is;
                                        dx[base + t] = (ga * is * (gi - sg / n - xhat * sgx / n)) as f32;
                                    }
                                }
                            }
                        }
                        BnMode::Eval => {
                            for b in 0..bsz {
                                for ch in 0..c {
                                    let base = (b * c + ch) * hw;
                                    let (is, ga) = (inv_std[ch] as f64, gv[ch] as f64);
                                    for t in 0..hw {
                                        dx[base + t] = (g[base + t] as f64 * ga * is) as f32;
                                    }
                                }
                            }
                        }
                    }
                    contrib.push((*x, dx));
                }
                if self.rg(*gamma) {
                    contrib.push((*gamma, dgamma.iter().map(|v| *v as f32).collect()));
                }
                if self.rg(*beta) {
                    contrib.push((*beta, dbeta.iter().map(|v| *v as f32).collect()));
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.rg(*x) {
                    let (bsz, c, h, w) = {
                        let s = self.shape(*x);
                        (s[0], s[1], s[2], s[3])
                    };
                    let hw = h * w;
                    let inv = 1.0 / hw as f32;
                    let mut dx = vec![0.0f32; bsz * c * hw];
                    for b in 0..bsz {
                        for ch in 0..c {
                            let gi = g[b * c + ch] * inv;
                            let base = (b * c + ch) * hw;
                            for v in &mut dx[base..base + hw] {
                                *v = gi;
                            }
                        }
                    }
                    contrib.push((*x, dx));
                }
            }
            Op::L2NormalizeRows { x, inv_norm } => {
                if self.rg(*x) {
                    let (bsz, e) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let y = &self.nodes[i].data;
                    let mut dx = vec![0.0f32; bsz * e];
                    for b in 0..bsz {
                        let yr = &y[b * e..(b + 1) * e];
                        let gr = &g[b * e..(b + 1) * e];
                        let gy = linalg::dot_f64(gr, yr);
                        let inv = inv_norm[b] as f64;
                        for t in 0..e {
                            dx[b * e + t] = ((gr[t] as f64 - yr[t] as f64 * gy) * inv) as f32;
                        }
                    }
                    contrib.push((*x, dx));
                }
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.rg(*a) {
                    let mut da = vec![0.0f32; m * k];
                    linalg::matmul_nn_acc(g, self.value(*b), m, n, k, &mut da);
                    contrib.push((*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0f32; n * k];
                    linalg::outer_acc(g, self.value(*a), m, n, k, &mut db);
                    contrib.push((*b, db));
                }
            }
            Op::RowDot { a, b } => {
                let (bsz, e) = (self.shape(*a)[0], self.shape(*a)[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0f32; bsz * e];
                    for r in 0..bsz {
                        linalg::axpy(g[r], &self.value(*b)[r * e..(r + 1) * e], &mut da[r * e..(r + 1) * e]);
                    }
                    contrib.push((*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0f32; bsz * e];
                    for r in 0..bsz {
                        linalg::axpy(g[r], &self.value(*a)[r * e..(r + 1) * e], &mut db[r * e..(r + 1) * e]);
                    }
                    contrib.push((*b, db));
                }
            }
            Op::ConcatCols { a, b } => {
                let (bsz, ca) = (self.shape(*a)[0], self.shape(*a)[1]);
                let cb = self.shape(*b)[1];
                let cols = ca + cb;
                if self.rg(*a) {
                    let mut da = vec![0.0f32; bsz * ca];
                    for r in 0..bsz {
                        da[r * ca..(r + 1) * ca].copy_from_slice(&g[r * cols..r * cols + ca]);
                    }
                    contrib.push((*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0f32; bsz * cb];
                    for r in 0..bsz {
                        db[r * cb..(r + 1) * cb].copy_from_slice(&g[r * cols + ca..(r + 1) * cols]);
                    }
                    contrib.push((*b, db));
                }
            }
            Op::LogSumExpRows { x } => {
                if self.rg(*x) {
                    let (bsz, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let y = &self.nodes[i].data;
                    let xv = self.value(*x);
                    let mut dx = vec![0.0f32; bsz * c];
                    for r in 0..bsz {
                        for t in 0..c {
                            dx[r * c + t] =
                                g[r] * libm::expf(xv[r * c + t] - y[r]);
                        }
                    }
                    contrib.push((*x, dx));
                }
            }
            Op::ColumnAt { x, j } => {
                if self.rg(*x) {
                    let (bsz, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let mut dx = vec![0.0f32; bsz * c];
                    for r in 0..bsz {
                        dx[r * c + j] = g[r];
                    }
                    contrib.push((*x, dx));
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    contrib.push((*a, g.to_vec()));
                }
                if self.rg(*b) {
                    contrib.push((*b, g.to_vec()));
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    contrib.push((*a, g.to_vec()));
                }
                if self.rg(*b) {
                    contrib.push((*b, g.iter().map(|v| -v).collect()));
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    contrib.push((*a, g.iter().zip(self.value(*b)).map(|(gi, v)| gi * v).collect()));
                }
                if self.rg(*b) {
                    contrib.push((*b, g.iter().zip(self.value(*a)).map(|(gi, v)| gi * v).collect()));
                }
            }
            Op::Scale { x, c } => {
                if self.rg(*x) {
                    contrib.push((*x, g.iter().map(|v| v * c).collect()));
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    contrib.push((*x, g.to_vec()));
                }
            }
            Op::MeanAll { x } => {
                if self.rg(*x) {
                    let n = self.value(*x).len();
                    let gi = g[0] / n as f32;
                    contrib.push((*x, vec![gi; n]));
                }
            }
            Op::SumAll { x } => {
                if self.rg(*x) {
                    let n = self.value(*x).len();
                    contrib.push((*x, vec![g[0]; n]));
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if self.rg(*logits) {
                    let (bsz, c) = (self.shape(*logits)[0], self.shape(*logits)[1]);
                    let scale = g[0] / bsz as f32;
                    let mut dl = vec![0.0f32; bsz * c];
                    for r in 0..bsz {
                        for t in 0..c {
                            let p = probs[r * c + t];
                            let onehot = if labels[r] == t { 1.0 } else { 0.0 };
                            dl[r * c + t] = scale * (p - onehot);
                        }
                    }
                    contrib.push((*logits, dl));
                }
            }
        }
        for (pid, c) in contrib {
            self.add_grad(pid, &c);
        }
    }

    fn add_grad(&mut self, id: ValueId, c: &[f32]) {
        let node = &mut self.nodes[id.idx()];
        match &mut node.grad {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(c) {
                    *a += b;
                }
            }
            None => node.grad = Some(c.to_vec()),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    bsz: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f32],
) {
    let kk = k * k;
    let row_len = c * kk;
    for b in 0..bsz {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * row_len;
                for ch in 0..c {
                    let img = (b * c + ch) * h * w;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let dst = row + ch * kk + ky * k;
                        if iy < 0 || iy >= h as isize {
                            // leave zeros
                            continue;
                        }
                        let src = img + iy as usize * w;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                cols[dst + kx] = x[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    cols: &[f32],
    bsz: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f32],
) {
    let kk = k * k;
    let row_len = c * kk;
    for b in 0..bsz {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * row_len;
                for ch in 0..c {
                    let img = (b * c + ch) * h * w;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = row + ch * kk + ky * k;
                        let dst = img + iy as usize * w;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[dst + ix as usize] += cols[src + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}
