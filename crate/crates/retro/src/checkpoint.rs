//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "RTRO"
//! version u32      currently 1
//! count   u64      number of tensors
//! manifest, per tensor:
//!     name_len u64, name bytes (UTF-8), dtype u8 (0=f32, 1=f64, 2=u64),
//!     rank u64, dims rank x u64
//! payload: tensor data in manifest order, little-endian
//! trailer: crc32 of the payload bytes
//! ```
//!
//! The f32 payload carries weights; f64 carries the EMA running averages
//! that keep thousand-step closed-form checks exact; u64 carries queue
//! pointers and step counters. Loads verify magic, version, and CRC, and
//! can filter the manifest by name prefix so an evaluation stage reads just
//! an encoder. Saving what `load` returned reproduces the file byte for
//! byte.

use std::fs;
use std::path::Path;

use retro_core::bank::MemoryBank;
use retro_core::nn::Network;
use retro_core::tensor::Parameter;
use retro_core::train::DistillState;

use crate::error::{format_err, io_err, Result};

pub const MAGIC: &[u8; 4] = b"RTRO";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl TensorData {
    fn dtype_tag(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U64(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Entry {
    pub fn f32(name: impl Into<String>, dims: Vec<u64>, data: Vec<f32>) -> Self {
        Entry { name: name.into(), dims, data: TensorData::F32(data) }
    }

    pub fn f64(name: impl Into<String>, dims: Vec<u64>, data: Vec<f64>) -> Self {
        Entry { name: name.into(), dims, data: TensorData::F64(data) }
    }

    pub fn u64(name: impl Into<String>, dims: Vec<u64>, data: Vec<u64>) -> Self {
        Entry { name: name.into(), dims, data: TensorData::U64(data) }
    }

    pub fn expect_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(format_err(format!("checkpoint tensor `{}` is not f32", self.name))),
        }
    }

    pub fn expect_f64(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            _ => Err(format_err(format!("checkpoint tensor `{}` is not f64", self.name))),
        }
    }

    pub fn expect_u64(&self) -> Result<&[u64]> {
        match &self.data {
            TensorData::U64(v) => Ok(v),
            _ => Err(format_err(format!("checkpoint tensor `{}` is not u64", self.name))),
        }
    }
}

fn check_entries(entries: &[Entry]) -> Result<()> {
    let mut names = std::collections::BTreeSet::new();
    for e in entries {
        if !names.insert(e.name.as_str()) {
            return Err(format_err(format!("duplicate checkpoint tensor name `{}`", e.name)));
        }
        let numel: u64 = e.dims.iter().product();
        if numel != e.data.len() as u64 {
            return Err(format_err(format!(
                "checkpoint tensor `{}`: dims {:?} hold {numel} values, data has {}",
                e.name,
                e.dims,
                e.data.len()
            )));
        }
    }
    Ok(())
}

pub fn save_entries(path: &Path, entries: &[Entry]) -> Result<()> {
    check_entries(entries)?;
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    for e in entries {
        manifest.extend_from_slice(&(e.name.len() as u64).to_le_bytes());
        manifest.extend_from_slice(e.name.as_bytes());
        manifest.push(e.data.dtype_tag());
        manifest.extend_from_slice(&(e.dims.len() as u64).to_le_bytes());
        for &d in &e.dims {
            manifest.extend_from_slice(&d.to_le_bytes());
        }
        match &e.data {
            TensorData::F32(v) => {
                for x in v {
                    payload.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    payload.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U64(v) => {
                for x in v {
                    payload.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    let mut out = Vec::with_capacity(4 + 4 + 8 + manifest.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&payload);
    out.extend_from_slice(&hasher.finalize().to_le_bytes());
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(format_err(format!(
                "checkpoint truncated while reading {what} ({} bytes left, {n} needed)",
                self.buf.len() - self.at
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, verifying magic, version, and payload CRC. With a
/// prefix, only manifest entries whose name starts with it are returned;
/// the whole file is still CRC-checked.
pub fn load_entries(path: &Path, prefix: Option<&str>) -> Result<Vec<Entry>> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &buf, at: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(format!(
            "{}: not a checkpoint (bad magic {magic:?})",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(format!(
            "{}: unsupported checkpoint version {version} (this build reads {VERSION})",
            path.display()
        )));
    }
    let count = r.u64("tensor count")? as usize;
    let mut metas = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u64("name length")? as usize;
        let name = core::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| format_err("checkpoint tensor name is not UTF-8"))?
            .to_string();
        let dtype = r.take(1, "dtype")?[0];
        let rank = r.u64("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dim")?);
        }
        metas.push((name, dtype, dims));
    }
    let payload_start = r.at;
    let mut entries = Vec::new();
    for (name, dtype, dims) in metas {
        let numel = dims.iter().product::<u64>() as usize;
        let data = match dtype {
            0 => {
                let raw = r.take(numel * 4, "f32 payload")?;
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            1 => {
                let raw = r.take(numel * 8, "f64 payload")?;
                TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            2 => {
                let raw = r.take(numel * 8, "u64 payload")?;
                TensorData::U64(
                    raw.chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            t => return Err(format_err(format!("unknown dtype tag {t} for tensor `{name}`"))),
        };
        entries.push(Entry { name, dims, data });
    }
    let payload_end = r.at;
    let stored_crc = u32::from_le_bytes(r.take(4, "crc")?.try_into().unwrap());
    if r.at != buf.len() {
        return Err(format_err(format!(
            "{}: {} trailing bytes after the CRC",
            path.display(),
            buf.len() - r.at
        )));
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf[payload_start..payload_end]);
    let actual = hasher.finalize();
    if actual != stored_crc {
        return Err(format_err(format!(
            "{}: payload CRC mismatch (stored {stored_crc:#010x}, computed {actual:#010x}); \
             the file is corrupt",
            path.display()
        )));
    }
    check_entries(&entries)?;
    if let Some(p) = prefix {
        entries.retain(|e| e.name.starts_with(p));
    }
    Ok(entries)
}

fn dims_of(shape: &[usize]) -> Vec<u64> {
    shape.iter().map(|&d| d as u64).collect()
}

/// All parameters of a network (running statistics included) as f32
/// entries named exactly like the parameters, with `prefix` prepended.
pub fn network_entries(net: &Network, prefix: &str) -> Vec<Entry> {
    net.params()
        .iter()
        .map(|p| {
            Entry::f32(
                format!("{prefix}{}", p.name()),
                dims_of(p.tensor.shape()),
                p.tensor.data().to_vec(),
            )
        })
        .collect()
}

/// Writes entries back into built parameters (a whole network's or any
/// subset such as an encoder's). Every parameter must be covered and no
/// entry may be left over: silent drift between an architecture config and
/// a checkpoint is the failure mode this guards.
pub fn fill_params(params: Vec<&mut Parameter>, prefix: &str, entries: &[Entry]) -> Result<()> {
    let mut used = vec![false; entries.len()];
    for p in params {
        let want = format!("{prefix}{}", p.name());
        let at = entries.iter().position(|e| e.name == want).ok_or_else(|| {
            format_err(format!("checkpoint is missing tensor `{want}`"))
        })?;
        used[at] = true;
        let e = &entries[at];
        if e.dims != dims_of(p.tensor.shape()) {
            return Err(format_err(format!(
                "checkpoint tensor `{want}` has dims {:?}, the architecture wants {:?}",
                e.dims,
                p.tensor.shape()
            )));
        }
        p.tensor.data_mut().copy_from_slice(e.expect_f32()?);
    }
    if let Some(at) = used.iter().position(|u| !u) {
        return Err(format_err(format!(
            "checkpoint tensor `{}` does not exist in the architecture",
            entries[at].name
        )));
    }
    Ok(())
}

fn bank_entries(bank: &MemoryBank, prefix: &str) -> Vec<Entry> {
    vec![
        Entry::f32(
            format!("{prefix}.keys"),
            vec![bank.size() as u64, bank.dim() as u64],
            bank.keys().to_vec(),
        ),
        Entry::u64(
            format!("{prefix}.meta"),
            vec![2],
            vec![bank.write_ptr() as u64, bank.seen()],
        ),
    ]
}

fn bank_from_entries(prefix: &str, entries: &[Entry]) -> Result<MemoryBank> {
    let find = |name: String| {
        entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| format_err(format!("checkpoint is missing tensor `{name}`")))
    };
    let keys = find(format!("{prefix}.keys"))?;
    let meta = find(format!("{prefix}.meta"))?.expect_u64()?;
    if meta.len() != 2 {
        return Err(format_err(format!("`{prefix}.meta` must hold [write_ptr, seen]")));
    }
    if keys.dims.len() != 2 {
        return Err(format_err(format!("`{prefix}.keys` must be rank 2")));
    }
    MemoryBank::from_parts(
        keys.expect_f32()?.to_vec(),
        keys.dims[0] as usize,
        keys.dims[1] as usize,
        meta[0] as usize,
        meta[1],
    )
    .map_err(Into::into)
}

/// Serializes a full training state for exact resume: student weights and
/// optimizer momentum, the mean network's f64 running averages, the frozen
/// teacher when one exists, both queues, and the step counters.
pub fn state_entries(state: &DistillState) -> Vec<Entry> {
    let mut entries = network_entries(&state.assembly.student, "student.");
    for p in state.assembly.student.params() {
        if let Some(m) = &p.momentum {
            entries.push(Entry::f32(
                format!("student_momentum.{}", p.name()),
                vec![m.len() as u64],
                m.clone(),
            ));
        }
    }
    for (name, master) in state.assembly.mean.masters() {
        entries.push(Entry::f64(
            format!("mean_master.{name}"),
            vec![master.len() as u64],
            master.to_vec(),
        ));
    }
    if let Some(teacher) = &state.assembly.teacher {
        entries.extend(network_entries(teacher, "teacher."));
    }
    entries.extend(bank_entries(&state.bank_v, "bank_v"));
    entries.extend(bank_entries(&state.bank_v_prime, "bank_v_prime"));
    entries.push(Entry::u64(
        "state.counters".to_string(),
        vec![2],
        vec![state.epoch as u64, state.global_step],
    ));
    entries
}

/// Restores a state saved by [`state_entries`] into a freshly built one.
/// The caller assembles `state` from the same architecture configs; this
/// overwrites every tensor, momentum buffer, EMA master, queue, and counter.
pub fn restore_state(state: &mut DistillState, entries: &[Entry]) -> Result<()> {
    fill_params(state.assembly.student.params_mut(), "student.", &filtered(entries, "student."))?;
    for p in state.assembly.student.params_mut() {
        let name = format!("student_momentum.{}", p.name());
        p.momentum = match entries.iter().find(|e| e.name == name) {
            Some(e) => Some(e.expect_f32()?.to_vec()),
            None => None,
        };
    }
    let master_names: Vec<String> = state
        .assembly
        .mean
        .masters()
        .iter()
        .map(|(n, _)| n.to_string())
        .collect();
    for name in master_names {
        let want = format!("mean_master.{name}");
        let e = entries
            .iter()
            .find(|e| e.name == want)
            .ok_or_else(|| format_err(format!("checkpoint is missing tensor `{want}`")))?;
        state.assembly.mean.set_master(&name, e.expect_f64()?)?;
    }
    if let Some(teacher) = &mut state.assembly.teacher {
        fill_params(teacher.params_mut(), "teacher.", &filtered(entries, "teacher."))?;
    }
    state.bank_v = bank_from_entries("bank_v", entries)?;
    state.bank_v_prime = bank_from_entries("bank_v_prime", entries)?;
    let counters = entries
        .iter()
        .find(|e| e.name == "state.counters")
        .ok_or_else(|| format_err("checkpoint is missing tensor `state.counters`"))?
        .expect_u64()?;
    if counters.len() != 2 {
        return Err(format_err("`state.counters` must hold [epoch, global_step]"));
    }
    state.epoch = counters[0] as usize;
    state.global_step = counters[1];
    Ok(())
}

fn filtered(entries: &[Entry], prefix: &str) -> Vec<Entry> {
    entries.iter().filter(|e| e.name.starts_with(prefix)).cloned().collect()
}
