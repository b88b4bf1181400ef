//! FIFO memory bank of contrastive keys.
//!
//! The bank is a ring of K unit-norm embedding rows. It starts warm
//! (random unit vectors) so the negative pool always has K entries, and
//! each training step overwrites the oldest rows with the new keys after
//! the loss has been computed. Keys are plain values: nothing in a bank
//! ever carries gradient state.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MemoryBank {
    keys: Vec<f32>,
    size: usize,
    dim: usize,
    write_ptr: usize,
    /// Total rows ever enqueued (diagnostics only).
    seen: u64,
}

impl MemoryBank {
    /// Warm-start bank: K random rows drawn from a seeded Gaussian and
    /// normalized to unit length.
    pub fn init(size: usize, dim: usize, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::Config {
                detail: format!("memory bank needs positive size and dim, got {size}x{dim}"),
            });
        }
        let mut rng = rng::stream_tagged(seed, rng::tag::BANK);
        let mut keys = vec![0.0f32; size * dim];
        for row in keys.chunks_mut(dim) {
            loop {
                for v in row.iter_mut() {
                    *v = rng.sample::<f32, _>(rand_distr::StandardNormal);
                }
                let norm = libm::sqrt(linalg::dot_f64(row, row));
                if norm > 1e-12 {
                    let inv = (1.0 / norm) as f32;
                    for v in row.iter_mut() {
                        *v *= inv;
                    }
                    break;
                }
            }
        }
        Ok(MemoryBank { keys, size, dim, write_ptr: 0, seen: 0 })
    }

    /// Rebuilds a bank from checkpointed state.
    pub fn from_parts(
        keys: Vec<f32>,
        size: usize,
        dim: usize,
        write_ptr: usize,
        seen: u64,
    ) -> Result<Self> {
        if size == 0 || dim == 0 || keys.len() != size * dim {
            return Err(Error::Config {
                detail: format!(
                    "bank state has {} values, expected {size}x{dim}",
                    keys.len()
                ),
            });
        }
        if write_ptr >= size {
            return Err(Error::Config {
                detail: format!("bank write pointer {write_ptr} out of range for size {size}"),
            });
        }
        Ok(MemoryBank { keys, size, dim, write_ptr, seen })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn write_ptr(&self) -> usize {
        self.write_ptr
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Overwrite the oldest rows with a [B,dim] batch of keys, wrapping at
    /// the end of the ring. The batch may not exceed the bank size.
    pub fn enqueue(&mut self, batch: &[f32], rows: usize) -> Result<()> {
        if rows * self.dim != batch.len() {
            return Err(Error::ShapeMismatch {
                op: "bank_enqueue",
                expected: format!("{} values for {rows} rows of dim {}", rows * self.dim, self.dim),
                got: format!("{}", batch.len()),
            });
        }
        if rows > self.size {
            return Err(Error::Config {
                detail: format!("cannot enqueue {rows} keys into a bank of {}", self.size),
            });
        }
        for r in 0..rows {
            let dst = self.write_ptr * self.dim;
            self.keys[dst..dst + self.dim].copy_from_slice(&batch[r * self.dim..(r + 1) * self.dim]);
            self.write_ptr = (self.write_ptr + 1) % self.size;
        }
        self.seen += rows as u64;
        Ok(())
    }

    /// Tensor view of a [B,dim] tape value, rejecting anything that still
    /// tracks gradients (keys must be detached).
    pub fn enqueue_tensor(&mut self, t: &Tensor) -> Result<()> {
        if t.requires_grad || t.grad.is_some() {
            return Err(Error::Config {
                detail: "bank keys must be detached (requires_grad set or gradient present)".to_string(),
            });
        }
        let s = t.shape();
        if s.len() != 2 || s[1] != self.dim {
            return Err(Error::ShapeMismatch {
                op: "bank_enqueue",
                expected: format!("[B, {}]", self.dim),
                got: format!("{s:?}"),
            });
        }
        self.enqueue(t.data(), s[0])
    }

    /// Snapshot of the negative pool as a [K,dim] tensor. The copy is
    /// intentional: later enqueues must not alter a snapshot already used
    /// in a loss.
    pub fn negatives(&self) -> Tensor {
        Tensor::new(vec![self.size, self.dim], self.keys.clone()).unwrap()
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rowvec(dim: usize, fill: f32) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[0] = fill;
        v
    }

    #[test]
    fn init_rows_are_unit_norm_and_seeded() {
        let b = MemoryBank::init(64, 16, 7).unwrap();
        for row in b.keys().chunks(16) {
            let n = linalg::dot_f64(row, row);
            assert!((n - 1.0).abs() < 1e-5, "norm^2 {n}");
        }
        let b2 = MemoryBank::init(64, 16, 7).unwrap();
        assert_eq!(b.keys(), b2.keys());
        let b3 = MemoryBank::init(64, 16, 8).unwrap();
        assert_ne!(b.keys(), b3.keys());
    }

    #[test]
    fn enqueue_overwrites_oldest_with_wraparound() {
        // Size-4 bank: write [a,b], then [c,d], then [e,f] -> rows are
        // [e, f, c, d] (a and b were the oldest).
        let mut b = MemoryBank::init(4, 3, 0).unwrap();
        let mk = |f| rowvec(3, f);
        b.enqueue(&[mk(1.0), mk(2.0)].concat(), 2).unwrap();
        b.enqueue(&[mk(3.0), mk(4.0)].concat(), 2).unwrap();
        b.enqueue(&[mk(5.0), mk(6.0)].concat(), 2).unwrap();
        let rows: Vec<f32> = b.keys().chunks(3).map(|r| r[0]).collect();
        assert_eq!(rows, vec![5.0, 6.0, 3.0, 4.0]);
        assert_eq!(b.write_ptr(), 2);
        assert_eq!(b.seen(), 6);
    }

    #[test]
    fn full_batch_equal_to_bank_size_replaces_everything() {
        let mut b = MemoryBank::init(4, 2, 0).unwrap();
        let batch: Vec<f32> = (0..8).map(|i| i as f32).collect();
        b.enqueue(&batch, 4).unwrap();
        assert_eq!(b.keys(), &batch[..]);
        assert_eq!(b.write_ptr(), 0, "pointer wraps to the start");
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let mut b = MemoryBank::init(4, 2, 0).unwrap();
        assert!(b.enqueue(&vec![0.0; 10], 5).is_err());
    }

    #[test]
    fn snapshots_are_immutable() {
        let mut b = MemoryBank::init(4, 2, 0).unwrap();
        let snap = b.negatives();
        let before = snap.data().to_vec();
        b.enqueue(&[9.0, 9.0], 1).unwrap();
        assert_eq!(snap.data(), &before[..]);
        assert_ne!(b.negatives().data(), &before[..]);
    }

    #[test]
    fn gradient_carrying_keys_are_rejected() {
        let mut b = MemoryBank::init(4, 2, 0).unwrap();
        let mut t = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        t.requires_grad = true;
        assert!(b.enqueue_tensor(&t).is_err());
        t.requires_grad = false;
        t.grad = Some(vec![0.0, 0.0]);
        assert!(b.enqueue_tensor(&t).is_err());
        t.grad = None;
        assert!(b.enqueue_tensor(&t).is_ok());
    }

    #[test]
    fn write_ptr_follows_tb_mod_k() {
        let mut b = MemoryBank::init(48, 4, 0).unwrap();
        let batch = vec![0.5f32; 20 * 4];
        for t in 1..=25 {
            b.enqueue(&batch, 20).unwrap();
            assert_eq!(b.write_ptr(), (t * 20) % 48);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn matches_naive_ring_reference(
                size in 1usize..32,
                batches in proptest::collection::vec(1usize..32, 1..20),
                seed in 0u64..1000,
            ) {
                let mut bank = MemoryBank::init(size, 2, seed).unwrap();
                // naive reference: same warm start, explicit modulo writes
                let mut naive = bank.keys().to_vec();
                let mut ptr = 0usize;
                let mut counter = 0f32;
                for b in batches {
                    let rows = b.min(size);
                    let mut batch = vec![0.0f32; rows * 2];
                    for r in 0..rows {
                        counter += 1.0;
                        batch[r * 2] = counter;
                        batch[r * 2 + 1] = -counter;
                    }
                    bank.enqueue(&batch, rows).unwrap();
                    for r in 0..rows {
                        naive[ptr * 2] = batch[r * 2];
                        naive[ptr * 2 + 1] = batch[r * 2 + 1];
                        ptr = (ptr + 1) % size;
                    }
                    prop_assert_eq!(bank.keys(), &naive[..]);
                    prop_assert_eq!(bank.write_ptr(), ptr);
                }
            }
        }
    }
}
