//! Core library for self-supervised contrastive distillation with teacher
//! projection-head reuse: a small reverse-mode autodiff engine, conv
//! encoders with projection heads, InfoNCE/consistency losses, FIFO memory
//! banks, deterministic data synthesis and augmentation, the training
//! engine (MoCo-style pretraining, DisCo and head-reuse distillation), and
//! evaluation (linear probe, kNN, semi-supervised finetune).
//!
//! The crate is `no_std` + `alloc`; float transcendentals go through
//! `libm` so results are identical across platforms. Everything is
//! single-threaded and deterministic given a seed.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bank;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
