//! Dataset handling: a synthetic class-separable generator, the CIFAR
//! binary record format, two-view augmentation, epoch permutations, and
//! stratified label-fraction subsets.
//!
//! Augmentation randomness is keyed by `(seed, epoch, step, view)`, never by
//! call order, so any batch of any epoch can be replayed in isolation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

/// Labeled image set. Images are [N,C,H,W] floats in [0,1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::BadDim {
                op: "dataset",
                detail: format!("images must be [N,C,H,W], got rank {}", shape.len()),
            });
        }
        let n = shape[0];
        if n == 0 {
            return Err(Error::Degenerate {
                op: "dataset",
                detail: String::from("empty dataset"),
            });
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                expected: format!("{n} labels"),
                got: format!("{}", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Parse {
                detail: format!("label {bad} out of range for {class_count} classes"),
            });
        }
        if images.data().iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Parse {
                detail: String::from("image values must lie in [0,1]"),
            });
        }
        Ok(Dataset { images, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects N == 0
    }

    /// (C, H, W) of a single image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Copies the given rows into a fresh batch tensor + label vector.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let n = self.len();
        let per = self.images.numel() / n;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(Error::BadDim {
                    op: "gather",
                    detail: format!("index {i} out of range for {n} samples"),
                });
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Ok((Tensor::new(shape, data)?, labels))
    }
}

/// Synthetic dataset whose class signal is spatial: each class owns a
/// stripe orientation and frequency plus a Gaussian blob at a fixed
/// position on a ring, placed on one color channel. Per-sample randomness
/// — stripe phase, a multiplicative per-channel tint, a second stripe
/// field at a random orientation, amplitude jitter, and pixel noise — is
/// pure nuisance, so neither global color statistics nor any single
/// grating identify the class and representation quality shows up in
/// downstream accuracy. A raw-pixel linear probe still beats chance: the
/// blob is a fixed, localized cue.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config {
            detail: format!("need at least 2 classes, got {classes}"),
        });
    }
    if image_size < 8 {
        return Err(Error::Config {
            detail: format!("image_size must be at least 8, got {image_size}"),
        });
    }
    if per_class == 0 {
        return Err(Error::Config {
            detail: String::from("per_class must be positive"),
        });
    }
    let (h, w) = (image_size, image_size);
    let plane = h * w;
    let n = classes * per_class;
    let mut rng = rng::stream_tagged(seed, tag::SYNTH_DATA);
    let normal = StandardNormal;
    let mut data = vec![0.0f32; n * 3 * plane];
    let mut labels = Vec::with_capacity(n);
    let two_pi = 2.0 * core::f32::consts::PI;
    for c in 0..classes {
        let alpha = core::f32::consts::PI * c as f32 / classes as f32;
        let (sa, ca) = (libm::sinf(alpha), libm::cosf(alpha));
        let freq = 2.0 + (c % 4) as f32;
        let ring = two_pi * c as f32 / classes as f32;
        let cy0 = h as f32 / 2.0 + h as f32 / 4.0 * libm::sinf(ring);
        let cx0 = w as f32 / 2.0 + w as f32 / 4.0 * libm::cosf(ring);
        let blob_ch = c % 3;
        let sigma = h as f32 / 7.0;
        for s in 0..per_class {
            let idx = c * per_class + s;
            labels.push(c);
            let tint = [
                0.75 + 0.5 * rng.gen::<f32>(),
                0.75 + 0.5 * rng.gen::<f32>(),
                0.75 + 0.5 * rng.gen::<f32>(),
            ];
            let phase = two_pi * rng.gen::<f32>();
            let amp = 0.16 + 0.08 * rng.gen::<f32>();
            let blob_amp = 0.25 + 0.08 * rng.gen::<f32>();
            let jy = cy0 + (rng.gen::<f32>() - 0.5) * 4.0;
            let jx = cx0 + (rng.gen::<f32>() - 0.5) * 4.0;
            // distractor grating: same family as the class signal but with
            // sample-random geometry, so it carries no label information
            let d_alpha = core::f32::consts::PI * rng.gen::<f32>();
            let (dsa, dca) = (libm::sinf(d_alpha), libm::cosf(d_alpha));
            let d_freq = 2.0 + 4.0 * rng.gen::<f32>();
            let d_phase = two_pi * rng.gen::<f32>();
            let d_amp = 0.10 + 0.08 * rng.gen::<f32>();
            let img = &mut data[idx * 3 * plane..(idx + 1) * 3 * plane];
            for y in 0..h {
                let dy = y as f32 - jy;
                for x in 0..w {
                    let dx = x as f32 - jx;
                    let t = (x as f32 * ca + y as f32 * sa) * freq / h as f32;
                    let td = (x as f32 * dca + y as f32 * dsa) * d_freq / h as f32;
                    let lum = 0.5
                        + amp * libm::cosf(two_pi * t + phase)
                        + d_amp * libm::cosf(two_pi * td + d_phase);
                    let blob =
                        blob_amp * libm::expf(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                    for ch in 0..3 {
                        let mut v = lum * tint[ch];
                        if ch == blob_ch {
                            v += blob;
                        }
                        let nz: f32 = normal.sample(&mut rng);
                        v += 0.05 * nz;
                        img[ch * plane + y * w + x] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, 3, h, w], data)?, labels, classes)
}

pub const CIFAR_CLASSES: usize = 10;
const CIFAR_RECORD: usize = 3073;

/// Parses raw CIFAR-10 binary records (1 label byte + 3072 channel-major
/// pixel bytes each). Record count is inferred from the length.
pub fn parse_cifar_records(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Parse {
            detail: format!(
                "CIFAR stream is {} bytes, not a positive multiple of {CIFAR_RECORD} \
                 (1 label byte + 3072 pixel bytes per record)",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Parse {
                detail: format!("record {r} has label {label}, expected 0..{CIFAR_CLASSES}"),
            });
        }
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, CIFAR_CLASSES)
}

/// Knobs for the stochastic two-view pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AugConfig {
    /// Zero-pad this much on every side before taking a random crop back
    /// to the original size.
    pub crop_padding: usize,
    pub flip_prob: f32,
    /// Multiplicative brightness drawn from [1-j, 1+j].
    pub brightness_jitter: f32,
    /// Additive Gaussian pixel noise; the result is clamped to [0,1].
    pub noise_std: f32,
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config {
                detail: format!("flip_prob must be in [0,1], got {}", self.flip_prob),
            });
        }
        if !(0.0..=1.0).contains(&self.brightness_jitter) {
            return Err(Error::Config {
                detail: format!(
                    "brightness_jitter must be in [0,1], got {}",
                    self.brightness_jitter
                ),
            });
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config {
                detail: format!("noise_std must be non-negative, got {}", self.noise_std),
            });
        }
        Ok(())
    }

    pub fn desk_default() -> Self {
        AugConfig { crop_padding: 4, flip_prob: 0.5, brightness_jitter: 0.4, noise_std: 0.05 }
    }

    /// Everything off; augmentation becomes the identity.
    pub fn identity() -> Self {
        AugConfig { crop_padding: 0, flip_prob: 0.0, brightness_jitter: 0.0, noise_std: 0.0 }
    }
}

/// Two stochastic views of one source batch.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub v: Tensor,
    pub v_prime: Tensor,
}

/// Builds the two views from independent streams keyed by
/// `(seed, epoch, step)` plus a per-view tag.
pub fn two_views(
    batch: &Tensor,
    cfg: &AugConfig,
    seed: u64,
    epoch: u64,
    step: u64,
) -> Result<ViewPair> {
    cfg.validate()?;
    let v = augment_batch(batch, cfg, &mut rng::stream(seed, epoch, step, tag::AUG_VIEW_A))?;
    let v_prime = augment_batch(batch, cfg, &mut rng::stream(seed, epoch, step, tag::AUG_VIEW_B))?;
    Ok(ViewPair { v, v_prime })
}

/// Pad-crop, flip, brightness, noise, clamp — in that order, per image.
fn augment_batch(batch: &Tensor, cfg: &AugConfig, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let shape = batch.shape();
    if shape.len() != 4 {
        return Err(Error::BadDim {
            op: "augment",
            detail: format!("batch must be [B,C,H,W], got rank {}", shape.len()),
        });
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if b == 0 {
        return Err(Error::Degenerate {
            op: "augment",
            detail: String::from("empty batch"),
        });
    }
    let p = cfg.crop_padding as isize;
    let normal = StandardNormal;
    let src = batch.data();
    let mut out = vec![0.0f32; src.len()];
    let plane = h * w;
    for i in 0..b {
        let dy = rng.gen_range(0..=2 * cfg.crop_padding) as isize;
        let dx = rng.gen_range(0..=2 * cfg.crop_padding) as isize;
        let flip = rng.gen::<f32>() < cfg.flip_prob;
        let factor = 1.0 + cfg.brightness_jitter * (2.0 * rng.gen::<f32>() - 1.0);
        for ch in 0..c {
            let sbase = (i * c + ch) * plane;
            for y in 0..h {
                let sy = y as isize + dy - p;
                let row_ok = sy >= 0 && sy < h as isize;
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx - p;
                    let mut v = if row_ok && sx >= 0 && sx < w as isize {
                        src[sbase + sy as usize * w + sx as usize]
                    } else {
                        0.0
                    };
                    v *= factor;
                    if cfg.noise_std > 0.0 {
                        let nz: f32 = normal.sample(rng);
                        v += cfg.noise_std * nz;
                    }
                    out[sbase + y * w + x] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Shuffled visit order for one epoch, keyed by `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, epoch, 0, tag::PERMUTATION));
    order
}

/// Stratified subset keeping ceil(fraction * n_c) samples of every class.
///
/// Each class has its own shuffled order, and a subset is always a prefix of
/// it, so a 1% subset nests inside the 10% subset for the same seed. Returns
/// the subset plus the selected original indices (ascending).
pub fn label_fraction_subset(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config {
            detail: format!("fraction must be in (0,1], got {fraction}"),
        });
    }
    let mut selected = Vec::new();
    for class in 0..ds.class_count {
        let mut idx: Vec<usize> =
            (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        // tolerance guards ceil against binary round-up (0.01 * 500 must be 5)
        let k = libm::ceil(fraction * idx.len() as f64 - 1e-9) as usize;
        if k == 0 {
            return Err(Error::Config {
                detail: format!(
                    "fraction {fraction} yields no samples for class {class} \
                     ({} available)",
                    idx.len()
                ),
            });
        }
        idx.shuffle(&mut rng::stream(seed, class as u64, 0, tag::SUBSET));
        selected.extend_from_slice(&idx[..k]);
    }
    selected.sort_unstable();
    let (images, labels) = ds.gather(&selected)?;
    Ok((Dataset::new(images, labels, ds.class_count)?, selected))
}

/// FNV-1a over the index list; stable fingerprint for subset identity.
pub fn index_hash(indices: &[usize]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &i in indices {
        for byte in (i as u64).to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
