//! Contrastive and consistency losses.
//!
//! All loss inputs are L2-normalized embedding rows. Gradients flow into
//! whichever inputs are recorded with gradient tracking — in training that
//! is only the student's embeddings; keys and bank negatives enter as
//! detached leaves.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, ValueId};

fn check_tau(tau: f32) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config { detail: format!("temperature must be positive, got {tau}") });
    }
    Ok(())
}

/// In debug builds, verify every row of a [*, E] value has unit norm
/// (within 1e-4). Violations are contract bugs in the caller, not data
/// errors, hence the assert.
fn debug_check_unit_rows(tape: &Tape, id: ValueId, what: &str) {
    if cfg!(debug_assertions) {
        let shape = tape.shape(id);
        let e = shape[shape.len() - 1];
        for (i, row) in tape.value(id).chunks(e).enumerate() {
            let n2 = crate::linalg::dot_f64(row, row);
            debug_assert!(
                (n2 - 1.0).abs() < 2e-4,
                "{what}: row {i} is not unit norm (|x|^2 = {n2})"
            );
        }
    }
}

/// InfoNCE with one positive and a bank of negatives.
///
/// `q` and `k_pos` are [B,E]; `negatives` is [K,E]. The positive logit sits
/// in column 0, so the per-sample loss is `lse(logits) - logits[0]` with
/// logits scaled by `1/tau`; logsumexp subtracts the row max internally.
/// Reduction is the mean over the batch.
pub fn info_nce(
    tape: &mut Tape,
    q: ValueId,
    k_pos: ValueId,
    negatives: ValueId,
    tau: f32,
) -> Result<ValueId> {
    check_tau(tau)?;
    let (b, e) = match tape.shape(q) {
        s if s.len() == 2 => (s[0], s[1]),
        s => {
            return Err(Error::ShapeMismatch {
                op: "info_nce",
                expected: "rank-2 q".into(),
                got: format!("{s:?}"),
            })
        }
    };
    if tape.shape(k_pos) != [b, e] {
        return Err(Error::ShapeMismatch {
            op: "info_nce",
            expected: format!("k_pos [{b}, {e}]"),
            got: format!("{:?}", tape.shape(k_pos)),
        });
    }
    let ns = tape.shape(negatives).to_vec();
    if ns.len() != 2 || ns[1] != e {
        return Err(Error::ShapeMismatch {
            op: "info_nce",
            expected: format!("negatives [K, {e}]"),
            got: format!("{ns:?}"),
        });
    }
    debug_check_unit_rows(tape, q, "info_nce q");
    debug_check_unit_rows(tape, k_pos, "info_nce k_pos");
    debug_check_unit_rows(tape, negatives, "info_nce negatives");

    let pos = tape.row_dot(q, k_pos)?;
    let pos = tape.reshape(pos, vec![b, 1])?;
    let neg = tape.matmul_nt(q, negatives)?;
    let logits = tape.concat_cols(pos, neg)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let lse = tape.logsumexp_rows(logits)?;
    let positive = tape.column_at(logits, 0)?;
    let per_sample = tape.sub(lse, positive)?;
    tape.mean_all(per_sample)
}

/// Symmetrized InfoNCE: the two augmented views swap roles.
///
/// View-v queries score against the view-v' positive key and the bank of
/// v' keys, and vice versa; the two directions are averaged.
#[allow(clippy::too_many_arguments)]
pub fn symmetric_info_nce(
    tape: &mut Tape,
    q: ValueId,
    q_prime: ValueId,
    k_pos_prime: ValueId,
    k_pos: ValueId,
    negatives_prime: ValueId,
    negatives: ValueId,
    tau: f32,
) -> Result<ValueId> {
    let forward = info_nce(tape, q, k_pos_prime, negatives_prime, tau)?;
    let reverse = info_nce(tape, q_prime, k_pos, negatives, tau)?;
    let sum = tape.add(forward, reverse)?;
    tape.scale(sum, 0.5)
}

/// Consistency term: squared Euclidean distance between student and
/// teacher embeddings, averaged over the batch and summed over the two
/// views. On unit vectors each view contributes `2 - 2 cos(theta)` per
/// pair.
pub fn consistency_loss(
    tape: &mut Tape,
    e_s: ValueId,
    e_t: ValueId,
    e_s_prime: ValueId,
    e_t_prime: ValueId,
) -> Result<ValueId> {
    for (a, b, what) in [(e_s, e_t, "view v"), (e_s_prime, e_t_prime, "view v'")] {
        if tape.shape(a) != tape.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "consistency_loss",
                expected: format!("{:?} for {what}", tape.shape(a)),
                got: format!("{:?}", tape.shape(b)),
            });
        }
    }
    let d1 = tape.sub(e_s, e_t)?;
    let sq1 = tape.row_dot(d1, d1)?;
    let m1 = tape.mean_all(sq1)?;
    let d2 = tape.sub(e_s_prime, e_t_prime)?;
    let sq2 = tape.row_dot(d2, d2)?;
    let m2 = tape.mean_all(sq2)?;
    tape.add(m1, m2)
}

/// Total objective: `dis + gamma * con`.
pub fn total_loss(tape: &mut Tape, dis: ValueId, con: ValueId, gamma: f32) -> Result<ValueId> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Config { detail: format!("gamma must be finite and >= 0, got {gamma}") });
    }
    let scaled = tape.scale(con, gamma)?;
    tape.add(dis, scaled)
}
