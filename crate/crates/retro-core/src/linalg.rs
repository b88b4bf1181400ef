//! Small dense kernels shared by the tape ops.
//!
//! Three loops cover every matrix product in the crate:
//!   * `matmul_nt`  — C[m,n] = A[m,:] . B[n,:]   (both operands row-major,
//!     inner dim contiguous; used by linear/conv forward and bank logits)
//!   * `matmul_nn_acc` — C[m,:] += sum_f A[m,f] * B[f,:] (axpy sweep; used
//!     for input gradients)
//!   * `outer_acc` — C[n,:] += sum_m A[m,n] * X[m,:] (axpy sweep; used for
//!     weight gradients)
//!
//! All accumulate in f32 like standard DL kernels; the loss-side reductions
//! that need f64 live in the tape ops themselves.

/// C[m,n] = sum_k A[m,k] * B[n,k].  A is [m,k], B is [n,k], C is [m,n].
pub fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (j, cj) in cr.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            *cj = dot(ar, br);
        }
    }
}

/// Dot product of two equal-length slices with four independent partial sums
/// so the compiler can vectorize.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f32, 0.0f32, 0.0f32, 0.0f32);
    for i in 0..chunks {
        let p = i * 4;
        s0 += a[p] * b[p];
        s1 += a[p + 1] * b[p + 1];
        s2 += a[p + 2] * b[p + 2];
        s3 += a[p + 3] * b[p + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// C[m,:] += sum_f A[m,f] * B[f,:].  A is [m,f], B is [f,n], C is [m,n].
pub fn matmul_nn_acc(a: &[f32], b: &[f32], m: usize, f: usize, n: usize, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * f);
    debug_assert_eq!(b.len(), f * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let cr = &mut c[i * n..(i + 1) * n];
        for j in 0..f {
            let s = a[i * f + j];
            if s != 0.0 {
                axpy(s, &b[j * n..(j + 1) * n], cr);
            }
        }
    }
}

/// C[n,:] += sum_m A[m,n] * X[m,:].  A is [m,n], X is [m,k], C is [n,k].
pub fn outer_acc(a: &[f32], x: &[f32], m: usize, n: usize, k: usize, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(c.len(), n * k);
    for i in 0..m {
        let xr = &x[i * k..(i + 1) * k];
        for j in 0..n {
            let s = a[i * n + j];
            if s != 0.0 {
                axpy(s, xr, &mut c[j * k..(j + 1) * k]);
            }
        }
    }
}

#[inline]
pub fn axpy(s: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Sum of a slice with f64 accumulation.
#[inline]
pub fn sum_f64(x: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for v in x {
        s += *v as f64;
    }
    s
}

/// Dot product with f64 accumulation, for loss-side reductions.
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        s += *x as f64 * *y as f64;
    }
    s
}
