//! Small dense kernels for the per-row ridge solves.

/// Diagonal jitter added when a normal-equation matrix is not positive definite.
pub const JITTER: f64 = 1e-10;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn packed_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Adds `weight * x x^T` to a packed lower triangle and `rating * x` to `rhs`.
#[inline]
pub(crate) fn accumulate(gram: &mut [f64], rhs: &mut [f64], x: &[f64], rating: f64) {
    let mut p = 0;
    for a in 0..x.len() {
        let xa = x[a];
        for &xb in &x[..=a] {
            gram[p] += xa * xb;
            p += 1;
        }
        rhs[a] += rating * xa;
    }
}

/// In-place Cholesky of a full row-major `k x k` matrix; returns false if
/// a pivot is not strictly positive.
fn cholesky(a: &mut [f64], k: usize) -> bool {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if d.is_nan() || d <= 0.0 || d.is_infinite() {
            return false;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in i + 1..k {
            s -= l[p * k + i] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solves `(G + lambda I) x = rhs` for a packed Gram matrix `G`.
///
/// Returns `true` if jitter had to be added to make the system solvable.
pub(crate) fn ridge_solve(gram: &[f64], rhs: &[f64], lambda: f64, scratch: &mut Vec<f64>, out: &mut [f64]) -> bool {
    let k = rhs.len();
    let mut jitter = 0.0;
    loop {
        scratch.clear();
        scratch.resize(k * k, 0.0);
        let mut p = 0;
        for a in 0..k {
            for b in 0..=a {
                scratch[a * k + b] = gram[p];
                p += 1;
            }
            scratch[a * k + a] += lambda + jitter;
        }
        if cholesky(scratch, k) {
            out.copy_from_slice(rhs);
            cholesky_solve(scratch, k, out);
            return jitter > 0.0;
        }
        jitter = if jitter == 0.0 { JITTER } else { jitter * 10.0 };
        if jitter > 1.0 {
            // not reachable for Gram matrices; keep the previous row instead of NaNs
            out.iter_mut().for_each(|v| *v = 0.0);
            return true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        // G = [[4, 2], [2, 3]] packed lower
        let gram = [4.0, 2.0, 3.0];
        let rhs = [2.0, 1.0];
        let mut out = [0.0; 2];
        let mut scratch = Vec::new();
        assert!(!ridge_solve(&gram, &rhs, 1.0, &mut scratch, &mut out));
        // (G + I) x = rhs  ->  [[5,2],[2,4]] x = [2,1]
        let det = 5.0 * 4.0 - 4.0;
        assert!((out[0] - (2.0 * 4.0 - 2.0) / det).abs() < 1e-14);
        assert!((out[1] - (5.0 - 4.0) / det).abs() < 1e-14);
    }

    #[test]
    fn empty_system_needs_jitter_and_yields_zero() {
        let mut out = [1.0; 3];
        let mut scratch = Vec::new();
        assert!(ridge_solve(&[0.0; 6], &[0.0; 3], 0.0, &mut scratch, &mut out));
        assert_eq!(out, [0.0; 3]);
    }

    #[test]
    fn accumulate_builds_outer_product() {
        let mut g = vec![0.0; packed_len(2)];
        let mut r = vec![0.0; 2];
        accumulate(&mut g, &mut r, &[1.0, 2.0], 3.0);
        assert_eq!(g, vec![1.0, 2.0, 4.0]);
        assert_eq!(r, vec![3.0, 6.0]);
    }
}
