//! Dense row-major kernels used by the model layers.
//!
//! Every kernel adds `2·m·k·n` to a thread-local FLOP counter so forward
//! cost can be measured rather than estimated.

use std::cell::Cell;

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

/// Add to the thread-local FLOP counter.
pub fn count_flops(n: u64) {
    FLOPS.with(|c| c.set(c.get() + n));
}

/// Reset the thread-local FLOP counter and return its previous value.
pub fn take_flops() -> u64 {
    FLOPS.with(|c| c.replace(0))
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    count_flops(2 * (m * k * n) as u64);
}

/// `a[m×k] · b[k×n]` into a fresh buffer.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, &mut out, m, k, n);
    out
}

/// `out[k×n] += aᵀ · b` for `a[m×k]`, `b[m×n]` (weight gradients).
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let br = &b[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    count_flops(2 * (m * k * n) as u64);
}

/// `out[m×k] += a · bᵀ` for `a[m×n]`, `b[k×n]` (input gradients).
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            *o += dot(ar, br);
        }
    }
    count_flops(2 * (m * k * n) as u64);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Add a bias row to every row of `x[rows×n]`.
pub fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    for row in x.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulate column sums of `x[rows×n]` into `out[n]` (bias gradients).
pub fn col_sum_acc(x: &[f64], out: &mut [f64]) {
    let n = out.len();
    for row in x.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_products() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let c = matmul(&a, &b, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // aᵀ·c has shape k×n
        let mut g = vec![0.0; k * n];
        matmul_at_b_acc(&a, &c, &mut g, m, k, n);
        for p in 0..k {
            for j in 0..n {
                let want: f64 = (0..m).map(|i| a[i * k + p] * c[i * n + j]).sum();
                assert!((g[p * n + j] - want).abs() < 1e-12);
            }
        }
        // c·bᵀ has shape m×k
        let mut d = vec![0.0; m * k];
        matmul_a_bt_acc(&c, &b, &mut d, m, n, k);
        for i in 0..m {
            for p in 0..k {
                let want: f64 = (0..n).map(|j| c[i * n + j] * b[p * n + j]).sum();
                assert!((d[i * k + p] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flop_counter_tracks_products() {
        take_flops();
        let _ = matmul(&[1.0; 6], &[1.0; 12], 2, 3, 4);
        assert_eq!(take_flops(), 48);
        assert_eq!(take_flops(), 0);
    }
}
