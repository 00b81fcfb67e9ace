//! Dense matrix kernels.
//!
//! Each output row is produced by exactly one worker with a fixed
//! summation order, so results are bitwise identical for any thread count.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    let row = |(i, out_row): (usize, &mut [f64])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `out[m×k] = g[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    if k == 0 {
        return out;
    }
    let row = |(i, out_row): (usize, &mut [f64])| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *o = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        out.chunks_mut(k).enumerate().for_each(row);
    }
    out
}

/// `out[k×n] = aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    if n == 0 {
        return out;
    }
    let row = |(p, out_row): (usize, &mut [f64])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let g_row = &g[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}
