//! Shared helpers for the integration suites: an eigenvalue-based oracle for
//! the coding-rate quantities (independent of the Cholesky path under test),
//! finite differences, and dataset fixtures.

#![allow(dead_code)]

use minmax_bnn::rate::ClassPartition;
use minmax_bnn::tensor::{concat_cols, matmul, transpose, Tensor};
use std::path::PathBuf;

/// Directory holding the canonical MNIST IDX files.
pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn mnist_paths() -> [PathBuf; 4] {
    let d = mnist_dir();
    [
        d.join("train-images-idx3-ubyte"),
        d.join("train-labels-idx1-ubyte"),
        d.join("t10k-images-idx3-ubyte"),
        d.join("t10k-labels-idx1-ubyte"),
    ]
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. Slow and
/// simple on purpose: this is the oracle the fast path is judged against.
pub fn sym_eigenvalues(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<f64> = a.data().to_vec();
    let at = |m: &Vec<f64>, i: usize, j: usize| m[i * n + j];
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += at(&m, i, j) * at(&m, i, j);
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = at(&m, p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (at(&m, q, q) - at(&m, p, p)) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Coding rate via the spectrum of the n-side Gram matrix:
/// `1/2 * sum ln(1 + (d / (n eps^2)) * lambda_i)`.
pub fn oracle_rate(z: &Tensor, eps_sq: f64, d: usize) -> f64 {
    let n = z.cols();
    let alpha = d as f64 / (n as f64 * eps_sq);
    let gram = matmul(&transpose(z), z).unwrap();
    sym_eigenvalues(&gram)
        .iter()
        .map(|&l| 0.5 * (1.0 + alpha * l.max(0.0)).ln())
        .sum()
}

pub fn oracle_delta_r(z: &Tensor, part: &ClassPartition, eps_sq: f64, d: usize) -> f64 {
    let n = z.cols();
    let mut per_class = 0.0;
    for j in 0..part.num_classes() {
        let idx = part.class_indices(j);
        let zj = select_columns(z, idx);
        per_class += idx.len() as f64 / n as f64 * oracle_rate(&zj, eps_sq, d);
    }
    oracle_rate(z, eps_sq, d) - per_class
}

pub fn oracle_pairwise(za: &Tensor, zb: &Tensor, eps_sq: f64, d: usize) -> f64 {
    let union = concat_cols(za, zb).unwrap();
    oracle_rate(&union, eps_sq, d)
        - 0.5 * oracle_rate(za, eps_sq, d)
        - 0.5 * oracle_rate(zb, eps_sq, d)
}

pub fn select_columns(z: &Tensor, idx: &[usize]) -> Tensor {
    let d = z.rows();
    let mut out = Tensor::zeros(&[d, idx.len()]);
    for (dst, &src) in idx.iter().enumerate() {
        for r in 0..d {
            out.set2(r, dst, z.at2(r, src));
        }
    }
    out
}

/// Central finite difference of a scalar function.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-12)
}

/// Deterministic spread of `count` element indices over `len` slots,
/// including both endpoints; used to sample large arrays for gradient
/// checks whose exhaustive sweep would not fit the runtime budget.
pub fn strided_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..count).map(|i| i * (len - 1) / (count - 1)).collect();
    idx.dedup();
    idx
}
