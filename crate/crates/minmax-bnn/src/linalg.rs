//! Symmetric positive-definite linear algebra: Cholesky factorization,
//! log-determinant, and inverse-from-factor. These back the rate objective,
//! whose matrices are `I + alpha * Gram` and therefore SPD by construction
//! whenever the inputs are finite.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest relative asymmetry tolerated before a matrix is rejected.
const SYMMETRY_TOL: f64 = 1e-9;

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug)]
pub struct CholeskyFactor {
    /// Lower triangle, row-major `n x n`; the strict upper triangle is zero.
    pub l: Tensor,
}

/// Factor `a = L * L^T`. Fails with the offending pivot if `a` is not
/// positive definite and with the measured deviation if it is not symmetric.
pub fn cholesky(a: &Tensor) -> Result<CholeskyFactor> {
    debug_assert_eq!(a.shape().len(), 2);
    let n = a.rows();
    debug_assert_eq!(n, a.cols());

    let mut scale: f64 = 0.0;
    for i in 0..n {
        scale = scale.max(a.at2(i, i).abs());
    }
    let scale = scale.max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let dev = (a.at2(i, j) - a.at2(j, i)).abs();
            if dev > SYMMETRY_TOL * scale {
                return Err(Error::Asymmetric {
                    deviation: dev,
                    tolerance: SYMMETRY_TOL * scale,
                });
            }
        }
    }

    let mut l = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at2(i, j);
            for k in 0..j {
                s -= l.at2(i, k) * l.at2(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l.set2(i, i, s.sqrt());
            } else {
                l.set2(i, j, s / l.at2(j, j));
            }
        }
    }
    Ok(CholeskyFactor { l })
}

impl CholeskyFactor {
    /// `log det(A) = 2 * sum_i log L_ii`.
    pub fn logdet(&self) -> f64 {
        let n = self.l.rows();
        let mut s = 0.0;
        for i in 0..n {
            s += self.l.at2(i, i).ln();
        }
        2.0 * s
    }

    /// Solve `A x = b` for one right-hand side held in `x` (in place):
    /// forward substitution with L then back substitution with L^T.
    #[allow(clippy::needless_range_loop)] // triangular access pattern
    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.l.rows();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l.at2(i, k) * x[k];
            }
            x[i] = s / self.l.at2(i, i);
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l.at2(k, i) * x[k];
            }
            x[i] = s / self.l.at2(i, i);
        }
    }

    /// Full inverse `A^{-1}`, symmetric.
    #[allow(clippy::needless_range_loop)] // column-wise writeback
    pub fn inverse(&self) -> Tensor {
        let n = self.l.rows();
        let mut inv = Tensor::zeros(&[n, n]);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv.set2(i, j, col[i]);
            }
        }
        // the solve is exact up to rounding; enforce exact symmetry so the
        // logdet adjoint stays symmetric
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv.at2(i, j) + inv.at2(j, i));
                inv.set2(i, j, v);
                inv.set2(j, i, v);
            }
        }
        inv
    }
}
