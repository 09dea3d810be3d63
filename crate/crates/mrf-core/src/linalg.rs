//! Dense complex linear-algebra kernels.
//!
//! Everything here is plain f64/Complex64 with deterministic loop order;
//! parallel sections write into disjoint, pre-allocated output rows so the
//! result is independent of the number of threads.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{MrfError, Result};

/// C = A * B. Parallel over output rows.
pub fn matmul(a: &ArrayView2<Complex64>, b: &ArrayView2<Complex64>) -> Array2<Complex64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
    let mut out = Array2::zeros((m, n));
    let b = b.to_owned();
    let bs = b.as_slice().expect("contiguous");
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for kk in 0..k {
                let aik = a[[i, kk]];
                if aik == Complex64::ZERO {
                    continue;
                }
                let brow = &bs[kk * n..(kk + 1) * n];
                for (j, bj) in brow.iter().enumerate() {
                    row[j] += aik * bj;
                }
            }
        });
    out
}

/// C = A^H * B (conjugate transpose of A times B).
pub fn matmul_conj_a(a: &ArrayView2<Complex64>, b: &ArrayView2<Complex64>) -> Array2<Complex64> {
    let (k, m) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul_conj_a inner dimensions {k} vs {k2}");
    let mut out = Array2::zeros((m, n));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for kk in 0..k {
                let aki = a[[kk, i]].conj();
                if aki == Complex64::ZERO {
                    continue;
                }
                for j in 0..n {
                    row[j] += aki * b[[kk, j]];
                }
            }
        });
    out
}

/// C = A * B^H.
pub fn matmul_conj_b(a: &ArrayView2<Complex64>, b: &ArrayView2<Complex64>) -> Array2<Complex64> {
    let (m, k) = a.dim();
    let (n, k2) = b.dim();
    assert_eq!(k, k2, "matmul_conj_b inner dimensions {k} vs {k2}");
    let mut out = Array2::zeros((m, n));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                let mut acc = Complex64::ZERO;
                for kk in 0..k {
                    acc += a[[i, kk]] * b[[j, kk]].conj();
                }
                row[j] = acc;
            }
        });
    out
}

/// <a, b> = sum conj(a_i) * b_i.
pub fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frob_norm(a: &ArrayView2<Complex64>) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Cholesky factor L (lower triangular, L * L^H = A) of a Hermitian
/// positive-definite matrix. Fails if a pivot is not strictly positive.
pub struct Cholesky {
    pub l: Array2<Complex64>,
}

impl Cholesky {
    pub fn factor(a: &ArrayView2<Complex64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(MrfError::Shape(format!(
                "cholesky requires a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<Complex64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]].re;
            for k in 0..j {
                diag -= l[[j, k]].norm_sqr();
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(MrfError::Numerical(format!(
                    "cholesky pivot {j} is not positive ({diag:e}); matrix is not positive definite"
                )));
            }
            let d = diag.sqrt();
            l[[j, j]] = Complex64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]].conj();
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.l.nrows();
        debug_assert_eq!(b.len(), n);
        // forward: L y = b
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * b[k];
            }
            b[i] = s / self.l[[i, i]];
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]].conj() * b[k];
            }
            b[i] = s / self.l[[i, i]];
        }
    }
}

/// Householder QR of a tall (or square) matrix; returns the upper-trapezoidal
/// factor R with `min(rows, cols)` rows. Q is not accumulated.
pub fn qr_r_factor(a: &ArrayView2<Complex64>) -> Array2<Complex64> {
    let (m, n) = a.dim();
    let mut work = a.to_owned();
    let steps = m.min(n);
    for j in 0..steps {
        // Householder vector for column j, rows j..m.
        let mut alpha = 0.0f64;
        for i in j..m {
            alpha += work[[i, j]].norm_sqr();
        }
        let alpha = alpha.sqrt();
        if alpha == 0.0 {
            continue;
        }
        let x0 = work[[j, j]];
        let phase = if x0 == Complex64::ZERO {
            Complex64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        let beta = -phase * alpha;
        let mut v: Vec<Complex64> = (j..m).map(|i| work[[i, j]]).collect();
        v[0] -= beta;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // Apply H = I - 2 v v^H / |v|^2 to the remaining columns. Parallel
        // over columns; each column is updated independently.
        let cols: Vec<usize> = (j..n).collect();
        let updates: Vec<(usize, Vec<Complex64>)> = cols
            .par_iter()
            .map(|&c| {
                let mut dot = Complex64::ZERO;
                for (ii, vi) in v.iter().enumerate() {
                    dot += vi.conj() * work[[j + ii, c]];
                }
                let scale = dot * (2.0 / vnorm2);
                let col: Vec<Complex64> = (0..v.len())
                    .map(|ii| work[[j + ii, c]] - scale * v[ii])
                    .collect();
                (c, col)
            })
            .collect();
        for (c, col) in updates {
            for (ii, val) in col.into_iter().enumerate() {
                work[[j + ii, c]] = val;
            }
        }
    }
    let r_rows = steps;
    let mut r = Array2::zeros((r_rows, n));
    for i in 0..r_rows {
        for j in i..n {
            r[[i, j]] = work[[i, j]];
        }
    }
    r
}

/// Singular value decomposition by one-sided Jacobi rotations on the columns
/// of `a`. Returns singular values (descending) and the matrix of right
/// singular vectors V (columns), so that `a = U * diag(s) * V^H`.
pub fn jacobi_svd(a: &ArrayView2<Complex64>) -> Result<(Vec<f64>, Array2<Complex64>)> {
    let (m, n) = a.dim();
    let mut b = a.to_owned();
    let mut v = Array2::<Complex64>::eye(n);
    let tol = 1e-14;
    let max_sweeps = 60;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut aii = 0.0f64;
                let mut ajj = 0.0f64;
                let mut aij = Complex64::ZERO;
                for k in 0..m {
                    let bi = b[[k, i]];
                    let bj = b[[k, j]];
                    aii += bi.norm_sqr();
                    ajj += bj.norm_sqr();
                    aij += bi.conj() * bj;
                }
                let off = aij.norm();
                if off <= tol * (aii * ajj).sqrt() || off == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = aij / off;
                let tau = (ajj - aii) / (2.0 * off);
                let sign = if tau < 0.0 { -1.0 } else { 1.0 };
                let t = sign / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // Column updates: [bi', bj'] = [bi, bj] * [[c, s*phase], [-s*conj(phase), c]]
                for k in 0..m {
                    let bi = b[[k, i]];
                    let bj = b[[k, j]];
                    b[[k, i]] = bi * c - bj * s * phase.conj();
                    b[[k, j]] = bi * s * phase + bj * c;
                }
                for k in 0..n {
                    let vi = v[[k, i]];
                    let vj = v[[k, j]];
                    v[[k, i]] = vi * c - vj * s * phase.conj();
                    v[[k, j]] = vi * s * phase + vj * c;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MrfError::Numerical(
            "jacobi svd did not converge within the sweep limit".into(),
        ));
    }
    // Column norms are the singular values; sort descending.
    let mut sv: Vec<(f64, usize)> = (0..n)
        .map(|j| {
            let s: f64 = (0..m).map(|k| b[[k, j]].norm_sqr()).sum();
            (s.sqrt(), j)
        })
        .collect();
    sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut v_sorted = Array2::<Complex64>::zeros((n, n));
    let mut sigma = Vec::with_capacity(n);
    for (out_j, (s, j)) in sv.into_iter().enumerate() {
        sigma.push(s);
        for k in 0..n {
            v_sorted[[k, out_j]] = v[[k, j]];
        }
    }
    Ok((sigma, v_sorted))
}

/// Relative Frobenius distance ||a - b||_F / max(||b||_F, floor).
pub fn rel_frob_diff(a: &ArrayView2<Complex64>, b: &ArrayView2<Complex64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y).norm_sqr();
        den += y.norm_sqr();
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Column `j` of `a` as an owned vector.
pub fn column(a: &ArrayView2<Complex64>, j: usize) -> Array1<Complex64> {
    a.column(j).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cholesky_solves_hermitian_system() {
        // A = B B^H + I is Hermitian positive definite.
        let b = array![
            [c(1.0, 0.5), c(0.2, -0.3)],
            [c(-0.4, 0.1), c(0.9, 0.0)],
            [c(0.3, 0.3), c(0.1, -0.8)]
        ];
        let mut a = matmul_conj_b(&b.view(), &b.view());
        for i in 0..3 {
            a[[i, i]] += c(1.0, 0.0);
        }
        let chol = Cholesky::factor(&a.view()).unwrap();
        let x_true = vec![c(1.0, -2.0), c(0.5, 0.25), c(-3.0, 1.0)];
        let mut rhs = vec![Complex64::ZERO; 3];
        for i in 0..3 {
            for j in 0..3 {
                rhs[i] += a[[i, j]] * x_true[j];
            }
        }
        chol.solve_in_place(&mut rhs);
        for i in 0..3 {
            assert!((rhs[i] - x_true[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)], [c(2.0, 0.0), c(1.0, 0.0)]];
        assert!(Cholesky::factor(&a.view()).is_err());
    }

    #[test]
    fn jacobi_svd_orthonormal_v_and_reconstruction() {
        let a = array![
            [c(1.0, 0.2), c(0.1, -0.4), c(0.3, 0.0)],
            [c(-0.2, 0.7), c(2.0, 0.1), c(0.0, 0.5)],
            [c(0.5, -0.5), c(0.3, 0.3), c(-1.0, 0.2)],
            [c(0.1, 0.1), c(-0.6, 0.0), c(0.4, -0.9)]
        ];
        let (s, v) = jacobi_svd(&a.view()).unwrap();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        // V^H V = I
        let vhv = matmul_conj_a(&v.view(), &v.view());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vhv[[i, j]] - c(want, 0.0)).norm() < 1e-12);
            }
        }
        // singular values match sqrt of eigenvalues of A^H A trace-wise
        let aha = matmul_conj_a(&a.view(), &a.view());
        let trace: f64 = (0..3).map(|i| aha[[i, i]].re).sum();
        let ssum: f64 = s.iter().map(|x| x * x).sum();
        assert!((trace - ssum).abs() < 1e-10);
        // A V has orthogonal columns with norms s
        let av = matmul(&a.view(), &v.view());
        for j in 0..3 {
            let col: Vec<Complex64> = (0..4).map(|i| av[[i, j]]).collect();
            assert!((norm2(&col) - s[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn qr_preserves_gram() {
        let a = array![
            [c(1.0, 0.2), c(0.1, -0.4)],
            [c(-0.2, 0.7), c(2.0, 0.1)],
            [c(0.5, -0.5), c(0.3, 0.3)],
            [c(0.0, 1.0), c(0.2, 0.0)],
            [c(0.9, 0.0), c(-0.1, 0.6)]
        ];
        let r = qr_r_factor(&a.view());
        assert_eq!(r.dim(), (2, 2));
        let g1 = matmul_conj_a(&a.view(), &a.view());
        let g2 = matmul_conj_a(&r.view(), &r.view());
        for i in 0..2 {
            for j in 0..2 {
                assert!((g1[[i, j]] - g2[[i, j]]).norm() < 1e-12);
            }
        }
    }
}
