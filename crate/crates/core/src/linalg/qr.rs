use crate::error::{Error, Result};
use crate::linalg::mat::dot;
use crate::linalg::Mat;

/// Relative size of the smallest triangular diagonal below which the input is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Orthonormalizes the rows of `m` (`d_out x d_in`, `d_out <= d_in`).
///
/// Computes the thin Householder QR of `m^T = Q R`, flips signs so that `diag(R) > 0`
/// and returns `Q^T`. The positive-diagonal convention makes the factorization unique,
/// so the row span is preserved and rows-orthonormal inputs come back unchanged up to
/// rounding.
pub fn qr_row_orthonormalize(m: &Mat) -> Result<Mat> {
    let (p, n) = m.shape();
    if p == 0 || p > n {
        return Err(Error::shape(
            "qr_row_orthonormalize",
            "d_out <= d_in, d_out >= 1",
            format!("{p}x{n}"),
        ));
    }
    m.check_finite()?;

    // Work on A = m^T, stored column-major as `cols[k]` (each of length n) so that
    // reflector application runs over contiguous memory.
    let mut cols: Vec<Vec<f64>> = (0..p).map(|k| m.row(k).to_vec()).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut diag = vec![0.0; p];

    for k in 0..p {
        let x = &cols[k][k..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = dot(&v, &v).sqrt();
        if vnorm > 0.0 {
            for vi in v.iter_mut() {
                *vi /= vnorm;
            }
        }
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let proj = 2.0 * dot(&v, tail);
            for (t, &vi) in tail.iter_mut().zip(&v) {
                *t -= proj * vi;
            }
        }
        diag[k] = cols[k][k];
        reflectors.push(v);
    }

    let largest = diag.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let smallest = diag.iter().fold(f64::INFINITY, |a, d| a.min(d.abs()));
    if smallest < RANK_TOL * largest {
        return Err(Error::RankDeficient {
            ratio: smallest / largest,
        });
    }

    // Q = H_0 H_1 ... H_{p-1} [I_p; 0], column by column.
    let mut out = Mat::zeros(p, n);
    for j in 0..p {
        let mut q = vec![0.0; n];
        q[j] = 1.0;
        for (k, v) in reflectors.iter().enumerate().rev() {
            let tail = &mut q[k..];
            let proj = 2.0 * dot(v, tail);
            for (t, &vi) in tail.iter_mut().zip(v) {
                *t -= proj * vi;
            }
        }
        let sign = if diag[j] < 0.0 { -1.0 } else { 1.0 };
        for (i, qi) in q.iter().enumerate() {
            out[(j, i)] = sign * qi;
        }
    }
    Ok(out)
}

/// `‖W W^T − I‖_F`.
pub fn orthonormality_error(w: &Mat) -> f64 {
    w.matmul_t(w).sub(&Mat::identity(w.rows())).frobenius()
}
