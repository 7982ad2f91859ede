//! Symmetric eigendecomposition: Householder tridiagonalization followed by
//! implicit-shift QL iteration (the classic `tred2`/`tql2` pair).

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Relative asymmetry tolerated on input.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Orthogonal eigenvectors (as columns) with eigenvalues sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct EigDecomp {
    pub vectors: Mat,
    pub values: Vec<f64>,
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U diag(g(λ)) U^T`.
    pub fn reconstruct_with(&self, g: impl Fn(f64) -> f64) -> Mat {
        let n = self.dim();
        let u = &self.vectors;
        let mapped: Vec<f64> = self.values.iter().map(|&l| g(l)).collect();
        let mut scaled = u.clone();
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] *= mapped[j];
            }
        }
        scaled.matmul_t(u).sym()
    }

    pub fn reconstruct(&self) -> Mat {
        self.reconstruct_with(|l| l)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted non-increasing. Each eigenvector is signed so that its
/// entry of largest magnitude is positive (ties go to the lowest index), which makes
/// the result a deterministic function of the input bytes.
pub fn sym_eig(s: &Mat) -> Result<EigDecomp> {
    if !s.is_square() || s.rows() == 0 {
        return Err(Error::shape(
            "sym_eig",
            "non-empty square matrix",
            format!("{}x{}", s.rows(), s.cols()),
        ));
    }
    s.check_finite()?;
    s.check_symmetric(SYMMETRY_TOL)?;

    let n = s.rows();
    let mut v = s.sym();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n == 1 {
        d[0] = v[(0, 0)];
        v[(0, 0)] = 1.0;
    } else {
        tridiagonalize(&mut v, &mut d, &mut e);
        ql_implicit(&mut v, &mut d, &mut e)?;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut vectors = Mat::from_fn(n, n, |i, j| v[(i, order[j])]);
    fix_signs(&mut vectors);
    Ok(EigDecomp { vectors, values })
}

fn fix_signs(vectors: &mut Mat) {
    let n = vectors.rows();
    for j in 0..vectors.cols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..n {
            let a = vectors[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if vectors[(best, j)] < 0.0 {
            for i in 0..n {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
}

// Householder reduction to tridiagonal form. On exit `v` holds the accumulated
// orthogonal transform, `d` the diagonal and `e[1..]` the subdiagonal.
fn tridiagonalize(v: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..(n - 1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit QL iteration on the tridiagonal (d, e), rotating `v` along.
fn ql_implicit(v: &mut Mat, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    let max_iter = 64 * n.max(4);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    let mut total_iter = 0;

    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }

        if m > l {
            loop {
                total_iter += 1;
                if total_iter > max_iter {
                    return Err(Error::NoConvergence(total_iter));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[(k, i + 1)];
                        v[(k, i + 1)] = s * v[(k, i)] + c * h;
                        v[(k, i)] = c * v[(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_sym(rng: &mut SeededRng, n: usize) -> Mat {
        let a = Mat::from_fn(n, n, |_, _| rng.gaussian());
        a.add(&a.transpose()).scale(0.5)
    }

    fn rel_recon_err(s: &Mat, dec: &EigDecomp) -> f64 {
        dec.reconstruct().sub(s).frobenius() / s.frobenius().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let dec = sym_eig(&Mat::identity(3)).unwrap();
        assert_eq!(dec.values, vec![1.0, 1.0, 1.0]);
        assert_eq!(dec.reconstruct(), Mat::identity(3));
    }

    #[test]
    fn diagonal_sorts_and_keeps_basis() {
        let dec = sym_eig(&Mat::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(dec.values, vec![3.0, 1.0]);
        let expected = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(dec.vectors.sub(&expected).max_abs() < 1e-15);
    }

    #[test]
    fn reconstruction_over_random_matrices() {
        let mut rng = SeededRng::new(11);
        for _ in 0..100 {
            let s = random_sym(&mut rng, 8);
            let dec = sym_eig(&s).unwrap();
            assert!(rel_recon_err(&s, &dec) <= 1e-12);
            let gram = dec.vectors.t_matmul(&dec.vectors);
            assert!(gram.sub(&Mat::identity(8)).frobenius() <= 1e-10);
            assert!(dec.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn larger_and_clustered_inputs() {
        let mut rng = SeededRng::new(5);
        for &n in &[1usize, 2, 17, 64] {
            let s = random_sym(&mut rng, n);
            let dec = sym_eig(&s).unwrap();
            assert!(rel_recon_err(&s, &dec) <= 1e-12, "n = {n}");
        }
        // Repeated eigenvalues in a rotated basis.
        let q = crate::linalg::qr_row_orthonormalize(&Mat::from_fn(6, 6, |_, _| rng.gaussian()))
            .unwrap();
        let s = q
            .transpose()
            .matmul(&Mat::from_diag(&[2.0, 2.0, 2.0, 1.0, 1.0, 0.5]))
            .matmul(&q)
            .sym();
        let dec = sym_eig(&s).unwrap();
        assert!(rel_recon_err(&s, &dec) <= 1e-12);
        assert!((dec.values[0] - 2.0).abs() < 1e-13);
        assert!((dec.values[5] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn deterministic_and_sign_convention() {
        let mut rng = SeededRng::new(3);
        let s = random_sym(&mut rng, 7);
        let a = sym_eig(&s).unwrap();
        let b = sym_eig(&s.clone()).unwrap();
        assert_eq!(a, b);
        for j in 0..7 {
            let col = a.vectors.column(j);
            let (mut best, mut best_abs) = (0, -1.0);
            for (i, x) in col.iter().enumerate() {
                if x.abs() > best_abs {
                    best_abs = x.abs();
                    best = i;
                }
            }
            assert!(col[best] > 0.0);
        }
    }

    #[test]
    fn rejects_non_finite_with_index() {
        let mut s = Mat::identity(4);
        s[(1, 2)] = f64::INFINITY;
        match sym_eig(&s) {
            Err(Error::NonFinite { row: 1, col: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let s = Mat::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(sym_eig(&s), Err(Error::NotSymmetric { .. })));
    }
}
