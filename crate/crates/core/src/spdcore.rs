//! SPD carriers and codecs: covariance descriptors, SPD validation and
//! lower-triangular vectorization.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, sym_eig, Mat, SYMMETRY_TOL};

/// Trace regularization used for covariance descriptors unless overridden.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// A symmetric matrix that is positive definite.
///
/// Construction checks symmetry and finiteness; the spectrum is only checked on
/// demand ([`assert_spd`], [`SpdMatrix::new_checked`]).
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix(Mat);

impl SpdMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        m.check_finite()?;
        m.check_symmetric(SYMMETRY_TOL)?;
        if m.rows() == 0 {
            return Err(Error::shape("SpdMatrix", "dim >= 1", 0));
        }
        Ok(SpdMatrix(m))
    }

    /// As [`SpdMatrix::new`], additionally requiring `assert_spd(m, tol)` to pass.
    pub fn new_checked(m: Mat, tol: f64) -> Result<Self> {
        let report = assert_spd(&m, tol);
        if !report.pass {
            return Err(Error::NonPositiveSpectrum {
                min: report.min_eigenvalue,
            });
        }
        SpdMatrix::new(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

impl Deref for SpdMatrix {
    type Target = Mat;

    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Sample covariance of the columns of `x` (`d x n`), trace-regularized:
/// `C + λ tr(C) I` with `C = X H X^T / (n − 1)` and `H` centering over samples.
pub fn covariance_descriptor(x: &Mat, lambda: f64) -> Result<SpdMatrix> {
    let (d, n) = x.shape();
    if n < 2 {
        return Err(Error::Parameter(format!(
            "covariance descriptor needs at least 2 samples, got {n}"
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    x.check_finite()?;
    if (1..n).all(|t| (0..d).all(|i| x[(i, t)] == x[(i, 0)])) {
        return Err(Error::Degenerate(
            "all samples identical; covariance is zero".into(),
        ));
    }

    let mut centered = Mat::zeros(d, n);
    for i in 0..d {
        let mean = pairwise_sum(x.row(i)) / n as f64;
        for t in 0..n {
            centered[(i, t)] = x[(i, t)] - mean;
        }
    }
    let mut c = Mat::zeros(d, d);
    let mut buf = vec![0.0; n];
    for i in 0..d {
        for j in 0..=i {
            for (t, b) in buf.iter_mut().enumerate() {
                *b = centered[(i, t)] * centered[(j, t)];
            }
            let v = pairwise_sum(&buf) / (n - 1) as f64;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let trace = c.trace();
    if !(trace > 0.0) {
        return Err(Error::Degenerate(format!(
            "covariance trace is {trace:e}; descriptor would not be SPD"
        )));
    }
    let shift = lambda * trace;
    for i in 0..d {
        c[(i, i)] += shift;
    }
    SpdMatrix::new(c)
}

/// Outcome of an SPD check.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdReport {
    pub symmetric: bool,
    /// Largest `|a_ij − a_ji| / max(1, |a_ij|, |a_ji|)`.
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

/// Passes iff `s` is symmetric within `tol` (relative) and its smallest eigenvalue
/// exceeds `tol`.
pub fn assert_spd(s: &Mat, tol: f64) -> SpdReport {
    let fail = |max_asymmetry| SpdReport {
        symmetric: false,
        max_asymmetry,
        min_eigenvalue: f64::NAN,
        pass: false,
    };
    if !s.is_square() || s.rows() == 0 || s.check_finite().is_err() {
        return fail(f64::INFINITY);
    }
    let n = s.rows();
    let mut max_asymmetry: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (s[(i, j)], s[(j, i)]);
            max_asymmetry = max_asymmetry.max((a - b).abs() / 1f64.max(a.abs()).max(b.abs()));
        }
    }
    let symmetric = max_asymmetry <= tol;
    let min_eigenvalue = match sym_eig(&s.sym()) {
        Ok(dec) => dec.min_value(),
        Err(_) => return fail(max_asymmetry),
    };
    SpdReport {
        symmetric,
        max_asymmetry,
        min_eigenvalue,
        pass: symmetric && min_eigenvalue > tol,
    }
}

/// Lower triangle (diagonal included) of a symmetric matrix, row-major:
/// `m00, m10, m11, m20, m21, m22, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrilVector {
    pub dim: usize,
    pub values: Vec<f64>,
}

pub const fn tril_len(d: usize) -> usize {
    d * (d + 1) / 2
}

pub fn tril_vec(m: &Mat) -> TrilVector {
    let d = m.rows();
    let mut values = Vec::with_capacity(tril_len(d));
    for i in 0..d {
        values.extend_from_slice(&m.row(i)[..=i]);
    }
    TrilVector { dim: d, values }
}

pub fn tril_unvec(v: &[f64], d: usize) -> Result<Mat> {
    if v.len() != tril_len(d) {
        return Err(Error::shape("tril_unvec", tril_len(d), v.len()));
    }
    let mut m = Mat::zeros(d, d);
    let mut it = v.iter();
    for i in 0..d {
        for j in 0..=i {
            let x = *it.next().unwrap();
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn hand_evaluated_descriptor() {
        let x = Mat::from_rows(&[&[1.0, -1.0], &[1.0, -1.0]]);
        let s = covariance_descriptor(&x, 1e-3).unwrap();
        let expected = Mat::from_rows(&[&[2.004, 2.0], &[2.0, 2.004]]);
        assert!(s.sub(&expected).max_abs() < 1e-15);
    }

    #[test]
    fn identical_columns_are_degenerate() {
        let x = Mat::from_fn(3, 5, |i, _| 0.1 * i as f64);
        assert!(matches!(
            covariance_descriptor(&x, 1e-3),
            Err(Error::Degenerate(_))
        ));
        let x = Mat::from_fn(3, 1, |_, _| 1.0);
        assert!(matches!(
            covariance_descriptor(&x, 1e-3),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn shift_bounds_smallest_eigenvalue() {
        let mut rng = SeededRng::new(7);
        for _ in 0..20 {
            // Fewer samples than dimensions: C is singular, so the shift is tight.
            let x = Mat::from_fn(8, 5, |_, _| rng.gaussian());
            let s = covariance_descriptor(&x, 1e-3).unwrap();
            let trace_c = s.trace() / (1.0 + 8.0 * 1e-3);
            let min = sym_eig(&s).unwrap().min_value();
            assert!(min >= 1e-3 * trace_c - 1e-12);
            assert!(assert_spd(&s, 1e-12).pass);
        }
    }

    #[test]
    fn column_permutation_invariance() {
        let mut rng = SeededRng::new(8);
        let x = Mat::from_fn(4, 40, |_, _| rng.gaussian());
        let mut order: Vec<usize> = (0..40).collect();
        rng.shuffle(&mut order);
        let y = Mat::from_fn(4, 40, |i, t| x[(i, order[t])]);
        let a = covariance_descriptor(&x, 1e-3).unwrap();
        let b = covariance_descriptor(&y, 1e-3).unwrap();
        assert!(a.sub(&b).max_abs() <= 1e-12);
    }

    #[test]
    fn spd_reports() {
        assert!(assert_spd(&Mat::identity(5), 1e-10).pass);
        let r = assert_spd(&Mat::from_diag(&[1.0, -1.0]), 1e-10);
        assert!(!r.pass);
        assert_eq!(r.min_eigenvalue, -1.0);
        let asym = Mat::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(!assert_spd(&asym, 1e-10).symmetric);
    }

    #[test]
    fn tril_literals() {
        let m = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 3.0]]);
        assert_eq!(tril_vec(&m).values, vec![1.0, 2.0, 3.0]);
        assert_eq!(
            tril_vec(&Mat::identity(3)).values,
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(tril_unvec(&[1.0, 2.0, 3.0], 2).unwrap(), m);
        assert_eq!(tril_unvec(&[0.0; 6], 3).unwrap(), Mat::zeros(3, 3));
        assert!(tril_unvec(&[0.0; 5], 3).is_err());
    }

    proptest! {
        #[test]
        fn tril_round_trips(d in 1usize..9, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let a = Mat::from_fn(d, d, |_, _| rng.gaussian());
            let m = a.add(&a.transpose());
            let v = tril_vec(&m);
            prop_assert_eq!(v.values.len(), tril_len(d));
            let back = tril_unvec(&v.values, d).unwrap();
            prop_assert_eq!(back.as_slice(), m.as_slice());
            prop_assert_eq!(tril_vec(&back).values, v.values);
        }

        #[test]
        fn descriptors_are_spd(d in 1usize..7, n in 2usize..30, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let x = Mat::from_fn(d, n, |_, _| rng.gaussian());
            let s = covariance_descriptor(&x, DEFAULT_LAMBDA).unwrap();
            prop_assert!(assert_spd(&s, 1e-12).pass);
        }
    }
}
