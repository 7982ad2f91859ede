//! Central finite-difference oracles.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Default step: balances truncation and rounding error for central differences in f64.
pub const DEFAULT_STEP: f64 = 1e-5;

fn checked(value: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Degenerate(format!(
            "oracle produced {value} when perturbing {}",
            what()
        )))
    }
}

/// Entrywise central differences of `fun` at `x`.
pub fn finite_diff(fun: impl Fn(&Mat) -> f64, x: &Mat, h: f64) -> Result<Mat> {
    let mut out = Mat::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let plus = checked(fun(&probe), || format!("+({i}, {j})"))?;
            probe[(i, j)] = orig - h;
            let minus = checked(fun(&probe), || format!("-({i}, {j})"))?;
            probe[(i, j)] = orig;
            out[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Central differences over symmetric perturbations of `s`.
///
/// Off-diagonal slot `(i, j)` moves `s_ij` and `s_ji` together, so it estimates
/// `G_ij + G_ji` of the analytic gradient; diagonal slots estimate `G_ii`. The result
/// is stored symmetrically. Compare against [`pair_sum`] of the analytic gradient.
pub fn finite_diff_sym(fun: impl Fn(&Mat) -> f64, s: &Mat, h: f64) -> Result<Mat> {
    let n = s.rows();
    let mut out = Mat::zeros(n, n);
    let mut probe = s.clone();
    for i in 0..n {
        for j in 0..=i {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            probe[(j, i)] = orig + h;
            let plus = checked(fun(&probe), || format!("+({i}, {j})"))?;
            probe[(i, j)] = orig - h;
            probe[(j, i)] = orig - h;
            let minus = checked(fun(&probe), || format!("-({i}, {j})"))?;
            probe[(i, j)] = orig;
            probe[(j, i)] = orig;
            let d = (plus - minus) / (2.0 * h);
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Maps a full-array gradient onto the symmetric-pair slots of [`finite_diff_sym`]:
/// `G_ij + G_ji` off the diagonal, `G_ii` on it.
pub fn pair_sum(g: &Mat) -> Mat {
    Mat::from_fn(g.rows(), g.cols(), |i, j| {
        if i == j {
            g[(i, i)]
        } else {
            g[(i, j)] + g[(j, i)]
        }
    })
}

/// Discrepancy between an analytic and a numeric gradient of the same tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discrepancy {
    /// `max |a − n| / max(max |a|, max |n|)`.
    pub rel: f64,
    /// `max |a − n|`.
    pub abs: f64,
    /// `max |a|`.
    pub analytic_scale: f64,
}

pub fn discrepancy(analytic: &[f64], numeric: &[f64]) -> Discrepancy {
    assert_eq!(analytic.len(), numeric.len());
    let abs = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let analytic_scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let numeric_scale = numeric.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let scale = analytic_scale.max(numeric_scale);
    let rel = if scale > 0.0 { abs / scale } else { 0.0 };
    Discrepancy {
        rel,
        abs,
        analytic_scale,
    }
}

pub fn relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    discrepancy(analytic.as_slice(), numeric.as_slice()).rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig;
    use crate::rng::SeededRng;

    #[test]
    fn trace_gradient_is_identity() {
        let mut rng = SeededRng::new(1);
        let s = Mat::from_fn(4, 4, |_, _| rng.gaussian()).sym();
        let g = finite_diff_sym(|x: &Mat| x.trace(), &s, DEFAULT_STEP).unwrap();
        assert!(g.sub(&Mat::identity(4)).max_abs() <= 1e-10);
    }

    #[test]
    fn off_diagonal_read_hits_pair_slot() {
        let s = Mat::identity(3);
        let g = finite_diff_sym(|x: &Mat| x[(0, 1)], &s, DEFAULT_STEP).unwrap();
        assert!((g[(0, 1)] - 1.0).abs() < 1e-10 && (g[(1, 0)] - 1.0).abs() < 1e-10);
        assert!(g[(0, 0)].abs() < 1e-12 && g[(1, 2)].abs() < 1e-12);
    }

    #[test]
    fn log_det_gradient_is_inverse() {
        let mut rng = SeededRng::new(2);
        let a = Mat::from_fn(5, 5, |_, _| rng.gaussian());
        let s = a.matmul_t(&a).add(&Mat::identity(5)).sym();
        let logdet = |x: &Mat| {
            sym_eig(x)
                .unwrap()
                .values
                .iter()
                .map(|l| l.ln())
                .sum::<f64>()
        };
        let numeric = finite_diff_sym(logdet, &s, DEFAULT_STEP).unwrap();
        let dec = sym_eig(&s).unwrap();
        let inverse = dec.reconstruct_with(|l| 1.0 / l);
        assert!(relative_error(&pair_sum(&inverse), &numeric) <= 1e-6);
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let s = Mat::identity(2);
        let err = finite_diff_sym(|x: &Mat| (x[(0, 0)] - 1.0).ln(), &s, DEFAULT_STEP).unwrap_err();
        assert!(err.to_string().contains("(0, 0)"));
    }
}
