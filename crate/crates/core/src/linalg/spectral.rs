use crate::error::{Error, Result};
use crate::linalg::{sym_eig, EigDecomp, Mat};

/// Scalar function applied to the spectrum of a symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralFn {
    Identity,
    Log,
    Exp,
    /// `max(eps, λ)`.
    Rectify(f64),
}

impl SpectralFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            SpectralFn::Identity => x,
            SpectralFn::Log => x.ln(),
            SpectralFn::Exp => x.exp(),
            SpectralFn::Rectify(eps) => x.max(eps),
        }
    }

    /// Derivative. The rectifier takes slope 0 at the threshold itself.
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            SpectralFn::Identity => 1.0,
            SpectralFn::Log => 1.0 / x,
            SpectralFn::Exp => x.exp(),
            SpectralFn::Rectify(eps) => {
                if x > eps {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            SpectralFn::Identity => "identity".into(),
            SpectralFn::Log => "log".into(),
            SpectralFn::Exp => "exp".into(),
            SpectralFn::Rectify(eps) => format!("rectify({eps:e})"),
        }
    }
}

/// `U f(Λ) U^T` for the eigendecomposition of `s`.
pub fn spectral_map(s: &Mat, f: SpectralFn) -> Result<Mat> {
    let decomp = sym_eig(s)?;
    spectral_map_decomp(&decomp, f)
}

/// As [`spectral_map`], reusing an existing decomposition.
pub fn spectral_map_decomp(decomp: &EigDecomp, f: SpectralFn) -> Result<Mat> {
    if f == SpectralFn::Log {
        let min = decomp.min_value();
        if !(min > 0.0) {
            return Err(Error::NonPositiveSpectrum { min });
        }
    }
    Ok(decomp.reconstruct_with(|l| f.eval(l)))
}

/// Relative gap below which two eigenvalues are treated as equal in the divided
/// differences of [`spectral_map_backward`].
pub const DEGENERATE_GAP: f64 = 1e-12;

/// Divided-difference matrix `K` of `f` on the spectrum.
pub fn divided_differences(values: &[f64], f: SpectralFn) -> Mat {
    let n = values.len();
    let fv: Vec<f64> = values.iter().map(|&l| f.eval(l)).collect();
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = f.deriv(values[i]);
        for j in 0..i {
            let (li, lj) = (values[i], values[j]);
            let scale = 1.0f64.max(li.abs()).max(lj.abs());
            let kij = if (li - lj).abs() <= DEGENERATE_GAP * scale {
                f.deriv(0.5 * (li + lj))
            } else {
                (fv[i] - fv[j]) / (li - lj)
            };
            k[(i, j)] = kij;
            k[(j, i)] = kij;
        }
    }
    k
}

/// Gradient of a loss through `S ↦ f(S)`:
/// `U (K ∘ (U^T sym(G) U)) U^T`.
///
/// `grad_out` may be any square array; only its symmetric part contributes.
pub fn spectral_map_backward(decomp: &EigDecomp, f: SpectralFn, grad_out: &Mat) -> Result<Mat> {
    let n = decomp.dim();
    if grad_out.shape() != (n, n) {
        return Err(Error::shape(
            "spectral_map_backward",
            format!("{n}x{n}"),
            format!("{}x{}", grad_out.rows(), grad_out.cols()),
        ));
    }
    let u = &decomp.vectors;
    let k = divided_differences(&decomp.values, f);
    let inner = u.t_matmul(&grad_out.sym()).matmul(u);
    let weighted = inner.zip_map(&k, |a, b| a * b);
    Ok(u.matmul(&weighted).matmul_t(u).sym())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_spd(rng: &mut SeededRng, n: usize) -> Mat {
        let a = Mat::from_fn(n, n, |_, _| rng.gaussian());
        a.matmul_t(&a).add(&Mat::identity(n).scale(0.5)).sym()
    }

    #[test]
    fn log_of_identity_is_zero() {
        let out = spectral_map(&Mat::identity(4), SpectralFn::Log).unwrap();
        assert_eq!(out, Mat::zeros(4, 4));
    }

    #[test]
    fn rectify_diagonal() {
        let eps = 1e-3;
        let out = spectral_map(
            &Mat::from_diag(&[2.0 * eps, eps / 2.0]),
            SpectralFn::Rectify(eps),
        )
        .unwrap();
        assert!(out.sub(&Mat::from_diag(&[2.0 * eps, eps])).max_abs() < 1e-18);
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = SeededRng::new(8);
        for _ in 0..20 {
            let s = random_spd(&mut rng, 6);
            let back =
                spectral_map(&spectral_map(&s, SpectralFn::Log).unwrap(), SpectralFn::Exp).unwrap();
            assert!(back.sub(&s).frobenius() / s.frobenius() <= 1e-10);
        }
    }

    #[test]
    fn identity_map_is_identity() {
        let mut rng = SeededRng::new(9);
        let s = random_spd(&mut rng, 7);
        let out = spectral_map(&s, SpectralFn::Identity).unwrap();
        assert!(out.sub(&s).max_abs() <= 1e-12 * s.max_abs());
    }

    #[test]
    fn log_rejects_non_positive() {
        match spectral_map(&Mat::from_diag(&[1.0, -0.5]), SpectralFn::Log) {
            Err(Error::NonPositiveSpectrum { min }) => assert_eq!(min, -0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = SeededRng::new(10);
        let g = Mat::from_fn(5, 5, |_, _| rng.gaussian());
        let s = random_spd(&mut rng, 5);
        let dec = sym_eig(&s).unwrap();
        let out = spectral_map_backward(&dec, SpectralFn::Identity, &g).unwrap();
        assert!(out.sub(&g.sym()).max_abs() < 1e-12);

        let dec = sym_eig(&Mat::identity(5)).unwrap();
        let out = spectral_map_backward(&dec, SpectralFn::Log, &g).unwrap();
        assert!(out.sub(&g.sym()).max_abs() < 1e-14);
    }

    #[test]
    fn degenerate_pairs_use_midpoint_derivative() {
        let k = divided_differences(&[2.0, 2.0, 1.0], SpectralFn::Log);
        assert_eq!(k[(0, 1)], 0.5);
        assert!((k[(0, 2)] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_shape() {
        let dec = sym_eig(&Mat::identity(3)).unwrap();
        assert!(spectral_map_backward(&dec, SpectralFn::Log, &Mat::zeros(2, 2)).is_err());
    }
}
