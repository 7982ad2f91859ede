//! Principal-submatrix selection over the implicit grid.
//!
//! A `d² x d²` SPD feature is read as the covariance of a vectorized `d x d` grid.
//! Grid cell `(i, j)` sits at position `j·d + i` (column-major `vec`), so a `k x k`
//! window on the grid selects a `k² x k²` principal submatrix.

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowIndexSet {
    /// Top-left cell `(row, col)` of the window on the grid.
    pub origin: (usize, usize),
    /// Positions covered by the window, strictly ascending.
    pub indices: Vec<usize>,
}

/// Number of windows per axis, `(d − k)/s + 1`, when the tiling is exact.
fn windows_per_axis(d: usize, k: usize, s: usize) -> Result<usize> {
    if k == 0 || k > d {
        return Err(Error::Config {
            field: "scales",
            msg: format!("window side {k} must be in 1..={d}"),
        });
    }
    if s == 0 {
        return Err(Error::Config {
            field: "step",
            msg: "step must be >= 1".into(),
        });
    }
    if !(d - k).is_multiple_of(s) {
        return Err(Error::Config {
            field: "step",
            msg: format!("step {s} does not tile grid {d} with window {k}"),
        });
    }
    Ok((d - k) / s + 1)
}

/// `((d − k)/s + 1)²`.
pub fn window_count(d: usize, k: usize, s: usize) -> Result<usize> {
    windows_per_axis(d, k, s).map(|n| n * n)
}

/// Sliding `k x k` windows with step `s` over a `d x d` grid, origins in row-major
/// order. Partial windows are never produced: `s` must divide `d − k`.
pub fn window_index_sets(d: usize, k: usize, s: usize) -> Result<Vec<WindowIndexSet>> {
    let per_axis = windows_per_axis(d, k, s)?;
    let mut out = Vec::with_capacity(per_axis * per_axis);
    for r in (0..per_axis).map(|t| t * s) {
        for c in (0..per_axis).map(|t| t * s) {
            let mut indices = Vec::with_capacity(k * k);
            for j in c..c + k {
                for i in r..r + k {
                    indices.push(j * d + i);
                }
            }
            indices.sort_unstable();
            out.push(WindowIndexSet {
                origin: (r, c),
                indices,
            });
        }
    }
    Ok(out)
}

/// `C(n, k)`: how many principal submatrices of size `k` an `n x n` matrix has.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

#[derive(Clone, Debug)]
pub struct SubSecTape {
    pub dim: usize,
    pub sets: Vec<WindowIndexSet>,
}

pub fn subsec_forward(s: &Mat, sets: &[WindowIndexSet]) -> Result<(Vec<Mat>, SubSecTape)> {
    let n = s.rows();
    if !s.is_square() {
        return Err(Error::shape(
            "subsec_forward",
            "square",
            format!("{}x{}", s.rows(), s.cols()),
        ));
    }
    if let Some(bad) = sets.iter().flat_map(|w| &w.indices).find(|&&i| i >= n) {
        return Err(Error::shape("subsec_forward", format!("index < {n}"), bad));
    }
    let mats = sets.iter().map(|w| s.principal(&w.indices)).collect();
    Ok((
        mats,
        SubSecTape {
            dim: n,
            sets: sets.to_vec(),
        },
    ))
}

/// Scatter-add of the per-window gradients back into the full matrix.
pub fn subsec_backward(tape: &SubSecTape, grads: &[Mat]) -> Result<Mat> {
    if grads.len() != tape.sets.len() {
        return Err(Error::shape(
            "subsec_backward",
            tape.sets.len(),
            grads.len(),
        ));
    }
    let mut out = Mat::zeros(tape.dim, tape.dim);
    for (w, g) in tape.sets.iter().zip(grads) {
        let k = w.indices.len();
        if g.shape() != (k, k) {
            return Err(Error::shape(
                "subsec_backward",
                format!("{k}x{k}"),
                format!("{}x{}", g.rows(), g.cols()),
            ));
        }
        for (p, &a) in w.indices.iter().enumerate() {
            for (q, &b) in w.indices.iter().enumerate() {
                out[(a, b)] += g[(p, q)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{logeig_backward, logeig_forward};
    use crate::rng::SeededRng;
    use crate::spdcore::assert_spd;
    use crate::verify::{finite_diff_sym, pair_sum, relative_error};

    #[test]
    fn two_by_two_windows_with_skip_two() {
        let sets = window_index_sets(4, 2, 2).unwrap();
        let got: Vec<_> = sets.iter().map(|w| (w.origin, w.indices.clone())).collect();
        assert_eq!(
            got,
            vec![
                ((0, 0), vec![0, 1, 4, 5]),
                ((0, 2), vec![8, 9, 12, 13]),
                ((2, 0), vec![2, 3, 6, 7]),
                ((2, 2), vec![10, 11, 14, 15]),
            ]
        );
    }

    #[test]
    fn global_window_and_counts() {
        let sets = window_index_sets(5, 5, 1).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].indices, (0..25).collect::<Vec<_>>());
        assert_eq!(window_index_sets(5, 2, 1).unwrap().len(), 16);
        assert!(matches!(
            window_index_sets(5, 2, 2),
            Err(Error::Config { .. })
        ));
        assert!(window_index_sets(3, 4, 1).is_err());
    }

    #[test]
    fn exhaustive_count_formula() {
        for d in 1..=12 {
            for k in 1..=d {
                for s in 1..=d {
                    match window_index_sets(d, k, s) {
                        Ok(sets) => {
                            assert_eq!((d - k) % s, 0);
                            let per = (d - k) / s + 1;
                            assert_eq!(sets.len(), per * per);
                            for w in &sets {
                                assert_eq!(w.indices.len(), k * k);
                                assert!(w.indices.windows(2).all(|p| p[0] < p[1]));
                                assert!(*w.indices.last().unwrap() < d * d);
                            }
                        }
                        Err(_) => assert_ne!((d - k) % s, 0),
                    }
                }
            }
        }
    }

    #[test]
    fn combinatorial_contrast() {
        assert_eq!(binomial(16, 4), 1820);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn forward_cases() {
        let mut rng = SeededRng::new(1);
        let a = Mat::from_fn(16, 16, |_, _| rng.gaussian());
        let s = a.matmul_t(&a).add(&Mat::identity(16).scale(0.1)).sym();

        let global = window_index_sets(4, 4, 1).unwrap();
        let (mats, _) = subsec_forward(&s, &global).unwrap();
        assert_eq!(mats[0], s);

        let (mats, _) = subsec_forward(&s, &window_index_sets(4, 2, 2).unwrap()).unwrap();
        assert_eq!(mats.len(), 4);
        for m in &mats {
            assert!(assert_spd(m, 1e-12).pass);
        }

        let diag = Mat::from_diag(&(0..16).map(|i| i as f64 + 1.0).collect::<Vec<_>>());
        let (mats, _) = subsec_forward(&diag, &window_index_sets(4, 2, 2).unwrap()).unwrap();
        assert_eq!(mats[0], Mat::from_diag(&[1.0, 2.0, 5.0, 6.0]));

        let bad = vec![WindowIndexSet {
            origin: (0, 0),
            indices: vec![0, 99],
        }];
        assert!(subsec_forward(&s, &bad).is_err());
    }

    #[test]
    fn backward_scatter_and_overlap() {
        let sets = window_index_sets(3, 3, 1).unwrap();
        let tape = SubSecTape { dim: 9, sets };
        let g = Mat::from_fn(9, 9, |i, j| (i * 9 + j) as f64);
        assert_eq!(subsec_backward(&tape, std::slice::from_ref(&g)).unwrap(), g);

        let tape = SubSecTape {
            dim: 3,
            sets: vec![
                WindowIndexSet {
                    origin: (0, 0),
                    indices: vec![0, 1],
                },
                WindowIndexSet {
                    origin: (0, 1),
                    indices: vec![1, 2],
                },
            ],
        };
        let g1 = Mat::from_rows(&[&[0.0, 0.0], &[0.0, 1.5]]);
        let g2 = Mat::from_rows(&[&[1.5, 0.0], &[0.0, 0.0]]);
        let out = subsec_backward(&tape, &[g1, g2]).unwrap();
        assert_eq!(out[(1, 1)], 3.0);
        assert!(subsec_backward(&tape, &[Mat::zeros(2, 2)]).is_err());
    }

    #[test]
    fn composed_with_logeig_matches_finite_differences() {
        let mut rng = SeededRng::new(2);
        let sets = window_index_sets(3, 2, 1).unwrap();
        let grads: Vec<Mat> = (0..sets.len())
            .map(|_| Mat::from_fn(4, 4, |_, _| rng.gaussian()))
            .collect();
        let loss = |s: &Mat| -> f64 {
            let (mats, _) = subsec_forward(s, &sets).unwrap();
            mats.iter()
                .zip(&grads)
                .map(|(m, g)| logeig_forward(m).unwrap().0.dot(g))
                .sum()
        };
        for _ in 0..5 {
            let a = Mat::from_fn(9, 9, |_, _| rng.gaussian());
            let s = a.matmul_t(&a).add(&Mat::identity(9)).sym();
            let (mats, tape) = subsec_forward(&s, &sets).unwrap();
            let local: Vec<Mat> = mats
                .iter()
                .zip(&grads)
                .map(|(m, g)| {
                    let (_, t) = logeig_forward(m).unwrap();
                    logeig_backward(&t, g).unwrap()
                })
                .collect();
            let analytic = pair_sum(&subsec_backward(&tape, &local).unwrap());
            let numeric = finite_diff_sym(loss, &s, 1e-5).unwrap();
            assert!(relative_error(&analytic, &numeric) < 1e-5);
        }
    }
}
