use crate::error::{Error, Result};
use crate::linalg::mat::pairwise_sum;
use crate::linalg::{sym_eig, Mat};

/// Principal subspace fitted on a sample: centering mean plus a `d x p` basis with
/// orthonormal columns, ordered by decreasing explained variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub basis: Mat,
    pub mean: Vec<f64>,
    /// Sample variances along each basis column.
    pub variances: Vec<f64>,
}

pub fn pca_fit(columns: &[Vec<f64>], p: usize) -> Result<Pca> {
    let n = columns.len();
    if n < 2 {
        return Err(Error::Parameter(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    let d = columns[0].len();
    if p == 0 || p > d {
        return Err(Error::Parameter(format!(
            "PCA target dimension {p} must be in 1..={d}"
        )));
    }
    if let Some(bad) = columns.iter().position(|c| c.len() != d) {
        return Err(Error::shape(
            "pca_fit",
            d,
            format!("column {bad} of length {}", columns[bad].len()),
        ));
    }

    let mean: Vec<f64> = (0..d)
        .map(|i| {
            let vals: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            pairwise_sum(&vals) / n as f64
        })
        .collect();
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| c.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = Mat::zeros(d, d);
    let mut buf = vec![0.0; n];
    for i in 0..d {
        for j in 0..=i {
            for (b, c) in buf.iter_mut().zip(&centered) {
                *b = c[i] * c[j];
            }
            let v = pairwise_sum(&buf) / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let dec = sym_eig(&cov)?;
    let top = dec.values[0].max(f64::MIN_POSITIVE);
    if dec.values[p - 1] <= 1e-12 * top {
        return Err(Error::RankDeficient {
            ratio: dec.values[p - 1] / top,
        });
    }
    let basis = Mat::from_fn(d, p, |i, j| dec.vectors[(i, j)]);
    Ok(Pca {
        basis,
        mean,
        variances: dec.values[..p].to_vec(),
    })
}

impl Pca {
    pub fn input_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.cols()
    }

    /// `basis^T (x − mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("pca_project", self.input_dim(), x.len()));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.basis.t_matvec(&centered))
    }

    pub fn project_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.project(x)).collect()
    }

    /// `mean + basis y`.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        self.basis
            .matvec(y)
            .iter()
            .zip(&self.mean)
            .map(|(a, m)| a + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn exact_subspace_reconstructs() {
        let mut rng = SeededRng::new(1);
        let dirs: Vec<Vec<f64>> = (0..2).map(|_| rng.gaussian_vec(6)).collect();
        let offset = rng.gaussian_vec(6);
        let data: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let (a, b) = (rng.gaussian(), rng.gaussian());
                (0..6)
                    .map(|i| offset[i] + a * dirs[0][i] + b * dirs[1][i])
                    .collect()
            })
            .collect();
        let pca = pca_fit(&data, 2).unwrap();
        for x in &data {
            let back = pca.reconstruct(&pca.project(x).unwrap());
            assert!(dist(&back, x) <= 1e-10);
        }
    }

    #[test]
    fn full_rank_is_isometry() {
        let mut rng = SeededRng::new(2);
        let data: Vec<Vec<f64>> = (0..20).map(|_| rng.gaussian_vec(5)).collect();
        let pca = pca_fit(&data, 5).unwrap();
        let proj = pca.project_batch(&data).unwrap();
        for i in 0..data.len() {
            for j in 0..i {
                assert!((dist(&data[i], &data[j]) - dist(&proj[i], &proj[j])).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn anisotropic_variances_descend() {
        let mut rng = SeededRng::new(3);
        let scales = [0.5, 3.0, 1.0, 0.1, 2.0];
        let data: Vec<Vec<f64>> = (0..500)
            .map(|_| scales.iter().map(|s| s * rng.gaussian()).collect())
            .collect();
        let pca = pca_fit(&data, 3).unwrap();
        let proj = pca.project_batch(&data).unwrap();
        let var = |k: usize| proj.iter().map(|y| y[k] * y[k]).sum::<f64>() / 499.0;
        let measured: Vec<f64> = (0..3).map(var).collect();
        assert!(measured[0] >= measured[1] && measured[1] >= measured[2]);
        for (m, v) in measured.iter().zip(&pca.variances) {
            assert!((m - v).abs() <= 1e-9 * v);
        }
    }

    #[test]
    fn projection_edge_cases() {
        let mut rng = SeededRng::new(4);
        let data: Vec<Vec<f64>> = (0..10).map(|_| rng.gaussian_vec(4)).collect();
        let pca = pca_fit(&data, 2).unwrap();
        assert!(pca
            .project(&pca.mean)
            .unwrap()
            .iter()
            .all(|&v| v.abs() < 1e-15));
        let x: Vec<f64> = (0..4).map(|i| pca.mean[i] + pca.basis[(i, 0)]).collect();
        let y = pca.project(&x).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12);
        assert!(pca.project(&[0.0; 3]).is_err());
    }

    #[test]
    fn parameter_errors() {
        let data = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        assert!(matches!(pca_fit(&data, 3), Err(Error::Parameter(_))));
        assert!(matches!(pca_fit(&data[..1], 1), Err(Error::Parameter(_))));
    }
}
