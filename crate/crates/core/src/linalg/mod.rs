//! Dense symmetric linear algebra: eigendecomposition, spectral maps and their
//! gradients, row orthonormalization, PCA.

mod eig;
mod mat;
mod pca;
mod qr;
mod spectral;

pub use eig::{sym_eig, EigDecomp, SYMMETRY_TOL};
pub use mat::{dot, pairwise_sum, Mat};
pub use pca::{pca_fit, Pca};
pub use qr::{orthonormality_error, qr_row_orthonormalize, RANK_TOL};
pub use spectral::{
    divided_differences, spectral_map, spectral_map_backward, spectral_map_decomp, SpectralFn,
    DEGENERATE_GAP,
};
