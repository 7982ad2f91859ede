use crate::error::{Error, Result};
use crate::linalg::{
    spectral_map_backward, spectral_map_decomp, sym_eig, EigDecomp, Mat, SpectralFn,
};

#[derive(Clone, Debug)]
pub struct ReEigTape {
    pub decomp: EigDecomp,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct LogEigTape {
    pub decomp: EigDecomp,
}

/// Eigenvalue rectification `U max(εI, Σ) U^T`.
pub fn reeig_forward(s: &Mat, eps: f64) -> Result<(Mat, ReEigTape)> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Parameter(format!(
            "ReEig threshold must be > 0, got {eps}"
        )));
    }
    let decomp = sym_eig(s)?;
    let out = spectral_map_decomp(&decomp, SpectralFn::Rectify(eps))?;
    Ok((out, ReEigTape { decomp, eps }))
}

pub fn reeig_backward(tape: &ReEigTape, grad_out: &Mat) -> Result<Mat> {
    spectral_map_backward(&tape.decomp, SpectralFn::Rectify(tape.eps), grad_out)
}

/// Matrix logarithm `U log(Σ) U^T`.
pub fn logeig_forward(s: &Mat) -> Result<(Mat, LogEigTape)> {
    let decomp = sym_eig(s)?;
    let out = spectral_map_decomp(&decomp, SpectralFn::Log)?;
    Ok((out, LogEigTape { decomp }))
}

pub fn logeig_backward(tape: &LogEigTape, grad_out: &Mat) -> Result<Mat> {
    spectral_map_backward(&tape.decomp, SpectralFn::Log, grad_out)
}
