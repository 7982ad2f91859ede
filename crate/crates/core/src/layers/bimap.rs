use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Cached weight and input of a BiMap call.
#[derive(Clone, Debug)]
pub struct BiMapTape {
    pub weight: Mat,
    pub input: Mat,
}

/// `W S W^T` for rows-orthonormal `W` (`d_out x d_in`) and SPD `S` (`d_in x d_in`).
pub fn bimap_forward(w: &Mat, s: &Mat) -> Result<(Mat, BiMapTape)> {
    let d_in = w.cols();
    if s.shape() != (d_in, d_in) {
        return Err(Error::shape(
            "bimap_forward",
            format!("{d_in}x{d_in} input"),
            format!("{}x{}", s.rows(), s.cols()),
        ));
    }
    let out = w.matmul(s).matmul_t(w).sym();
    let tape = BiMapTape {
        weight: w.clone(),
        input: s.clone(),
    };
    Ok((out, tape))
}

/// Returns `(grad_W, grad_S)`: `2 sym(G) W S` and `W^T sym(G) W`.
///
/// `grad_W` is the Euclidean gradient; projecting it onto the Stiefel tangent space
/// is left to the optimizer.
pub fn bimap_backward(tape: &BiMapTape, grad_out: &Mat) -> Result<(Mat, Mat)> {
    let d_out = tape.weight.rows();
    if grad_out.shape() != (d_out, d_out) {
        return Err(Error::shape(
            "bimap_backward",
            format!("{d_out}x{d_out}"),
            format!("{}x{}", grad_out.rows(), grad_out.cols()),
        ));
    }
    let g = grad_out.sym();
    let gw = g.matmul(&tape.weight);
    let grad_w = gw.matmul(&tape.input).scale(2.0);
    let grad_s = tape.weight.t_matmul(&gw).sym();
    Ok((grad_w, grad_s))
}
