use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::spdcore::{tril_len, tril_vec};

#[derive(Clone, Debug)]
pub struct TrilCanTape {
    pub dims: Vec<usize>,
}

/// Concatenated lower-triangular vectorizations, in list order.
pub fn trilcan_forward(mats: &[Mat]) -> (Vec<f64>, TrilCanTape) {
    let dims: Vec<usize> = mats.iter().map(|m| m.rows()).collect();
    let mut out = Vec::with_capacity(dims.iter().map(|&d| tril_len(d)).sum());
    for m in mats {
        out.extend(tril_vec(m).values);
    }
    (out, TrilCanTape { dims })
}

/// Places the vector gradient on each matrix's lower triangle; the upper triangle
/// stays zero and the symmetric part is taken downstream.
pub fn trilcan_backward(tape: &TrilCanTape, grad: &[f64]) -> Result<Vec<Mat>> {
    let total: usize = tape.dims.iter().map(|&d| tril_len(d)).sum();
    if grad.len() != total {
        return Err(Error::shape("trilcan_backward", total, grad.len()));
    }
    let mut it = grad.iter();
    let mut out = Vec::with_capacity(tape.dims.len());
    for &d in &tape.dims {
        let mut m = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                m[(i, j)] = *it.next().unwrap();
            }
        }
        out.push(m);
    }
    Ok(out)
}
