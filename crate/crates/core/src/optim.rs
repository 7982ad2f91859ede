//! Parameter updates: Riemannian SGD on the Stiefel manifold for BiMap weights,
//! plain SGD for the output head, the step-decay learning-rate schedule and
//! semi-orthogonal initialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormality_error, qr_row_orthonormalize, Mat};
use crate::rng::SeededRng;

/// Tolerance of `‖W W^T − I‖_F` accepted when wrapping an existing matrix.
pub const STIEFEL_TOL: f64 = 1e-8;

/// A `d_out x d_in` matrix with orthonormal rows.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelParam(Mat);

impl StiefelParam {
    pub fn new(w: Mat) -> Result<Self> {
        if w.rows() > w.cols() || w.rows() == 0 {
            return Err(Error::shape(
                "StiefelParam",
                "1 <= d_out <= d_in",
                format!("{}x{}", w.rows(), w.cols()),
            ));
        }
        let err = orthonormality_error(&w);
        if !(err <= STIEFEL_TOL) {
            return Err(Error::Parameter(format!(
                "rows are not orthonormal: ‖WWᵀ − I‖ = {err:e}"
            )));
        }
        Ok(StiefelParam(w))
    }

    /// Wraps `w` without checking orthonormality. Meant for off-manifold probes such
    /// as finite differences; optimizer steps on such a value are meaningless.
    pub fn unchecked(w: Mat) -> Self {
        StiefelParam(w)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }
}

/// Seeded standard-Gaussian draw, row-orthonormalized.
pub fn init_semi_orthogonal(
    rng: &mut SeededRng,
    d_out: usize,
    d_in: usize,
) -> Result<StiefelParam> {
    if d_out > d_in || d_out == 0 {
        return Err(Error::Parameter(format!(
            "semi-orthogonal init needs 1 <= d_out <= d_in, got {d_out}x{d_in}"
        )));
    }
    let draw = Mat::from_fn(d_out, d_in, |_, _| rng.gaussian());
    Ok(StiefelParam(qr_row_orthonormalize(&draw)?))
}

/// Tangent-space projection `G − sym(G W^T) W`.
pub fn stiefel_project(w: &StiefelParam, g: &Mat) -> Result<Mat> {
    if g.shape() != w.shape() {
        return Err(Error::shape(
            "stiefel_project",
            format!("{}x{}", w.0.rows(), w.0.cols()),
            format!("{}x{}", g.rows(), g.cols()),
        ));
    }
    let sym = g.matmul_t(&w.0).sym();
    Ok(g.sub(&sym.matmul(&w.0)))
}

/// QR retraction of `W − η·direction`. A zero step returns `W` untouched.
pub fn stiefel_retract(w: &StiefelParam, direction: &Mat, eta: f64) -> Result<StiefelParam> {
    if direction.shape() != w.shape() {
        return Err(Error::shape(
            "stiefel_retract",
            format!("{}x{}", w.0.rows(), w.0.cols()),
            format!("{}x{}", direction.rows(), direction.cols()),
        ));
    }
    if eta == 0.0 || direction.is_zero() {
        return Ok(w.clone());
    }
    let mut moved = w.0.clone();
    moved.axpy(-eta, direction);
    Ok(StiefelParam(qr_row_orthonormalize(&moved)?))
}

/// Step decay: `max(floor, initial · decay^⌊epoch / period⌋)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub period: usize,
    pub floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-2,
            decay: 0.8,
            period: 50,
            floor: 1e-3,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.decay > 0.0
            && self.decay < 1.0
            && self.period > 0
            && self.floor > 0.0
            && self.floor <= self.initial;
        if ok {
            Ok(())
        } else {
            Err(Error::Config {
                field: "schedule",
                msg: format!("{self:?} violates 0 < decay < 1, period > 0, 0 < floor <= initial"),
            })
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    let steps = (epoch / schedule.period).min(i32::MAX as usize) as i32;
    (schedule.initial * schedule.decay.powi(steps)).max(schedule.floor)
}

/// A mutable view of one trainable tensor.
pub enum ParamMut<'a> {
    Stiefel(&'a mut StiefelParam),
    Euclidean(&'a mut [f64]),
}

/// One SGD step. Stiefel parameters move along the projected gradient and are
/// retracted; Euclidean ones take `p − lr·g`. `grads[i]` is the flat (row-major)
/// Euclidean gradient of `params[i]`.
pub fn step(params: &mut [ParamMut<'_>], grads: &[&[f64]], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("optim::step", params.len(), grads.len()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        match p {
            ParamMut::Stiefel(w) => {
                let (r, c) = w.shape();
                let g = Mat::from_vec(r, c, g.to_vec())?;
                let tangent = stiefel_project(w, &g)?;
                **w = stiefel_retract(w, &tangent, lr)?;
            }
            ParamMut::Euclidean(values) => {
                if values.len() != g.len() {
                    return Err(Error::shape("optim::step", values.len(), g.len()));
                }
                for (v, gi) in values.iter_mut().zip(g.iter()) {
                    *v -= lr * gi;
                }
            }
        }
    }
    Ok(())
}
