//! Output head: fully connected layer plus softmax cross-entropy.

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Debug)]
pub struct FcTape {
    pub input: Vec<f64>,
}

/// `weights · v + bias`.
pub fn fc_forward(weights: &Mat, bias: &[f64], v: &[f64]) -> Result<(Vec<f64>, FcTape)> {
    if weights.cols() != v.len() {
        return Err(Error::shape("fc_forward", weights.cols(), v.len()));
    }
    if weights.rows() != bias.len() {
        return Err(Error::shape("fc_forward bias", weights.rows(), bias.len()));
    }
    let mut logits = weights.matvec(v);
    for (l, b) in logits.iter_mut().zip(bias) {
        *l += b;
    }
    Ok((logits, FcTape { input: v.to_vec() }))
}

/// Returns `(grad_weights, grad_bias, grad_input)`.
pub fn fc_backward(
    tape: &FcTape,
    weights: &Mat,
    grad_logits: &[f64],
) -> Result<(Mat, Vec<f64>, Vec<f64>)> {
    if grad_logits.len() != weights.rows() || tape.input.len() != weights.cols() {
        return Err(Error::shape(
            "fc_backward",
            format!("{} logits over {} inputs", weights.rows(), weights.cols()),
            format!(
                "{} logits over {} inputs",
                grad_logits.len(),
                tape.input.len()
            ),
        ));
    }
    let grad_w = Mat::from_fn(weights.rows(), weights.cols(), |c, f| {
        grad_logits[c] * tape.input[f]
    });
    let grad_v = weights.t_matvec(grad_logits);
    Ok((grad_w, grad_logits.to_vec(), grad_v))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// `softmax(logits) − onehot(label)`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let loss = log_total - (logits[label] - max);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn zero_weights_give_bias() {
        let (l, _) =
            fc_forward(&Mat::zeros(3, 4), &[1.0, -2.0, 0.5], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(l, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_input_backward() {
        let w = Mat::from_fn(2, 3, |i, j| (i + j) as f64);
        let (_, tape) = fc_forward(&w, &[0.0, 0.0], &[0.0; 3]).unwrap();
        let (gw, gb, gv) = fc_backward(&tape, &w, &[0.3, -0.7]).unwrap();
        assert!(gw.is_zero());
        assert_eq!(gb, vec![0.3, -0.7]);
        assert_eq!(gv, w.t_matvec(&[0.3, -0.7]));
    }

    #[test]
    fn fc_finite_differences() {
        let mut rng = SeededRng::new(1);
        let w = Mat::from_fn(3, 5, |_, _| rng.gaussian());
        let b = rng.gaussian_vec(3);
        let v = rng.gaussian_vec(5);
        let probe = rng.gaussian_vec(3);
        let loss = |w: &Mat, b: &[f64], v: &[f64]| -> f64 {
            let (l, _) = fc_forward(w, b, v).unwrap();
            l.iter().zip(&probe).map(|(a, p)| a * p).sum()
        };
        let (_, tape) = fc_forward(&w, &b, &v).unwrap();
        let (gw, gb, gv) = fc_backward(&tape, &w, &probe).unwrap();
        let h = 1e-5;
        for c in 0..3 {
            for f in 0..5 {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[(c, f)] += h;
                wm[(c, f)] -= h;
                let num = (loss(&wp, &b, &v) - loss(&wm, &b, &v)) / (2.0 * h);
                assert!((num - gw[(c, f)]).abs() <= 1e-7);
            }
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[c] += h;
            bm[c] -= h;
            assert!(((loss(&w, &bp, &v) - loss(&w, &bm, &v)) / (2.0 * h) - gb[c]).abs() <= 1e-7);
        }
        for f in 0..5 {
            let (mut vp, mut vm) = (v.clone(), v.clone());
            vp[f] += h;
            vm[f] -= h;
            assert!(((loss(&w, &b, &vp) - loss(&w, &b, &vm)) / (2.0 * h) - gv[f]).abs() <= 1e-7);
        }
    }

    #[test]
    fn softmax_ce_literals() {
        let (loss, grad) = softmax_ce(&[0.3; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!(grad.iter().sum::<f64>().abs() < 1e-15);
        let (loss, _) = softmax_ce(&[30.0, 0.0, 0.0], 0).unwrap();
        assert!(loss <= 1e-12);
        assert!(matches!(
            softmax_ce(&[0.0; 3], 3),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_ce_finite_differences() {
        let mut rng = SeededRng::new(2);
        for _ in 0..20 {
            let logits = rng.gaussian_vec(5);
            let label = rng.below(5);
            let (_, grad) = softmax_ce(&logits, label).unwrap();
            assert!(grad.iter().sum::<f64>().abs() <= 1e-12);
            for c in 0..5 {
                let (mut p, mut m) = (logits.clone(), logits.clone());
                p[c] += 1e-5;
                m[c] -= 1e-5;
                let num =
                    (softmax_ce(&p, label).unwrap().0 - softmax_ce(&m, label).unwrap().0) / 2e-5;
                assert!((num - grad[c]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, grad) = softmax_ce(&[1000.0, -1000.0], 1).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
