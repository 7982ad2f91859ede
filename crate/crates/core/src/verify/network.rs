use crate::error::Result;
use crate::linalg::Mat;
use crate::network::{backward, batch_loss, forward, MsNetConfig, MsNetModel, Variant};
use crate::optim::LrSchedule;
use crate::rng::SeededRng;
use crate::verify::fd::{discrepancy, finite_diff, finite_diff_sym, pair_sum};
use crate::verify::gradcheck::{conditioned_spd, GradCheckReport};

/// End-to-end check of every parameter and input gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCheck {
    pub config: MsNetConfig,
    pub seeds: Vec<u64>,
    pub tol: f64,
    pub batch: usize,
    pub h: f64,
    /// Halves every analytic BiMap weight gradient, as if `bimap_backward` had lost
    /// its factor 2. The check is expected to fail.
    pub planted_bug: bool,
}

impl NetworkCheck {
    pub fn new(config: MsNetConfig) -> Self {
        NetworkCheck {
            config,
            seeds: (0..5).collect(),
            tol: 1e-4,
            batch: 1,
            h: super::DEFAULT_STEP,
            planted_bug: false,
        }
    }
}

/// Input 9x9, backbone 9→6, branch 6→4 (a 2x2 grid), scales {1, 2}, three classes.
pub fn tiny_config(variant: Variant) -> MsNetConfig {
    MsNetConfig {
        backbone_dims: vec![9, 6],
        branch_dim: 4,
        scales: vec![1, 2],
        step: 1,
        variant,
        epsilon: 0.3,
        num_classes: 3,
        lambda: 1e-3,
        epochs: 1,
        batch_size: 1,
        seed: 0,
        schedule: LrSchedule::default(),
    }
}

/// The smallest configuration on which every variant has a non-empty scale set:
/// input 12x12, backbone 12→10, branch 10→9 (a 3x3 grid), scales {1, 2, 3}.
pub fn tiny_config_d3(variant: Variant) -> MsNetConfig {
    MsNetConfig {
        backbone_dims: vec![12, 10],
        branch_dim: 9,
        scales: vec![1, 2, 3],
        ..tiny_config(variant)
    }
}

/// Smallest distance from any ReEig input eigenvalue to the threshold, over a batch.
fn kink_distance(model: &MsNetModel, inputs: &[&Mat]) -> Result<f64> {
    let (_, tape) = forward(model, inputs)?;
    let eps = model.config.epsilon;
    let mut min = f64::INFINITY;
    for s in &tape.samples {
        let spectra = s
            .backbone
            .iter()
            .map(|(_, r)| &r.decomp.values)
            .chain(s.branches.iter().map(|b| &b.reeig.decomp.values));
        for values in spectra {
            for v in values {
                min = min.min((v - eps).abs());
            }
        }
    }
    Ok(min)
}

/// Per seed: a model built with that seed, a batch of conditioned SPD inputs with
/// eigenvalues in `[0.1, 2]` and random labels. Analytic gradients of the mean
/// softmax-CE loss are compared with central differences over every parameter
/// entry and every symmetric input pair. Seeds whose ReEig spectra come within
/// `100·h` of the threshold are reported as excluded.
pub fn gradcheck_network(check: &NetworkCheck) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(format!("network[{}]", check.config.variant), check.tol);
    let h = check.h;
    for &seed in &check.seeds {
        report.seeds.push(seed);
        let config = MsNetConfig {
            seed,
            ..check.config.clone()
        };
        let model = MsNetModel::build(&config)?;
        let mut rng = SeededRng::stream(seed, 0x6e65_7477);
        let n = config.input_dim();
        let inputs: Vec<Mat> = (0..check.batch.max(1))
            .map(|_| conditioned_spd(&mut rng, n, 0.1, 2.0))
            .collect();
        let labels: Vec<usize> = inputs
            .iter()
            .map(|_| rng.below(config.num_classes))
            .collect();
        let refs: Vec<&Mat> = inputs.iter().collect();

        if kink_distance(&model, &refs)? <= 100.0 * h {
            report.excluded.push(seed);
            continue;
        }

        let (_, tape) = forward(&model, &refs)?;
        let mut grad = backward(&model, &tape, &labels)?;
        if check.planted_bug {
            for g in grad
                .grads
                .backbone
                .iter_mut()
                .chain(grad.grads.branches.iter_mut())
            {
                *g = g.scale(0.5);
            }
        }

        let loss_with = |edit: &dyn Fn(&mut MsNetModel)| -> f64 {
            let mut m = model.clone();
            edit(&mut m);
            batch_loss(&m, &refs, &labels).unwrap_or(f64::NAN)
        };

        // Parameters are perturbed as plain matrices, off the manifold: the
        // analytic values are Euclidean gradients.
        for (i, g) in grad.grads.backbone.iter().enumerate() {
            let w0 = model.backbone[i].as_mat().clone();
            let numeric = finite_diff(
                |w| {
                    loss_with(&|m| m.backbone[i] = crate::optim::StiefelParam::unchecked(w.clone()))
                },
                &w0,
                h,
            )?;
            report.record(
                &format!("backbone.{i}"),
                discrepancy(g.as_slice(), numeric.as_slice()),
            );
        }
        for (i, g) in grad.grads.branches.iter().enumerate() {
            let w0 = model.branches[i].as_mat().clone();
            let numeric = finite_diff(
                |w| {
                    loss_with(&|m| m.branches[i] = crate::optim::StiefelParam::unchecked(w.clone()))
                },
                &w0,
                h,
            )?;
            report.record(
                &format!("branch.{i}"),
                discrepancy(g.as_slice(), numeric.as_slice()),
            );
        }
        let numeric = finite_diff(
            |w| loss_with(&|m| m.fc_weight = w.clone()),
            &model.fc_weight,
            h,
        )?;
        report.record(
            "fc.weight",
            discrepancy(grad.grads.fc_weight.as_slice(), numeric.as_slice()),
        );
        let b0 = Mat::from_vec(1, model.fc_bias.len(), model.fc_bias.clone())?;
        let numeric = finite_diff(
            |b| loss_with(&|m| m.fc_bias = b.as_slice().to_vec()),
            &b0,
            h,
        )?;
        report.record(
            "fc.bias",
            discrepancy(&grad.grads.fc_bias, numeric.as_slice()),
        );

        for (k, x) in inputs.iter().enumerate() {
            let numeric = finite_diff_sym(
                |s| {
                    let mut batch = refs.clone();
                    batch[k] = s;
                    batch_loss(&model, &batch, &labels).unwrap_or(f64::NAN)
                },
                x,
                h,
            )?;
            report.record(
                "input",
                discrepancy(pair_sum(&grad.inputs[k]).as_slice(), numeric.as_slice()),
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_network_passes() {
        let check = NetworkCheck {
            seeds: vec![0, 1],
            ..NetworkCheck::new(tiny_config(Variant::MS))
        };
        let r = gradcheck_network(&check).unwrap();
        assert!(r.pass, "{r}");
        assert!(r.excluded.len() < r.seeds.len());
    }

    #[test]
    fn planted_bug_is_caught() {
        let check = NetworkCheck {
            seeds: vec![0],
            planted_bug: true,
            ..NetworkCheck::new(tiny_config(Variant::MS))
        };
        let r = gradcheck_network(&check).unwrap();
        assert!(!r.pass);
        let bb = r.tensor("backbone.0").unwrap();
        assert!((bb.max_rel - 0.5).abs() < 0.05, "{r}");
        assert!(r.tensor("fc.weight").unwrap().pass);
    }
}
