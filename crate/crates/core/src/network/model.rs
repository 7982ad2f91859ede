use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{
    bimap_backward, bimap_forward, fc_backward, fc_forward, logeig_backward, logeig_forward,
    reeig_backward, reeig_forward, softmax_ce, subsec_backward, subsec_forward, trilcan_backward,
    trilcan_forward, window_index_sets, BiMapTape, FcTape, LogEigTape, ReEigTape, SubSecTape,
    TrilCanTape, WindowIndexSet,
};
use crate::linalg::Mat;
use crate::network::MsNetConfig;
use crate::optim::{init_semi_orthogonal, ParamMut, StiefelParam};
use crate::rng::SeededRng;

/// RNG stream ids derived from the config seed.
pub(crate) const SHUFFLE_STREAM: u64 = 0;
const INIT_STREAM_BASE: u64 = 1;

/// Trainable parameters plus the config that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MsNetModel {
    pub config: MsNetConfig,
    /// Effective window sides, ascending; one branch per entry.
    pub scales: Vec<usize>,
    pub backbone: Vec<StiefelParam>,
    pub branches: Vec<StiefelParam>,
    pub fc_weight: Mat,
    pub fc_bias: Vec<f64>,
    windows: Vec<Vec<WindowIndexSet>>,
}

/// Name, shape and kind of every tensor of a model, in storage order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub stiefel: bool,
}

pub fn feature_dim(config: &MsNetConfig) -> Result<usize> {
    config.feature_dim()
}

impl MsNetModel {
    /// Semi-orthogonal BiMaps and a Gaussian FC layer (std `1/√feature_dim`, zero bias),
    /// all drawn from streams of `config.seed`.
    pub fn build(config: &MsNetConfig) -> Result<Self> {
        config.validate()?;
        let scales = config.effective_scales()?;
        let features = config.feature_dim()?;
        let mut stream = INIT_STREAM_BASE;
        let mut next_rng = || {
            let rng = SeededRng::stream(config.seed, stream);
            stream += 1;
            rng
        };

        let backbone = config
            .backbone_dims
            .windows(2)
            .map(|w| init_semi_orthogonal(&mut next_rng(), w[1], w[0]))
            .collect::<Result<Vec<_>>>()?;
        let branches = scales
            .iter()
            .map(|_| {
                init_semi_orthogonal(
                    &mut next_rng(),
                    config.branch_dim,
                    config.last_backbone_dim(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = next_rng();
        let std = 1.0 / (features as f64).sqrt();
        let fc_weight = Mat::from_fn(config.num_classes, features, |_, _| std * rng.gaussian());
        let fc_bias = vec![0.0; config.num_classes];
        Self::from_parts(config.clone(), backbone, branches, fc_weight, fc_bias)
    }

    pub fn from_parts(
        config: MsNetConfig,
        backbone: Vec<StiefelParam>,
        branches: Vec<StiefelParam>,
        fc_weight: Mat,
        fc_bias: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let scales = config.effective_scales()?;
        let d = config.grid_side()?;
        let windows = scales
            .iter()
            .map(|&k| window_index_sets(d, k, config.step))
            .collect::<Result<Vec<_>>>()?;
        let model = MsNetModel {
            scales,
            backbone,
            branches,
            fc_weight,
            fc_bias,
            windows,
            config,
        };
        let expected = model.tensor_specs()?;
        let actual = model.actual_specs();
        if expected != actual {
            return Err(Error::shape(
                "MsNetModel",
                format!("{expected:?}"),
                format!("{actual:?}"),
            ));
        }
        Ok(model)
    }

    /// Tensor layout implied by `self.config`.
    pub fn tensor_specs(&self) -> Result<Vec<TensorSpec>> {
        tensor_specs(&self.config)
    }

    fn actual_specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        for (i, w) in self.backbone.iter().enumerate() {
            let (r, c) = w.shape();
            out.push(TensorSpec {
                name: format!("backbone.{i}"),
                dims: vec![r, c],
                stiefel: true,
            });
        }
        for (i, w) in self.branches.iter().enumerate() {
            let (r, c) = w.shape();
            out.push(TensorSpec {
                name: format!("branch.{i}"),
                dims: vec![r, c],
                stiefel: true,
            });
        }
        let (r, c) = self.fc_weight.shape();
        out.push(TensorSpec {
            name: "fc.weight".into(),
            dims: vec![r, c],
            stiefel: false,
        });
        out.push(TensorSpec {
            name: "fc.bias".into(),
            dims: vec![self.fc_bias.len()],
            stiefel: false,
        });
        out
    }

    pub fn feature_dim(&self) -> usize {
        self.fc_weight.cols()
    }

    pub fn windows(&self) -> &[Vec<WindowIndexSet>] {
        &self.windows
    }

    /// Flat views of every tensor, in [`tensor_specs`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.backbone.iter().map(|w| w.as_mat().as_slice()));
        out.extend(self.branches.iter().map(|w| w.as_mat().as_slice()));
        out.push(self.fc_weight.as_slice());
        out.push(&self.fc_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        out.extend(self.backbone.iter_mut().map(ParamMut::Stiefel));
        out.extend(self.branches.iter_mut().map(ParamMut::Stiefel));
        out.push(ParamMut::Euclidean(self.fc_weight.as_mut_slice()));
        out.push(ParamMut::Euclidean(&mut self.fc_bias));
        out
    }

    /// Largest Frobenius norm among the tensors, with its name.
    pub fn largest_tensor_norm(&self) -> (String, f64) {
        let specs = self.actual_specs();
        specs
            .iter()
            .zip(self.tensors())
            .map(|(s, t)| (s.name.clone(), t.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .fold((String::new(), f64::NEG_INFINITY), |best, cur| {
                if !(cur.1 <= best.1) {
                    cur
                } else {
                    best
                }
            })
    }
}

pub fn tensor_specs(config: &MsNetConfig) -> Result<Vec<TensorSpec>> {
    let scales = config.effective_scales()?;
    let mut out = Vec::new();
    for (i, w) in config.backbone_dims.windows(2).enumerate() {
        out.push(TensorSpec {
            name: format!("backbone.{i}"),
            dims: vec![w[1], w[0]],
            stiefel: true,
        });
    }
    for i in 0..scales.len() {
        out.push(TensorSpec {
            name: format!("branch.{i}"),
            dims: vec![config.branch_dim, config.last_backbone_dim()],
            stiefel: true,
        });
    }
    let f = config.feature_dim()?;
    out.push(TensorSpec {
        name: "fc.weight".into(),
        dims: vec![config.num_classes, f],
        stiefel: false,
    });
    out.push(TensorSpec {
        name: "fc.bias".into(),
        dims: vec![config.num_classes],
        stiefel: false,
    });
    Ok(out)
}

/// Everything one sample's forward pass cached for its backward pass.
#[derive(Clone, Debug)]
pub struct SampleTape {
    pub backbone: Vec<(BiMapTape, ReEigTape)>,
    pub branches: Vec<BranchTape>,
    pub fc: FcTape,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BranchTape {
    pub bimap: BiMapTape,
    pub reeig: ReEigTape,
    pub subsec: SubSecTape,
    pub logeig: Vec<LogEigTape>,
    pub trilcan: TrilCanTape,
    pub feature_len: usize,
}

/// Ordered per-sample tapes of a batch forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    pub samples: Vec<SampleTape>,
}

impl ForwardTape {
    pub fn logits(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.logits.clone()).collect()
    }
}

/// Intermediate SPD features of one sample, for inspection.
#[derive(Clone, Debug)]
pub struct Activations {
    /// ReEig outputs of the backbone stages.
    pub backbone: Vec<Mat>,
    /// ReEig output of each branch.
    pub branches: Vec<Mat>,
}

impl SampleTape {
    /// Reconstructs the ReEig outputs from the cached decompositions.
    pub fn activations(&self) -> Activations {
        let rect = |t: &ReEigTape| t.decomp.reconstruct_with(|l| l.max(t.eps));
        Activations {
            backbone: self.backbone.iter().map(|(_, r)| rect(r)).collect(),
            branches: self.branches.iter().map(|b| rect(&b.reeig)).collect(),
        }
    }
}

/// Forward pass of a single sample.
pub fn forward_sample(model: &MsNetModel, input: &Mat) -> Result<(Vec<f64>, SampleTape)> {
    let cfg = &model.config;
    if input.shape() != (cfg.input_dim(), cfg.input_dim()) {
        return Err(Error::shape(
            "forward",
            format!("{0}x{0} input", cfg.input_dim()),
            format!("{}x{}", input.rows(), input.cols()),
        ));
    }
    let mut x = input.clone();
    let mut backbone = Vec::with_capacity(model.backbone.len());
    for (i, w) in model.backbone.iter().enumerate() {
        let ctx = |e: Error| e.context(format!("backbone stage {i}"));
        let (y, bt) = bimap_forward(w.as_mat(), &x).map_err(ctx)?;
        let (z, rt) = reeig_forward(&y, cfg.epsilon).map_err(ctx)?;
        backbone.push((bt, rt));
        x = z;
    }

    let mut features = Vec::with_capacity(model.feature_dim());
    let mut branches = Vec::with_capacity(model.branches.len());
    for (b, w) in model.branches.iter().enumerate() {
        let ctx = |e: Error| e.context(format!("branch {b} (scale {})", model.scales[b]));
        let (y, bt) = bimap_forward(w.as_mat(), &x).map_err(ctx)?;
        let (z, rt) = reeig_forward(&y, cfg.epsilon).map_err(ctx)?;
        let (subs, st) = subsec_forward(&z, &model.windows[b]).map_err(ctx)?;
        let mut logs = Vec::with_capacity(subs.len());
        let mut logeig = Vec::with_capacity(subs.len());
        for (j, p) in subs.iter().enumerate() {
            let (m, lt) = logeig_forward(p).map_err(|e| ctx(e.context(format!("window {j}"))))?;
            logs.push(m);
            logeig.push(lt);
        }
        let (v, tt) = trilcan_forward(&logs);
        let feature_len = v.len();
        features.extend(v);
        branches.push(BranchTape {
            bimap: bt,
            reeig: rt,
            subsec: st,
            logeig,
            trilcan: tt,
            feature_len,
        });
    }

    let (logits, fc) =
        fc_forward(&model.fc_weight, &model.fc_bias, &features).map_err(|e| e.context("fc"))?;
    Ok((
        logits.clone(),
        SampleTape {
            backbone,
            branches,
            fc,
            logits,
        },
    ))
}

fn map_samples<T: Send, I: Sync>(
    pool: Option<&rayon::ThreadPool>,
    items: &[I],
    f: impl Fn(usize, &I) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    match pool {
        Some(pool) => pool.install(|| {
            items
                .par_iter()
                .enumerate()
                .map(|(i, x)| f(i, x))
                .collect::<Vec<_>>()
                .into_iter()
                .collect()
        }),
        None => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

/// Batch forward pass. Returns logits per sample and the tape.
pub fn forward(model: &MsNetModel, inputs: &[&Mat]) -> Result<(Vec<Vec<f64>>, ForwardTape)> {
    forward_with(model, inputs, None)
}

pub fn forward_with(
    model: &MsNetModel,
    inputs: &[&Mat],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Vec<Vec<f64>>, ForwardTape)> {
    let per_sample = map_samples(pool, inputs, |i, x| {
        forward_sample(model, x).map_err(|e| e.context(format!("sample {i}")))
    })?;
    let (logits, samples) = per_sample.into_iter().unzip();
    Ok((logits, ForwardTape { samples }))
}

/// Euclidean gradients of every tensor, laid out like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub backbone: Vec<Mat>,
    pub branches: Vec<Mat>,
    pub fc_weight: Mat,
    pub fc_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &MsNetModel) -> Self {
        let z = |w: &StiefelParam| Mat::zeros(w.shape().0, w.shape().1);
        Gradients {
            backbone: model.backbone.iter().map(z).collect(),
            branches: model.branches.iter().map(z).collect(),
            fc_weight: Mat::zeros(model.fc_weight.rows(), model.fc_weight.cols()),
            fc_bias: vec![0.0; model.fc_bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.backbone.iter_mut().zip(&other.backbone) {
            a.axpy(1.0, b);
        }
        for (a, b) in self.branches.iter_mut().zip(&other.branches) {
            a.axpy(1.0, b);
        }
        self.fc_weight.axpy(1.0, &other.fc_weight);
        for (a, b) in self.fc_bias.iter_mut().zip(&other.fc_bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.backbone.iter_mut().chain(self.branches.iter_mut()) {
            m.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
        self.fc_weight
            .as_mut_slice()
            .iter_mut()
            .for_each(|x| *x *= s);
        self.fc_bias.iter_mut().for_each(|x| *x *= s);
    }

    /// Flat views in model tensor order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.backbone.iter().map(|m| m.as_slice()));
        out.extend(self.branches.iter().map(|m| m.as_slice()));
        out.push(self.fc_weight.as_slice());
        out.push(&self.fc_bias);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Per-sample backward result.
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub loss: f64,
    pub grads: Gradients,
    /// Gradient with respect to the input SPD matrix.
    pub input: Mat,
}

/// Backward pass of one sample through softmax-CE, FC, every branch and the backbone.
pub fn backward_sample(model: &MsNetModel, tape: &SampleTape, label: usize) -> Result<SampleGrad> {
    let (loss, grad_logits) = softmax_ce(&tape.logits, label)?;
    let (grad_fc_w, grad_fc_b, grad_features) =
        fc_backward(&tape.fc, &model.fc_weight, &grad_logits)?;

    let mut grad_branches = Vec::with_capacity(model.branches.len());
    let mut grad_x: Option<Mat> = None;
    let mut offset = 0;
    for (b, bt) in tape.branches.iter().enumerate() {
        let ctx = |e: Error| e.context(format!("branch {b} backward"));
        let slice = &grad_features[offset..offset + bt.feature_len];
        offset += bt.feature_len;
        let per_window = trilcan_backward(&bt.trilcan, slice).map_err(ctx)?;
        let through_log = per_window
            .iter()
            .zip(&bt.logeig)
            .map(|(g, lt)| logeig_backward(lt, g))
            .collect::<Result<Vec<_>>>()
            .map_err(ctx)?;
        let g = subsec_backward(&bt.subsec, &through_log).map_err(ctx)?;
        let g = reeig_backward(&bt.reeig, &g).map_err(ctx)?;
        let (gw, gs) = bimap_backward(&bt.bimap, &g).map_err(ctx)?;
        grad_branches.push(gw);
        match grad_x.as_mut() {
            Some(acc) => acc.axpy(1.0, &gs),
            None => grad_x = Some(gs),
        }
    }
    let mut g = grad_x.ok_or_else(|| Error::Parameter("model has no branches".into()))?;

    let mut grad_backbone = vec![Mat::zeros(0, 0); tape.backbone.len()];
    for (i, (bt, rt)) in tape.backbone.iter().enumerate().rev() {
        let ctx = |e: Error| e.context(format!("backbone stage {i} backward"));
        let gr = reeig_backward(rt, &g).map_err(ctx)?;
        let (gw, gs) = bimap_backward(bt, &gr).map_err(ctx)?;
        grad_backbone[i] = gw;
        g = gs;
    }

    Ok(SampleGrad {
        loss,
        grads: Gradients {
            backbone: grad_backbone,
            branches: grad_branches,
            fc_weight: grad_fc_w,
            fc_bias: grad_fc_b,
        },
        input: g,
    })
}

/// Batch-averaged gradients and loss.
#[derive(Clone, Debug)]
pub struct BatchGrad {
    pub loss: f64,
    pub grads: Gradients,
    /// Per-sample input gradients of the averaged loss.
    pub inputs: Vec<Mat>,
}

/// Averages per-sample gradients over the batch, reduced in sample order.
pub fn backward(model: &MsNetModel, tape: &ForwardTape, labels: &[usize]) -> Result<BatchGrad> {
    backward_with(model, tape, labels, None)
}

pub fn backward_with(
    model: &MsNetModel,
    tape: &ForwardTape,
    labels: &[usize],
    pool: Option<&rayon::ThreadPool>,
) -> Result<BatchGrad> {
    if tape.samples.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape("backward", tape.samples.len(), labels.len()));
    }
    let per_sample = map_samples(pool, &tape.samples, |i, t| {
        backward_sample(model, t, labels[i]).map_err(|e| e.context(format!("sample {i}")))
    })?;
    let n = labels.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let mut inputs = Vec::with_capacity(per_sample.len());
    for s in per_sample {
        grads.add_assign(&s.grads);
        loss += s.loss;
        inputs.push(s.input.scale(1.0 / n));
    }
    grads.scale(1.0 / n);
    Ok(BatchGrad {
        loss: loss / n,
        grads,
        inputs,
    })
}

/// Mean softmax-CE loss of a batch, forward only.
pub fn batch_loss(model: &MsNetModel, inputs: &[&Mat], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let (logits, _) = forward_sample(model, x)?;
        total += softmax_ce(&logits, y)?.0;
    }
    Ok(total / labels.len() as f64)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}
