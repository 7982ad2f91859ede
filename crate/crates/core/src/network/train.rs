use crate::dataio::SpdDataset;
use crate::error::{Error, Result};
use crate::layers::softmax_ce;
use crate::linalg::Mat;
use crate::network::checkpoint::Checkpoint;
use crate::network::model::{
    argmax, backward_with, forward_sample, forward_with, MsNetModel, SHUFFLE_STREAM,
};
use crate::optim::{lr_at, step};
use crate::rng::SeededRng;

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean softmax-CE loss over the training set after the epoch's updates.
    pub train_loss: f64,
    /// Accuracy over the training set after the epoch's updates.
    pub train_acc: f64,
}

/// Accuracy and confusion counts (`confusion[true][predicted]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub confusion: Vec<Vec<usize>>,
}

fn check_compatible(model: &MsNetModel, data: &SpdDataset) -> Result<()> {
    let cfg = &model.config;
    if data.dim != cfg.input_dim() {
        return Err(Error::shape(
            "dataset",
            format!("dim {}", cfg.input_dim()),
            format!("dim {}", data.dim),
        ));
    }
    if data.class_count > cfg.num_classes {
        return Err(Error::Config {
            field: "num_classes",
            msg: format!(
                "dataset has {} classes, model has {}",
                data.class_count, cfg.num_classes
            ),
        });
    }
    Ok(())
}

pub fn evaluate(model: &MsNetModel, data: &SpdDataset) -> Result<Evaluation> {
    evaluate_with(model, data, None)
}

pub fn evaluate_with(
    model: &MsNetModel,
    data: &SpdDataset,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Evaluation> {
    if data.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_compatible(model, data)?;
    let c = model.config.num_classes;
    let inputs: Vec<&Mat> = data.samples.iter().map(|(s, _)| s.as_mat()).collect();
    let (logits, _) = forward_with(model, &inputs, pool)?;
    let mut confusion = vec![vec![0usize; c]; c];
    let mut correct = 0;
    let mut loss = 0.0;
    for (l, (_, y)) in logits.iter().zip(&data.samples) {
        let p = argmax(l);
        confusion[*y][p] += 1;
        correct += usize::from(p == *y);
        loss += softmax_ce(l, *y)?.0;
    }
    let total = data.samples.len();
    Ok(Evaluation {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        mean_loss: loss / total as f64,
        confusion,
    })
}

/// Owns a model together with the optimizer epoch counter and the shuffle RNG.
pub struct Trainer {
    pub model: MsNetModel,
    /// Number of completed epochs.
    pub epoch: usize,
    rng: SeededRng,
    pool: Option<rayon::ThreadPool>,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: MsNetModel) -> Self {
        let rng = SeededRng::stream(model.config.seed, SHUFFLE_STREAM);
        Trainer {
            model,
            epoch: 0,
            rng,
            pool: None,
            history: Vec::new(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Trainer {
            model: ckpt.model,
            epoch: ckpt.epoch,
            rng: ckpt.rng,
            pool: None,
            history: Vec::new(),
        }
    }

    /// Runs per-sample work on `threads` workers. `1` keeps everything on the
    /// calling thread.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        self.pool = if threads > 1 {
            Some(thread_pool(threads)?)
        } else {
            None
        };
        Ok(self)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
        }
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    fn abort(&self, batch: usize) -> Error {
        let (param, param_norm) = self.model.largest_tensor_norm();
        Error::NumericalAbort {
            epoch: self.epoch,
            batch,
            param,
            param_norm,
        }
    }

    fn is_numerical(e: &Error) -> bool {
        matches!(
            e.root(),
            Error::NonFinite { .. }
                | Error::NoConvergence(_)
                | Error::NonPositiveSpectrum { .. }
                | Error::RankDeficient { .. }
        )
    }

    /// One pass over `data`: seeded shuffle, fixed-order batches (the last one may be
    /// short), one optimizer step per batch at `lr_at(epoch)`.
    pub fn run_epoch(&mut self, data: &SpdDataset) -> Result<EpochRecord> {
        if data.samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_compatible(&self.model, data)?;
        let lr = lr_at(&self.model.config.schedule, self.epoch);
        let mut order: Vec<usize> = (0..data.samples.len()).collect();
        self.rng.shuffle(&mut order);
        let batch_size = self.model.config.batch_size.max(1);

        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let inputs: Vec<&Mat> = chunk.iter().map(|&i| data.samples[i].0.as_mat()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.samples[i].1).collect();
            let pool = self.pool.as_ref();
            let result = forward_with(&self.model, &inputs, pool)
                .and_then(|(_, tape)| backward_with(&self.model, &tape, &labels, pool));
            let grad = match result {
                Ok(g) if g.loss.is_finite() && g.grads.max_abs().is_finite() => g,
                Ok(_) => return Err(self.abort(b)),
                Err(e) if Self::is_numerical(&e) => return Err(self.abort(b)),
                Err(e) => return Err(e),
            };
            let grads = grad.grads.tensors();
            let mut params = self.model.params_mut();
            step(&mut params, &grads, lr)?;
        }

        let eval = evaluate_with(&self.model, data, self.pool.as_ref()).map_err(|e| {
            if Self::is_numerical(&e) {
                self.abort(order.len().div_ceil(batch_size))
            } else {
                e
            }
        })?;
        if !eval.mean_loss.is_finite() {
            return Err(self.abort(order.len().div_ceil(batch_size)));
        }
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            train_loss: eval.mean_loss,
            train_acc: eval.accuracy,
        };
        self.epoch += 1;
        self.history.push(record);
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete, calling `after_epoch` once per
    /// finished epoch.
    pub fn train(
        &mut self,
        data: &SpdDataset,
        mut after_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.model.config.epochs {
            let rec = self.run_epoch(data)?;
            after_epoch(self, &rec)?;
        }
        Ok(())
    }
}

pub use rayon::ThreadPool;

/// A dedicated pool of `threads` workers.
pub fn thread_pool(threads: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {threads} worker threads: {e}")))
}

/// Builds a model from its config and trains it to completion.
pub fn train(model: MsNetModel, data: &SpdDataset) -> Result<(MsNetModel, Vec<EpochRecord>)> {
    let mut t = Trainer::new(model);
    t.train(data, |_, _| Ok(()))?;
    Ok((t.model, t.history))
}

/// Predicted class of one input.
pub fn predict(model: &MsNetModel, input: &Mat) -> Result<usize> {
    Ok(argmax(&forward_sample(model, input)?.0))
}
