//! Dataset files, raw-sequence preprocessing, train/test splits and the
//! planted-window synthetic task.
//!
//! `SPDS` dataset files (little-endian): magic, version `u32`, total file length
//! `u64`, dim `u32`,
//! class_count `u32`, sample_count `u64`, then per sample a label `u32` and
//! `dim²` row-major `f64`s, then a CRC32 of everything before it.
//!
//! `SEQF` raw-sequence files: magic, version `u32`, then until end of file one
//! record per sequence: label `u32`, frame_count `u32`, frame_dim `u32` and
//! `frame_count · frame_dim` `f64`s, frame after frame.

use std::path::Path;

use crate::binio::{decode_sealed, open_header, open_sealed_header, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::layers::{window_index_sets, WindowIndexSet};
use crate::linalg::{pca_fit, qr_row_orthonormalize, spectral_map, Mat, SpectralFn};
use crate::rng::SeededRng;
use crate::spdcore::{assert_spd, covariance_descriptor, tril_vec, SpdMatrix};

pub const DATASET_MAGIC: [u8; 4] = *b"SPDS";
pub const DATASET_VERSION: u32 = 1;
pub const SEQUENCE_MAGIC: [u8; 4] = *b"SEQF";
pub const SEQUENCE_VERSION: u32 = 1;

/// Labelled SPD matrices of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdDataset {
    pub dim: usize,
    pub class_count: usize,
    pub samples: Vec<(SpdMatrix, usize)>,
}

impl SpdDataset {
    pub fn new(dim: usize, class_count: usize, samples: Vec<(SpdMatrix, usize)>) -> Result<Self> {
        for (i, (s, label)) in samples.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::shape(
                    "SpdDataset",
                    format!("dim {dim}"),
                    format!("sample {i} of dim {}", s.dim()),
                ));
            }
            if *label >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: *label,
                    classes: class_count,
                });
            }
        }
        Ok(SpdDataset {
            dim,
            class_count,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|(_, l)| *l).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for (_, l) in &self.samples {
            counts[*l] += 1;
        }
        counts
    }

    /// Sub-dataset of the given sample indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> SpdDataset {
        SpdDataset {
            dim: self.dim,
            class_count: self.class_count,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Index of the first sample failing `assert_spd(·, tol)`, if any.
    pub fn first_non_spd(&self, tol: f64) -> Option<usize> {
        self.samples
            .iter()
            .position(|(s, _)| !assert_spd(s, tol).pass)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
        w.len_u32(self.dim, "dim")?;
        w.len_u32(self.class_count, "class count")?;
        w.u64(self.samples.len() as u64);
        for (s, label) in &self.samples {
            w.len_u32(*label, "label")?;
            w.f64s(s.as_slice());
        }
        Ok(w.seal())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode_sealed(bytes, DATASET_MAGIC, DATASET_VERSION, |r| {
            let dim = r.u32("dim")? as usize;
            let class_count = r.u32("class count")? as usize;
            let n = r.u64("sample count")?;
            let per_sample = 4 + 8 * (dim as u64) * (dim as u64);
            if n.saturating_mul(per_sample) > r.remaining() as u64 {
                return Err(Error::Truncated(format!(
                    "{n} samples of dim {dim} need {} bytes, {} left",
                    n.saturating_mul(per_sample),
                    r.remaining()
                )));
            }
            let mut samples = Vec::with_capacity(n as usize);
            for i in 0..n as usize {
                let label = r.u32("label")? as usize;
                let values = r.f64s(dim * dim, "sample")?;
                let m = SpdMatrix::new(Mat::from_vec(dim, dim, values)?)
                    .map_err(|e| e.context(format!("sample {i}")))?;
                samples.push((m, label));
            }
            SpdDataset::new(dim, class_count, samples)
        })
    }
}

pub fn save_dataset(ds: &SpdDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ds.to_bytes()?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SpdDataset> {
    SpdDataset::from_bytes(&std::fs::read(path)?)
}

/// Header fields of an `SPDS` file, read without decoding the samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub dim: usize,
    pub class_count: usize,
    pub sample_count: u64,
}

pub fn read_dataset_header(bytes: &[u8]) -> Result<DatasetHeader> {
    let (mut r, _) = open_sealed_header(bytes, DATASET_MAGIC, DATASET_VERSION)?;
    Ok(DatasetHeader {
        version: DATASET_VERSION,
        dim: r.u32("dim")? as usize,
        class_count: r.u32("class count")? as usize,
        sample_count: r.u64("sample count")?,
    })
}

/// One recorded sequence: equal-length frame vectors and a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub label: usize,
    pub frames: Vec<Vec<f64>>,
}

impl RawSequence {
    pub fn frame_dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Parameter(format!(
                "sequence needs at least 2 frames, has {}",
                self.frames.len()
            )));
        }
        let d = self.frame_dim();
        if let Some(bad) = self.frames.iter().position(|f| f.len() != d) {
            return Err(Error::shape(
                "RawSequence",
                d,
                format!("frame {bad} of length {}", self.frames[bad].len()),
            ));
        }
        Ok(())
    }

    /// Frames as the columns of a `frame_dim x frame_count` matrix.
    pub fn as_columns(&self) -> Mat {
        Mat::from_fn(self.frame_dim(), self.frames.len(), |i, t| {
            self.frames[t][i]
        })
    }
}

pub fn sequences_to_bytes(seqs: &[RawSequence]) -> Result<Vec<u8>> {
    let mut w = Writer::plain(SEQUENCE_MAGIC, SEQUENCE_VERSION);
    for (i, s) in seqs.iter().enumerate() {
        s.validate()
            .map_err(|e| e.context(format!("sequence {i}")))?;
        w.len_u32(s.label, "label")?;
        w.len_u32(s.frames.len(), "frame count")?;
        w.len_u32(s.frame_dim(), "frame dim")?;
        for f in &s.frames {
            w.f64s(f);
        }
    }
    Ok(w.into_inner())
}

pub fn sequences_from_bytes(bytes: &[u8]) -> Result<Vec<RawSequence>> {
    let mut r: Reader<'_> = open_header(bytes, SEQUENCE_MAGIC, SEQUENCE_VERSION)?;
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let what = format!("sequence {}", out.len());
        let label = r.u32(&what)? as usize;
        let count = r.u32(&what)? as usize;
        let dim = r.u32(&what)? as usize;
        let mut frames = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            frames.push(r.f64s(dim, &what)?);
        }
        out.push(RawSequence { label, frames });
    }
    Ok(out)
}

pub fn write_sequences(seqs: &[RawSequence], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &sequences_to_bytes(seqs)?)
}

pub fn read_sequences(path: impl AsRef<Path>) -> Result<Vec<RawSequence>> {
    sequences_from_bytes(&std::fs::read(path)?)
}

/// Result of preprocessing: the emitted dataset plus the sequences that could not
/// be turned into descriptors.
#[derive(Debug)]
pub struct Preprocessed {
    pub dataset: SpdDataset,
    /// Input index of every emitted sample, in dataset order.
    pub kept: Vec<usize>,
    pub failures: Vec<(usize, Error)>,
}

/// Covariance descriptors of raw sequences, optionally after a PCA projection of
/// every frame. The PCA basis is fit on all frames of the sequences in `fit_subset`.
/// `pca_dim = None` uses the raw frames.
pub fn sequences_to_dataset(
    seqs: &[RawSequence],
    pca_dim: Option<usize>,
    lambda: f64,
    fit_subset: &[usize],
) -> Result<Preprocessed> {
    let first = seqs.first().ok_or(Error::EmptyDataset)?;
    let frame_dim = first.frame_dim();
    for (i, s) in seqs.iter().enumerate() {
        if !s.frames.is_empty() && s.frame_dim() != frame_dim {
            return Err(Error::shape(
                "sequences_to_dataset",
                format!("frame dim {frame_dim}"),
                format!("sequence {i} with {}", s.frame_dim()),
            ));
        }
    }
    let pca = match pca_dim {
        None => None,
        Some(p) => {
            if p == 0 || p > frame_dim {
                return Err(Error::Config {
                    field: "pca_dim",
                    msg: format!("{p} must be in 1..={frame_dim}"),
                });
            }
            let mut frames = Vec::new();
            for &i in fit_subset {
                let s = seqs.get(i).ok_or_else(|| {
                    Error::Parameter(format!(
                        "fit subset index {i} out of range for {} sequences",
                        seqs.len()
                    ))
                })?;
                frames.extend(s.frames.iter().cloned());
            }
            Some(pca_fit(&frames, p)?)
        }
    };
    let dim = pca.as_ref().map_or(frame_dim, |p| p.output_dim());
    let class_count = seqs.iter().map(|s| s.label + 1).max().unwrap_or(0);

    let mut samples = Vec::new();
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let descriptor = s.validate().and_then(|_| {
            let x = match &pca {
                None => s.as_columns(),
                Some(p) => {
                    let proj = p.project_batch(&s.frames)?;
                    Mat::from_fn(dim, proj.len(), |r, t| proj[t][r])
                }
            };
            covariance_descriptor(&x, lambda)
        });
        match descriptor {
            Ok(m) => {
                samples.push((m, s.label));
                kept.push(i);
            }
            Err(e) => failures.push((i, e)),
        }
    }
    Ok(Preprocessed {
        dataset: SpdDataset::new(dim, class_count, samples)?,
        kept,
        failures,
    })
}

/// How many samples of each class go to the training side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    /// `⌊fraction · n⌋`, at least one, at most `n − 1`.
    Fraction(f64),
    /// Exactly this many per class.
    PerClass(usize),
}

/// Per-class seeded shuffle, then the first samples of each class to train.
/// Returns sorted train and test indices.
pub fn split_indices(
    labels: &[usize],
    class_count: usize,
    rule: SplitRule,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if let SplitRule::Fraction(f) = rule {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Parameter(format!(
                "split fraction must be in (0, 1), got {f}"
            )));
        }
    }
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: class_count,
            });
        }
        by_class[l].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let n = members.len();
        if n < 2 {
            return Err(Error::Parameter(format!(
                "class {c} has {n} sample; splitting needs at least 2"
            )));
        }
        let n_train = match rule {
            SplitRule::Fraction(f) => ((f * n as f64).floor() as usize).clamp(1, n - 1),
            SplitRule::PerClass(k) => {
                if k == 0 || k >= n {
                    return Err(Error::Parameter(format!(
                        "class {c} has {n} samples; cannot put {k} in train and keep a test sample"
                    )));
                }
                k
            }
        };
        SeededRng::stream(seed, c as u64).shuffle(&mut members);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seventy-thirty split per class.
pub fn split_str(ds: &SpdDataset, seed: u64) -> Result<(SpdDataset, SpdDataset)> {
    split_with(ds, SplitRule::Fraction(0.7), seed)
}

pub fn split_with(ds: &SpdDataset, rule: SplitRule, seed: u64) -> Result<(SpdDataset, SpdDataset)> {
    let (train, test) = split_indices(&ds.labels(), ds.class_count, rule, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Parameters of the planted-window task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub classes: usize,
    pub n_per_class: usize,
    /// Side `d` of the grid; matrices are `d² x d²`.
    pub grid: usize,
    /// Frames per sample.
    pub frames: usize,
    /// Rank `r` of the loading matrices.
    pub rank: usize,
    pub sigma: f64,
    /// Factor applied to the loading rows of each class's planted window.
    pub amplification: f64,
    pub lambda: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            classes: 2,
            n_per_class: 100,
            grid: 4,
            frames: 64,
            rank: 16,
            sigma: 0.1,
            amplification: 5.0,
            lambda: 1e-3,
        }
    }
}

/// A generated dataset with the windows planted for each class.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub params: SynthParams,
    pub dataset: SpdDataset,
    /// `planted[c]` is the 2x2 grid window amplified for class `c`.
    pub planted: Vec<WindowIndexSet>,
    /// `loadings[c]` is `L_c`, `d² x r`.
    pub loadings: Vec<Mat>,
}

impl SyntheticTask {
    /// `L_c L_cᵀ + σ² I`.
    pub fn population_covariance(&self, class: usize) -> Mat {
        let l = &self.loadings[class];
        let mut c = l.matmul_t(l);
        for i in 0..c.rows() {
            c[(i, i)] += self.params.sigma * self.params.sigma;
        }
        c
    }

    pub fn describe(&self) -> String {
        let mut out = format!(
            "planted task: {} classes, grid {g}x{g} ({n}x{n} matrices), {} samples/class, {} frames, rank {}, sigma {}",
            self.params.classes,
            self.params.n_per_class,
            self.params.frames,
            self.params.rank,
            self.params.sigma,
            g = self.params.grid,
            n = self.params.grid * self.params.grid,
        );
        for (c, w) in self.planted.iter().enumerate() {
            out.push_str(&format!(
                "\n  class {c}: window at grid cell {:?}, indices {:?}, x{}",
                w.origin, w.indices, self.params.amplification
            ));
        }
        out
    }
}

/// Generates the planted-window task.
///
/// A shared base loading `B` (`d² x r`, orthonormal columns) is drawn from the seed.
/// Class `c` uses `L_c = B` with the rows of its own 2x2 grid window multiplied by
/// `amplification`. Each sample draws `frames` vectors `x = L_c z + σ η` and becomes
/// their covariance descriptor.
pub fn gen_synthetic(p: &SynthParams) -> Result<SyntheticTask> {
    let dd = p.grid * p.grid;
    let bad = |msg: String| Err(Error::Parameter(msg));
    if p.grid < 2 {
        return bad(format!("grid side must be >= 2, got {}", p.grid));
    }
    if p.rank == 0 || p.rank > dd {
        return bad(format!("rank must be in 1..={dd}, got {}", p.rank));
    }
    if p.frames < dd + 1 {
        return bad(format!(
            "need at least {} frames for a {dd}x{dd} covariance, got {}",
            dd + 1,
            p.frames
        ));
    }
    if p.classes < 1 || p.n_per_class < 1 {
        return bad("need at least one class and one sample per class".into());
    }
    if !(p.sigma >= 0.0) || !(p.amplification > 0.0) {
        return bad(format!(
            "sigma {} and amplification {} must be >= 0 and > 0",
            p.sigma, p.amplification
        ));
    }
    let mut windows = window_index_sets(p.grid, 2, 1)?;
    if p.classes > windows.len() {
        return bad(format!(
            "{} classes but only {} distinct 2x2 windows",
            p.classes,
            windows.len()
        ));
    }

    let mut base_rng = SeededRng::stream(p.seed, 0);
    base_rng.shuffle(&mut windows);
    let planted: Vec<WindowIndexSet> = windows.into_iter().take(p.classes).collect();
    let raw = Mat::from_fn(p.rank, dd, |_, _| base_rng.gaussian());
    let base = qr_row_orthonormalize(&raw)?.transpose();
    let loadings: Vec<Mat> = planted
        .iter()
        .map(|w| {
            let mut l = base.clone();
            for &i in &w.indices {
                for j in 0..p.rank {
                    l[(i, j)] *= p.amplification;
                }
            }
            l
        })
        .collect();

    let mut rng = SeededRng::stream(p.seed, 1);
    let mut samples = Vec::with_capacity(p.classes * p.n_per_class);
    for (c, l) in loadings.iter().enumerate() {
        for _ in 0..p.n_per_class {
            let z = Mat::from_fn(p.rank, p.frames, |_, _| rng.gaussian());
            let mut x = l.matmul(&z);
            for v in x.as_mut_slice() {
                *v += p.sigma * rng.gaussian();
            }
            samples.push((covariance_descriptor(&x, p.lambda)?, c));
        }
    }
    Ok(SyntheticTask {
        params: *p,
        dataset: SpdDataset::new(dd, p.classes, samples)?,
        planted,
        loadings,
    })
}

/// Concatenated `tril(log(S_w))` over the given windows.
pub fn window_log_features(s: &Mat, windows: &[WindowIndexSet]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for w in windows {
        let log = spectral_map(&s.principal(&w.indices), SpectralFn::Log)?;
        out.extend(tril_vec(&log).values);
    }
    Ok(out)
}

/// Nearest-class-mean accuracy in the log-tril space of the planted windows, on a
/// seventy-thirty split of the task's dataset.
pub fn planted_baseline_accuracy(task: &SyntheticTask, split_seed: u64) -> Result<f64> {
    let ds = &task.dataset;
    let (train, test) = split_indices(
        &ds.labels(),
        ds.class_count,
        SplitRule::Fraction(0.7),
        split_seed,
    )?;
    let feats = ds
        .samples
        .iter()
        .map(|(s, _)| window_log_features(s, &task.planted))
        .collect::<Result<Vec<_>>>()?;
    let f = feats[0].len();
    let mut means = vec![vec![0.0; f]; ds.class_count];
    let mut counts = vec![0usize; ds.class_count];
    for &i in &train {
        let c = ds.samples[i].1;
        counts[c] += 1;
        for (m, x) in means[c].iter_mut().zip(&feats[i]) {
            *m += x;
        }
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let dist = |m: &Vec<f64>| {
                m.iter()
                    .zip(&feats[i])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            };
            let best = (0..ds.class_count)
                .filter(|&c| counts[c] > 0)
                .min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
                .unwrap();
            best == ds.samples[i].1
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
