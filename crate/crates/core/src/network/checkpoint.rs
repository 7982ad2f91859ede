//! `MSNC` checkpoint files.
//!
//! Layout (little-endian): magic, version `u32`, total file length `u64`, config
//! TOML as `u32` length plus UTF-8 bytes, then each tensor as name length `u32`,
//! name, rank `u32`, dims `u32` each and raw `f64` values, then the completed-epoch counter `u64`, the shuffle
//! RNG state and a CRC32 of everything before it. The tensor list is not counted
//! in the file: it is implied by the config and checked entry by entry.

use std::path::Path;

use crate::binio::{decode_sealed, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::network::model::tensor_specs;
use crate::network::{MsNetConfig, MsNetModel};
use crate::optim::StiefelParam;
use crate::rng::{SeededRng, STATE_BYTES};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MSNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MsNetModel,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: SeededRng,
}

impl Checkpoint {
    /// A checkpoint of an untrained model, as a fresh trainer would write it.
    pub fn fresh(model: MsNetModel) -> Self {
        let rng = SeededRng::stream(model.config.seed, crate::network::model::SHUFFLE_STREAM);
        Checkpoint {
            model,
            epoch: 0,
            rng,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        let config = self.model.config.to_toml();
        w.len_u32(config.len(), "config length")?;
        w.bytes(config.as_bytes());
        for (spec, values) in self.model.tensor_specs()?.iter().zip(self.model.tensors()) {
            w.len_u32(spec.name.len(), "tensor name length")?;
            w.bytes(spec.name.as_bytes());
            w.len_u32(spec.dims.len(), "tensor rank")?;
            for &d in &spec.dims {
                w.len_u32(d, "tensor dim")?;
            }
            w.f64s(values);
        }
        w.u64(self.epoch as u64);
        w.bytes(&self.rng.state_bytes());
        Ok(w.seal())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode_sealed(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, parse)
    }
}

fn parse(r: &mut Reader<'_>) -> Result<Checkpoint> {
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|e| Error::Malformed(format!("config is not UTF-8: {e}")))?;
    let config = MsNetConfig::from_toml(text)?;
    let specs = tensor_specs(&config)?;

    let mut tensors = Vec::with_capacity(specs.len());
    for spec in &specs {
        let name_len = r.u32("tensor name length")? as usize;
        let name = r.take(name_len, "tensor name")?;
        if name != spec.name.as_bytes() {
            return Err(Error::Malformed(format!(
                "expected tensor `{}`, found `{}`",
                spec.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("tensor dim")? as usize);
        }
        if dims != spec.dims {
            return Err(Error::Malformed(format!(
                "tensor `{}` has dims {dims:?}, config implies {:?}",
                spec.name, spec.dims
            )));
        }
        let count = dims.iter().product();
        tensors.push(r.f64s(count, &spec.name)?);
    }
    let epoch = r.u64("epoch")? as usize;
    let rng = SeededRng::from_state_bytes(r.take(STATE_BYTES, "rng state")?)?;

    let mut it = specs.iter().zip(tensors);
    let mut stiefel = |count: usize| -> Result<Vec<StiefelParam>> {
        (0..count)
            .map(|_| {
                let (spec, v) = it.next().unwrap();
                StiefelParam::new(Mat::from_vec(spec.dims[0], spec.dims[1], v)?)
                    .map_err(|e| e.context(format!("tensor `{}`", spec.name)))
            })
            .collect()
    };
    let backbone = stiefel(config.backbone_dims.len() - 1)?;
    let branches = stiefel(config.effective_scales()?.len())?;
    let (spec, fc_w) = it.next().unwrap();
    let fc_weight = Mat::from_vec(spec.dims[0], spec.dims[1], fc_w)?;
    let (_, fc_bias) = it.next().unwrap();
    let model = MsNetModel::from_parts(config, backbone, branches, fc_weight, fc_bias)?;
    Ok(Checkpoint { model, epoch, rng })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
