//! Binary checkpoint container.
//!
//! ```text
//! b"ACRECKPT"                  8 bytes
//! version                      u32 little-endian
//! header length H              u64 little-endian
//! header                       H bytes of JSON (see `Header`)
//! blobs                        f64 little-endian, in header order:
//!                              every parameter tensor, every buffer,
//!                              then Adam first and second moments
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a reload is bit-identical.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig, TrainError};
use crate::model::{AcrE, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACRECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub params: ModelParams,
    pub adam: Adam,
    pub epoch: usize,
    /// `NaN` when no validation ran.
    pub best_valid_mrr: f64,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    train: TrainConfig,
    num_entities: usize,
    num_relations: usize,
    epoch: usize,
    /// `null` for NaN.
    best_valid_mrr: Option<f64>,
    adam_step: u64,
    tensors: Vec<Entry>,
    buffers: Vec<Entry>,
}

fn put(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let slice = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(slice)
    }

    fn floats(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn new(train: &TrainConfig, params: ModelParams, adam: Adam, epoch: usize, best_valid_mrr: f64) -> Self {
        Checkpoint { train: train.clone(), params, adam, epoch, best_valid_mrr }
    }

    pub fn model(&self) -> AcrE {
        AcrE::from_parts(self.train.model.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            train: self.train.clone(),
            num_entities: self.params.num_entities(),
            num_relations: self.params.num_relations(),
            epoch: self.epoch,
            best_valid_mrr: self.best_valid_mrr.is_finite().then_some(self.best_valid_mrr),
            adam_step: self.adam.step,
            tensors: self
                .params
                .named()
                .into_iter()
                .map(|(name, t)| Entry { name, shape: t.shape().to_vec() })
                .collect(),
            buffers: self.params.buffers().into_iter().map(|(name, b)| Entry { name, shape: vec![b.len()] }).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.named() {
            put(&mut out, t.data());
        }
        for (_, b) in self.params.buffers() {
            put(&mut out, b);
        }
        for moment in self.adam.m.iter().chain(&self.adam.v) {
            put(&mut out, moment);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(r.take(4).ok_or("truncated")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let hlen = u64::from_le_bytes(r.take(8).ok_or("truncated")?.try_into().unwrap()) as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen).ok_or("truncated header")?).map_err(|e| format!("header: {e}"))?;
        // allocate the right shapes, then overwrite every value
        let mut params = ModelParams::init(
            &header.train.model,
            header.num_entities,
            header.num_relations,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .map_err(|e| e.to_string())?;
        let expected: Vec<(String, Vec<usize>)> =
            params.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        let found: Vec<(String, Vec<usize>)> =
            header.tensors.iter().map(|e| (e.name.clone(), e.shape.clone())).collect();
        if expected != found {
            return Err("tensor layout does not match the stored config".into());
        }
        for t in params.tensors_mut() {
            let values = r.floats(t.len()).ok_or("truncated tensor data")?;
            t.data_mut().copy_from_slice(&values);
        }
        let buffers = params.buffers_mut();
        if buffers.len() != header.buffers.len() {
            return Err("buffer layout does not match the stored config".into());
        }
        for (b, e) in buffers.into_iter().zip(&header.buffers) {
            if e.shape != [b.len()] {
                return Err(format!("buffer {} has the wrong length", e.name));
            }
            *b = r.floats(b.len()).ok_or("truncated buffer data")?;
        }
        let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.len()).collect();
        let mut adam = Adam::new(header.train.adam, sizes.iter().copied());
        adam.step = header.adam_step;
        for (i, &n) in sizes.iter().enumerate() {
            adam.m[i] = r.floats(n).ok_or("truncated moments")?;
        }
        for (i, &n) in sizes.iter().enumerate() {
            adam.v[i] = r.floats(n).ok_or("truncated moments")?;
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            train: header.train,
            params,
            adam,
            epoch: header.epoch,
            best_valid_mrr: header.best_valid_mrr.unwrap_or(f64::NAN),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let err = |reason: String| TrainError::Checkpoint { path: path.display().to_string(), reason };
        let mut f = fs::File::create(path).map_err(|e| err(e.to_string()))?;
        f.write_all(&self.to_bytes()).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let err = |reason: String| TrainError::Checkpoint { path: path.display().to_string(), reason };
        let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
        Self::from_bytes(&bytes).map_err(err)
    }
}
