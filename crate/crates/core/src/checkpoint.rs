//! Versioned binary container for named tensors plus JSON metadata.
//!
//! Layout (little-endian): `MDSC`, u16 version, u8 stage, u32 metadata
//! length, metadata JSON, u32 tensor count, then per tensor: u16 name length,
//! name, u8 dtype (0 = f32, 1 = f64), u8 rank, u64 dims, data.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Parameters;

const MAGIC: &[u8; 4] = b"MDSC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub stage: u8,
    pub metadata: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn new(stage: u8, metadata: serde_json::Value) -> Self {
        Self {
            stage,
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) {
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stage);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(bad(format!(
                    "tensor `{}`: shape {:?} vs {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(match t.data {
                TensorData::F32(_) => 0,
                TensorData::F64(_) => 1,
            });
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let stage = r.u8()?;
        let meta_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| bad("tensor name is not UTF-8"))?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = match dtype {
                0 => TensorData::F32(
                    r.take(count * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => TensorData::F64(
                    r.take(count * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                d => return Err(bad(format!("tensor `{name}`: unknown dtype {d}"))),
            };
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Self {
            stage,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Appends every parameter tensor under `prefix`.
    pub fn push_params<P: Parameters>(&mut self, prefix: &str, params: &P) {
        let mut out = Vec::new();
        params.visit(prefix, &mut |name, shape, data| {
            out.push(Tensor {
                name,
                shape: shape.to_vec(),
                data: TensorData::F64(data.to_vec()),
            })
        });
        self.tensors.extend(out);
    }

    /// Overwrites `params` from tensors stored under `prefix`; names and
    /// shapes must match exactly.
    pub fn load_params<P: Parameters>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let mut err = None;
        params.visit_mut(prefix, &mut |name, shape, data| {
            if err.is_some() {
                return;
            }
            match self.tensor(&name) {
                None => err = Some(bad(format!("missing tensor `{name}`"))),
                Some(t) if t.shape != shape => {
                    err = Some(bad(format!(
                        "tensor `{name}`: stored shape {:?}, expected {shape:?}",
                        t.shape
                    )))
                }
                Some(t) => data.copy_from_slice(&t.data.to_f64()),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn flat(&self, name: &str) -> Result<Vec<f64>> {
        self.tensor(name)
            .map(|t| t.data.to_f64())
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }
}

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(
            self.word_pos
                .parse()
                .map_err(|_| bad("bad rng word position"))?,
        );
        Ok(rng)
    }
}
