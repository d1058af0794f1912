use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Leading bytes of every feature file.
pub const FEATURE_MAGIC: [u8; 4] = *b"MDSF";
pub const FEATURE_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// A variable-length feature matrix (time steps x feature dim) for one
/// modality of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    values: Array2<f32>,
}

impl FeatureSequence {
    pub fn new(values: Array2<f32>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature sequence must be non-empty, got {:?}",
                values.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(
                "feature sequence has non-finite values".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (l, f) = self.values.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * l * f);
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(l as u32).to_le_bytes());
        out.extend_from_slice(&(f as u32).to_le_bytes());
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err("truncated header".into());
        }
        if bytes[..4] != FEATURE_MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FEATURE_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let l = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let f = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * l * f {
            return Err(format!(
                "expected {} data bytes for ({l}, {f}), found {}",
                4 * l * f,
                body.len()
            ));
        }
        let data: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let values = Array2::from_shape_vec((l, f), data).map_err(|e| e.to_string())?;
        Self::new(values).map_err(|e| e.to_string())
    }
}

pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&seq.to_bytes())?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path)?;
    FeatureSequence::from_bytes(&bytes).map_err(|message| Error::FeatureFormat {
        path: path.to_path_buf(),
        message,
    })
}
