use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"MMF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Visual,
}

/// Precomputed per-item features of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub modality: Modality,
    values: Tensor,
}

impl FeatureMatrix {
    pub fn new(modality: Modality, values: Tensor) -> Result<Self> {
        if !values.is_matrix() {
            return Err(Error::shape(format!("feature matrix must be 2-D, got {:?}", values.shape())));
        }
        Ok(FeatureMatrix { modality, values })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Rows `idx` in order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            modality: self.modality,
            values: self.values.select_rows(idx),
        }
    }
}

/// Text and visual features for the same items.
#[derive(Clone, Debug, PartialEq)]
pub struct Modalities {
    pub text: FeatureMatrix,
    pub visual: FeatureMatrix,
}

impl Modalities {
    pub fn new(text: FeatureMatrix, visual: FeatureMatrix) -> Result<Self> {
        if text.rows() != visual.rows() {
            return Err(Error::shape(format!(
                "text features have {} rows, visual {}",
                text.rows(),
                visual.rows()
            )));
        }
        Ok(Modalities { text, visual })
    }

    pub fn get(&self, m: Modality) -> &FeatureMatrix {
        match m {
            Modality::Text => &self.text,
            Modality::Visual => &self.visual,
        }
    }
}

/// 64-bit FNV-1a over a byte stream.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Reads an `MMF1` feature file; `expected_rows` must match the header.
pub fn load_features(path: &Path, modality: Modality, expected_rows: usize) -> Result<FeatureMatrix> {
    let fm = read_features(path, modality)?;
    if fm.rows() != expected_rows {
        return Err(Error::shape(format!(
            "{} declares {} rows, expected {expected_rows}",
            path.display(),
            fm.rows()
        )));
    }
    Ok(fm)
}

/// Reads an `MMF1` file: magic, u32 LE rows, u32 LE dim, then row-major
/// f32 LE values.
pub fn read_features(path: &Path, modality: Modality) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(path, None, "truncated feature header"))?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, None, "bad magic, expected MMF1"));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != rows * dim * 4 {
        return Err(Error::format(
            path,
            None,
            format!("payload has {} bytes, header implies {}", payload.len(), rows * dim * 4),
        ));
    }
    log::info!(
        "loaded {} ({rows}×{dim}, payload checksum {:016x})",
        path.display(),
        fnv1a(&payload)
    );
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerics(format!(
            "{}: non-finite feature at row {}, column {}",
            path.display(),
            pos / dim.max(1),
            pos % dim.max(1)
        )));
    }
    FeatureMatrix::new(modality, Tensor::matrix(rows, dim, values)?)
}

pub fn write_features(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::with_capacity(12 + fm.values.numel() * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(fm.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(fm.dim() as u32).to_le_bytes());
    for &v in fm.values.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
