//! Flat little-endian binary tensor files with a JSON sidecar.
//!
//! `name.bin` holds the raw values, `name.json` holds `{"shape": [...], "dtype": "float32"}`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: DType,
}

/// `stem.bin` and `stem.json`; dots inside the stem are kept.
fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".bin"), with(".json"))
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Writes `stem.bin` and `stem.json`.
pub fn save_tensor(stem: &Path, tensor: &Tensor, dtype: DType) -> io::Result<()> {
    let (bin, json) = paths(stem);
    let mut bytes = Vec::with_capacity(tensor.numel() * dtype.width());
    for &v in tensor.data() {
        match dtype {
            DType::Float32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::Float64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    fs::write(bin, bytes)?;
    let header = TensorHeader {
        shape: tensor.shape().to_vec(),
        dtype,
    };
    fs::write(json, serde_json::to_vec_pretty(&header).map_err(io::Error::other)?)
}

/// Reads a tensor written by [`save_tensor`]. The result does not require gradients.
pub fn load_tensor(stem: &Path) -> io::Result<Tensor> {
    let (bin, json) = paths(stem);
    let header: TensorHeader = serde_json::from_slice(&fs::read(json)?).map_err(io::Error::other)?;
    let bytes = fs::read(&bin)?;
    let n: usize = header.shape.iter().product();
    if bytes.len() != n * header.dtype.width() {
        return Err(invalid(format!(
            "{}: expected {} bytes for shape {:?}, found {}",
            bin.display(),
            n * header.dtype.width(),
            header.shape,
            bytes.len()
        )));
    }
    let data: Vec<f64> = match header.dtype {
        DType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::Float64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Tensor::new(&header.shape, data).map_err(|e| invalid(e.to_string()))
}
