//! Raw tensor dumps: `<name>.f64` holds little-endian `f64` values in
//! row-major order, `<name>.json` holds the shape.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
}

impl TensorHeader {
    pub fn for_shape(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            dtype: "f64".into(),
            order: "row-major".into(),
        }
    }
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.f64")), dir.join(format!("{name}.json")))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> NumericsError {
    NumericsError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn encode_f64_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64_le(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    )
}

/// Writes `<dir>/<name>.f64` and its `<dir>/<name>.json` sidecar.
pub fn write_tensor(dir: &Path, name: &str, t: &Tensor) -> Result<(), NumericsError> {
    let (data_path, header_path) = paths(dir, name);
    fs::write(&data_path, encode_f64_le(t.data())).map_err(|e| io_err(&data_path, e))?;
    let header = serde_json::to_string(&TensorHeader::for_shape(t.shape()))
        .map_err(|e| io_err(&header_path, e))?;
    fs::write(&header_path, header).map_err(|e| io_err(&header_path, e))
}

pub fn read_tensor(dir: &Path, name: &str) -> Result<Tensor, NumericsError> {
    let (data_path, header_path) = paths(dir, name);
    let header_text = fs::read_to_string(&header_path).map_err(|e| io_err(&header_path, e))?;
    let header: TensorHeader =
        serde_json::from_str(&header_text).map_err(|e| io_err(&header_path, e))?;
    if header.dtype != "f64" || header.order != "row-major" {
        return Err(io_err(
            &header_path,
            format!("unsupported dtype/order {}/{}", header.dtype, header.order),
        ));
    }
    let bytes = fs::read(&data_path).map_err(|e| io_err(&data_path, e))?;
    let data = decode_f64_le(&bytes).ok_or_else(|| io_err(&data_path, "length not a multiple of 8"))?;
    Tensor::new(header.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_layout_is_raw_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        write_tensor(dir.path(), "x", &t).unwrap();
        let bytes = fs::read(dir.path().join("x.f64")).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..8], &1.0f64.to_le_bytes());
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("x.json")).unwrap()).unwrap();
        assert_eq!(
            header,
            serde_json::json!({"shape": [1, 2], "dtype": "f64", "order": "row-major"})
        );
        assert_eq!(read_tensor(dir.path(), "x").unwrap(), t);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_tensor(dir.path(), "x", &Tensor::vector(&[1.0, 2.0])).unwrap();
        fs::write(dir.path().join("x.f64"), [0u8; 12]).unwrap();
        assert!(read_tensor(dir.path(), "x").is_err());
    }
}
