//! On-disk tensor container.
//!
//! Layout: an 8-byte little-endian header length, a JSON header, then the raw
//! tensor payload. The header maps each tensor name to its dtype, shape, and
//! byte range within the payload, and carries a `__metadata__` table of string
//! pairs describing the model. Tensors are stored as little-endian `f32`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (u64, u64),
}

/// A named tensor: its shape and flat row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorData {
    pub fn from_array1(a: &Array1<f32>) -> TensorData {
        TensorData {
            shape: vec![a.len()],
            data: a.to_vec(),
        }
    }

    pub fn from_array2(a: &Array2<f32>) -> TensorData {
        TensorData {
            shape: vec![a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array1(&self) -> Result<Array1<f32>> {
        if self.shape.len() != 1 {
            return Err(Error::Checkpoint(format!(
                "expected rank-1 tensor, found shape {:?}",
                self.shape
            )));
        }
        Ok(Array1::from_vec(self.data.clone()))
    }

    pub fn to_array2(&self) -> Result<Array2<f32>> {
        if self.shape.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "expected rank-2 tensor, found shape {:?}",
                self.shape
            )));
        }
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// A full container: metadata plus named tensors.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn insert1(&mut self, name: &str, a: &Array1<f32>) {
        self.tensors
            .insert(name.to_string(), TensorData::from_array1(a));
    }

    pub fn insert2(&mut self, name: &str, a: &Array2<f32>) {
        self.tensors
            .insert(name.to_string(), TensorData::from_array2(a));
    }

    pub fn get(&self, name: &str) -> Result<&TensorData> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn get1(&self, name: &str) -> Result<Array1<f32>> {
        self.get(name)?.to_array1()
    }

    pub fn get2(&self, name: &str) -> Result<Array2<f32>> {
        self.get(name)?.to_array2()
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key}")))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut header: BTreeMap<String, serde_json::Value> = BTreeMap::new();
        header.insert(
            METADATA_KEY.to_string(),
            serde_json::to_value(&self.metadata)?,
        );
        let mut offset = 0u64;
        let mut payload_len = 0u64;
        for (name, tensor) in &self.tensors {
            let expected: usize = tensor.shape.iter().product();
            if expected != tensor.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} shape {:?} does not match {} elements",
                    tensor.shape,
                    tensor.data.len()
                )));
            }
            let bytes = (tensor.data.len() * 4) as u64;
            header.insert(
                name.clone(),
                serde_json::to_value(TensorHeader {
                    dtype: "F32".to_string(),
                    shape: tensor.shape.clone(),
                    data_offsets: (offset, offset + bytes),
                })?,
            );
            offset += bytes;
            payload_len += bytes;
        }
        let mut header_bytes = serde_json::to_vec(&header)?;
        while header_bytes.len() % 8 != 0 {
            header_bytes.push(b' ');
        }

        let mut out = Vec::with_capacity(8 + header_bytes.len() + payload_len as usize);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for tensor in self.tensors.values() {
            for v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Checkpoint> {
        let mut file = fs::File::open(path)?;
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|_| Error::Checkpoint("file too short for header length".to_string()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|_| Error::Checkpoint("file too short for header".to_string()))?;
        let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&header_bytes)?;
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;

        let mut metadata = BTreeMap::new();
        let mut tensors = BTreeMap::new();
        for (name, value) in header {
            if name == METADATA_KEY {
                metadata = serde_json::from_value(value)?;
                continue;
            }
            let th: TensorHeader = serde_json::from_value(value)?;
            if th.dtype != "F32" {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has unsupported dtype {}",
                    th.dtype
                )));
            }
            let (start, end) = (th.data_offsets.0 as usize, th.data_offsets.1 as usize);
            if end < start || end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} byte range {start}..{end} exceeds payload of {}",
                    payload.len()
                )));
            }
            let expected: usize = th.shape.iter().product();
            if end - start != expected * 4 {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} byte range does not match shape {:?}",
                    th.shape
                )));
            }
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(
                name,
                TensorData {
                    shape: th.shape,
                    data,
                },
            );
        }
        Ok(Checkpoint { metadata, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut ckpt = Checkpoint::default();
        ckpt.metadata
            .insert("model_id".to_string(), "unit".to_string());
        ckpt.insert2("w", &array![[1.5f32, -2.25], [0.0, 3.125]]);
        ckpt.insert1("b", &array![0.1f32, 0.2, 0.3]);
        ckpt.write_to(&path).unwrap();

        let back = Checkpoint::read_from(&path).unwrap();
        assert_eq!(back.meta("model_id").unwrap(), "unit");
        let w = back.get2("w").unwrap();
        assert_eq!(w, array![[1.5f32, -2.25], [0.0, 3.125]]);
        let b = back.get1("b").unwrap();
        assert_eq!(b, array![0.1f32, 0.2, 0.3]);

        // Byte-identical on rewrite.
        let path2 = dir.path().join("model2.bin");
        back.write_to(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut ckpt = Checkpoint::default();
        ckpt.insert1("b", &array![1.0f32, 2.0]);
        ckpt.write_to(&path).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 4]).unwrap();
        assert!(matches!(
            Checkpoint::read_from(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn missing_tensor_and_rank_mismatch_are_reported() {
        let mut ckpt = Checkpoint::default();
        ckpt.insert1("b", &array![1.0f32]);
        assert!(ckpt.get2("b").is_err());
        assert!(ckpt.get("absent").is_err());
    }
}
