//! Raw activation capture files.
//!
//! A dump stores the snapshots of one forward pass: a fixed magic, a JSON
//! header describing the model, pass, and tap list with shapes, then each
//! tensor's values as little-endian `f32` in header order. Values round-trip
//! bit-exactly.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tap::{ActivationSnapshot, TapPoint};

const MAGIC: &[u8; 8] = b"ACTDUMP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpTapEntry {
    #[serde(flatten)]
    pub tap: TapPoint,
    pub shape: (usize, usize),
}

/// Self-describing header of a dump file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpHeader {
    pub model_id: String,
    pub pass_id: u64,
    pub dtype: String,
    pub taps: Vec<DumpTapEntry>,
}

/// Writes the snapshots of one pass. All snapshots must share a pass id.
pub fn write_dump(path: &Path, model_id: &str, snapshots: &[ActivationSnapshot]) -> Result<()> {
    if snapshots.is_empty() {
        return Err(Error::EmptySnapshot);
    }
    let pass_id = snapshots[0].pass_id;
    if snapshots.iter().any(|s| s.pass_id != pass_id) {
        return Err(Error::InvalidConfig(
            "snapshots come from different passes".to_string(),
        ));
    }
    let header = DumpHeader {
        model_id: model_id.to_string(),
        pass_id,
        dtype: "float32".to_string(),
        taps: snapshots
            .iter()
            .map(|s| DumpTapEntry {
                tap: s.tap,
                shape: (s.token_count(), s.channel_count()),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let payload_len: usize = snapshots.iter().map(|s| s.values.len() * 4).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header_bytes.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for snap in snapshots {
        for v in snap.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a dump back into snapshots, validating magic, dtype, and sizes.
pub fn read_dump(path: &Path) -> Result<(DumpHeader, Vec<ActivationSnapshot>)> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::DumpMalformed("file shorter than magic".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::DumpMalformed("wrong magic".to_string()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::DumpMalformed("missing header length".to_string()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::DumpMalformed("truncated header".to_string()))?;
    let header: DumpHeader = serde_json::from_slice(&header_bytes)?;
    if header.dtype != "float32" {
        return Err(Error::DumpMalformed(format!(
            "unsupported dtype {}",
            header.dtype
        )));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let expected: usize = header.taps.iter().map(|t| t.shape.0 * t.shape.1 * 4).sum();
    if payload.len() != expected {
        return Err(Error::DumpMalformed(format!(
            "payload holds {} bytes, header describes {expected}",
            payload.len()
        )));
    }

    let mut snapshots = Vec::with_capacity(header.taps.len());
    let mut offset = 0usize;
    for entry in &header.taps {
        let (rows, cols) = entry.shape;
        let count = rows * cols;
        let data: Vec<f32> = payload[offset..offset + count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += count * 4;
        let values = ndarray::Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::DumpMalformed(e.to_string()))?;
        snapshots.push(ActivationSnapshot::new(entry.tap, values, header.pass_id)?);
    }
    Ok((header, snapshots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tap::Slot;
    use ndarray::Array2;
    use tempfile::tempdir;

    fn snapshots() -> Vec<ActivationSnapshot> {
        let mut a = Array2::<f32>::zeros((3, 4));
        a[(0, 0)] = 1.25;
        a[(2, 3)] = -7.5e-8;
        let mut b = Array2::<f32>::zeros((2, 2));
        b[(1, 1)] = f32::MIN_POSITIVE;
        vec![
            ActivationSnapshot::new(TapPoint::new(Slot::X1, 0), a, 42).unwrap(),
            ActivationSnapshot::new(TapPoint::new(Slot::Y7, 1), b, 42).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pass.actdump");
        let snaps = snapshots();
        write_dump(&path, "unit-model", &snaps).unwrap();
        let (header, back) = read_dump(&path).unwrap();
        assert_eq!(header.model_id, "unit-model");
        assert_eq!(header.pass_id, 42);
        assert_eq!(header.taps.len(), 2);
        for (orig, read) in snaps.iter().zip(&back) {
            assert_eq!(orig.tap, read.tap);
            let orig_bits: Vec<u32> = orig.values.iter().map(|v| v.to_bits()).collect();
            let read_bits: Vec<u32> = read.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(orig_bits, read_bits);
        }
        // Writing the reread snapshots reproduces the file byte for byte.
        let path2 = dir.path().join("pass2.actdump");
        write_dump(&path2, "unit-model", &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn mixed_passes_are_rejected() {
        let mut snaps = snapshots();
        snaps[1].pass_id = 43;
        let dir = tempdir().unwrap();
        assert!(write_dump(&dir.path().join("x"), "m", &snaps).is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pass.actdump");
        write_dump(&path, "m", &snapshots()).unwrap();
        let bytes = fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dump(&path), Err(Error::DumpMalformed(_))));

        // Truncated payload.
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_dump(&path), Err(Error::DumpMalformed(_))));
    }
}
