//! Dataset container: magic string, JSON header, then packed little-endian
//! single-precision sample records. See `docs/dataset-format.md`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use xfcsi_core::channel::{ChannelMatrix, Domain};
use xfcsi_core::scene::{Dataset, DatasetMeta, PathParam, PathType, SensingSample};
use xfcsi_core::tensor::Tensor;

use crate::{FileError, Result};

pub const DATA_MAGIC: &[u8; 12] = b"XFCSI-DATA-1";

#[derive(Debug, Serialize, Deserialize)]
struct DataHeader {
    meta: DatasetMeta,
    num_samples: u32,
}

fn path_type_code(t: PathType) -> u8 {
    match t {
        PathType::Los => 0,
        PathType::Reflection => 1,
        PathType::Scatter => 2,
    }
}

fn path_type_from(code: u8, path: &Path) -> Result<PathType> {
    match code {
        0 => Ok(PathType::Los),
        1 => Ok(PathType::Reflection),
        2 => Ok(PathType::Scatter),
        other => Err(FileError::Corrupt {
            path: path.display().to_string(),
            detail: format!("unknown path type {other}"),
        }),
    }
}

struct FieldWriter<W: Write> {
    w: W,
}

impl<W: Write> FieldWriter<W> {
    fn f32s(&mut self, vals: &[f32]) -> Result<()> {
        for v in vals {
            self.w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.w.write_all(&[v])?;
        Ok(())
    }
}

struct FieldReader<R: Read> {
    r: R,
    path: String,
}

impl<R: Read> FieldReader<R> {
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; 4 * n];
        self.r.read_exact(&mut bytes).map_err(|e| FileError::Corrupt {
            path: self.path.clone(),
            detail: e.to_string(),
        })?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b).map_err(|e| FileError::Corrupt {
            path: self.path.clone(),
            detail: e.to_string(),
        })?;
        Ok(u32::from_le_bytes(b))
    }
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b).map_err(|e| FileError::Corrupt {
            path: self.path.clone(),
            detail: e.to_string(),
        })?;
        Ok(b[0])
    }
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let header = serde_json::to_vec(&DataHeader {
        meta: ds.meta.clone(),
        num_samples: ds.samples.len() as u32,
    })?;
    let file = BufWriter::new(File::create(path)?);
    let mut w = FieldWriter { w: file };
    w.w.write_all(DATA_MAGIC)?;
    w.u32(header.len() as u32)?;
    w.w.write_all(&header)?;

    let n = (ds.meta.n_ue * ds.meta.n_bs) as usize;
    for s in &ds.samples {
        w.u32(s.user_id)?;
        w.u32(s.frame_index)?;
        w.u8(s.blocked as u8)?;
        w.f32s(&[s.coord[0] as f32, s.coord[1] as f32])?;
        w.f32s(s.image.data())?;
        w.f32s(s.cloud.data())?;
        let mut channel = Vec::with_capacity(2 * n);
        channel.extend(s.channel.entries().iter().map(|z| z.re as f32));
        channel.extend(s.channel.entries().iter().map(|z| z.im as f32));
        w.f32s(&channel)?;
        w.u32(s.paths.len() as u32)?;
        for p in &s.paths {
            w.f32s(&[
                p.gain.re as f32,
                p.gain.im as f32,
                p.aod_az as f32,
                p.aoa_az as f32,
                p.length_m as f32,
            ])?;
            w.u8(path_type_code(p.path_type))?;
        }
    }
    w.w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = BufReader::new(File::open(path)?);
    let mut r = FieldReader { r: file, path: path.display().to_string() };
    let mut magic = [0u8; 12];
    r.r.read_exact(&mut magic).map_err(|_| FileError::BadMagic {
        path: path.display().to_string(),
        expected: "XFCSI-DATA-1",
    })?;
    if &magic != DATA_MAGIC {
        return Err(FileError::BadMagic {
            path: path.display().to_string(),
            expected: "XFCSI-DATA-1",
        });
    }
    let hlen = r.u32()? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.r.read_exact(&mut hbuf).map_err(|e| FileError::Corrupt {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let header: DataHeader = serde_json::from_slice(&hbuf)?;
    let meta = header.meta;
    let (n_ue, n_bs) = (meta.n_ue as usize, meta.n_bs as usize);
    let s_img = meta.image_size as usize;
    let u_pts = meta.cloud_points as usize;
    let n = n_ue * n_bs;

    let mut samples = Vec::with_capacity(header.num_samples as usize);
    for _ in 0..header.num_samples {
        let user_id = r.u32()?;
        let frame_index = r.u32()?;
        let blocked = r.u8()? != 0;
        let coord_raw = r.f32s(2)?;
        let image = Tensor::new(&[3, s_img, s_img], r.f32s(3 * s_img * s_img)?)?;
        let cloud = Tensor::new(&[3, u_pts], r.f32s(3 * u_pts)?)?;
        let ch = r.f32s(2 * n)?;
        let entries: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(ch[i] as f64, ch[n + i] as f64))
            .collect();
        let channel = ChannelMatrix::new(n_ue, n_bs, entries, Domain::Spatial)?;
        let path_count = r.u32()? as usize;
        let mut paths = Vec::with_capacity(path_count);
        for _ in 0..path_count {
            let f = r.f32s(5)?;
            let code = r.u8()?;
            paths.push(PathParam {
                gain: Complex64::new(f[0] as f64, f[1] as f64),
                aod_az: f[2] as f64,
                aoa_az: f[3] as f64,
                length_m: f[4] as f64,
                path_type: path_type_from(code, path)?,
            });
        }
        samples.push(SensingSample {
            user_id,
            frame_index,
            image,
            cloud,
            coord: [coord_raw[0] as f64, coord_raw[1] as f64],
            channel,
            paths,
            blocked,
        });
    }
    Ok(Dataset { meta, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use xfcsi_core::scene::{generate_dataset, ArrayConfig, SceneConfig};

    #[test]
    fn dataset_round_trips_bit_exact() {
        let cfg = SceneConfig {
            num_users: 4,
            cloud_points: 16,
            image_size: 16,
            ..SceneConfig::default()
        };
        let ds = generate_dataset(&cfg, &ArrayConfig::default(), 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);

        // Double round trip produces identical bytes.
        let path2 = dir.path().join("d2.bin");
        save_dataset(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"XFCSI-CKPT-1....").unwrap();
        assert!(matches!(load_dataset(&path), Err(FileError::BadMagic { .. })));
    }
}
