//! Versioned binary model blob.
//!
//! Layout (little-endian): magic `USGP`, version u16, family u8, target u8,
//! log-parameter count u8 and values, target mean and SD, jitter, dims u32,
//! rows u32, optional feature scaler (flag u8, then means and SDs), training
//! inputs, dual weights, and a trailing SHA-256 of everything before it.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::{GprError, GprModel, KernelFamily, KernelSpec, Target};
use crate::features::Standardization;

pub const MODEL_MAGIC: &[u8; 4] = b"USGP";
pub const MODEL_VERSION: u16 = 1;

const CHECKSUM_LEN: usize = 32;

/// A fitted model plus the feature standardization it was trained with.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: GprModel,
    pub scaler: Option<Standardization>,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        // Writes into a Vec cannot fail.
        let w = &mut out;
        w.write_u16::<LittleEndian>(MODEL_VERSION).unwrap();
        w.write_u8(m.spec.family().code()).unwrap();
        w.write_u8(m.target.code()).unwrap();
        let logs = m.spec.log_params();
        w.write_u8(logs.len() as u8).unwrap();
        for v in logs {
            w.write_f64::<LittleEndian>(v).unwrap();
        }
        for v in [m.target_mean, m.target_sd, m.jitter] {
            w.write_f64::<LittleEndian>(v).unwrap();
        }
        w.write_u32::<LittleEndian>(m.dims as u32).unwrap();
        w.write_u32::<LittleEndian>(m.training_rows() as u32)
            .unwrap();
        match &self.scaler {
            Some(s) => {
                w.write_u8(1).unwrap();
                for v in s.mean.iter().chain(&s.sd) {
                    w.write_f64::<LittleEndian>(*v).unwrap();
                }
            }
            None => w.write_u8(0).unwrap(),
        }
        for v in m.inputs.iter().chain(&m.dual_weights) {
            w.write_f64::<LittleEndian>(*v).unwrap();
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GprError> {
        if bytes.len() < MODEL_MAGIC.len() + 2 + CHECKSUM_LEN || &bytes[..4] != MODEL_MAGIC {
            return Err(GprError::Format("not a model blob".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MODEL_VERSION {
            return Err(GprError::UnsupportedVersion {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(GprError::ChecksumMismatch);
        }
        let mut r = Cursor::new(&body[6..]);
        let truncated = |_| GprError::Format("truncated model blob".into());
        let family = KernelFamily::from_code(r.read_u8().map_err(truncated)?)
            .ok_or_else(|| GprError::Format("unknown kernel family".into()))?;
        let target = Target::from_code(r.read_u8().map_err(truncated)?)
            .ok_or_else(|| GprError::Format("unknown target".into()))?;
        let count = r.read_u8().map_err(truncated)? as usize;
        let logs = read_f64s(&mut r, count)?;
        let spec = KernelSpec::from_log_params(family, &logs)?;
        let scalars = read_f64s(&mut r, 3)?;
        let dims = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let rows = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let scaler = match r.read_u8().map_err(truncated)? {
            0 => None,
            1 => {
                let mean = read_f64s(&mut r, dims)?;
                let sd = read_f64s(&mut r, dims)?;
                Some(Standardization { mean, sd })
            }
            _ => return Err(GprError::Format("bad scaler flag".into())),
        };
        let inputs = read_f64s(&mut r, rows * dims)?;
        let dual_weights = read_f64s(&mut r, rows)?;
        if (r.position() as usize) != body.len() - 6 {
            return Err(GprError::Format("trailing bytes".into()));
        }
        let model = GprModel::from_parts(
            spec,
            target,
            dims,
            inputs,
            scalars[0],
            scalars[1],
            dual_weights,
            scalars[2],
        )?;
        Ok(Self { model, scaler })
    }

    pub fn save(&self, path: &Path) -> Result<(), GprError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GprError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, GprError> {
    (0..n)
        .map(|_| {
            r.read_f64::<LittleEndian>()
                .map_err(|_| GprError::Format("truncated model blob".into()))
        })
        .collect()
}
