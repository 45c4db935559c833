//! `model.rogpl`: little-endian binary model file.
//!
//! ```text
//! magic "ROGPLMDL" | u32 version | u8 dtype bytes
//! tensor w1 | tensor b1 | tensor w2 | tensor b2 | tensor interior
//! per class: u64 n_border, then per border: u64 cluster, tensor vector
//! u64 meta_len | meta JSON (config, flags, C, tau, diagnostics, experiment)
//! u32 CRC32 of everything above
//! ```
//! A tensor is `u8 rank | u64 dim * rank | values`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{AblationFlags, Model, TrainConfig, TrainDiagnostics};
use crate::error::{Error, Result};
use crate::gcn::GcnParams;
use crate::proto::{BorderPrototype, PrototypePool};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 8] = b"ROGPLMDL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    n_classes: usize,
    tau: f64,
    config: TrainConfig,
    flags: AblationFlags,
    diagnostics: TrainDiagnostics,
    experiment: Option<serde_json::Value>,
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, shape: &[usize], values: impl Iterator<Item = T>) {
    out.push(shape.len() as u8);
    for &d in shape {
        put_u64(out, d);
    }
    for v in values {
        v.write_le(out);
    }
}

/// Serializes a model to bytes.
pub fn to_bytes<T: Scalar>(m: &Model<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE_TAG);
    let p = &m.params;
    put_tensor(&mut out, p.w1.shape(), p.w1.iter().copied());
    put_tensor(&mut out, p.b1.shape(), p.b1.iter().copied());
    put_tensor(&mut out, p.w2.shape(), p.w2.iter().copied());
    put_tensor(&mut out, p.b2.shape(), p.b2.iter().copied());
    put_tensor(&mut out, m.pool.interior.shape(), m.pool.interior.iter().copied());
    for list in &m.pool.border {
        put_u64(&mut out, list.len());
        for b in list {
            put_u64(&mut out, b.cluster);
            put_tensor(&mut out, b.vector.shape(), b.vector.iter().copied());
        }
    }
    let meta = Meta {
        n_classes: m.n_classes,
        tau: m.tau,
        config: m.config.clone(),
        flags: m.flags,
        diagnostics: m.diagnostics.clone(),
        experiment: m.experiment.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    put_u64(&mut out, json.len());
    out.extend_from_slice(&json);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::ModelFormat(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::ModelFormat(format!("size {v} overflows")))
    }

    fn tensor<T: Scalar>(&mut self) -> Result<ArrayD<T>> {
        let rank = self.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(T::BYTES))
            .ok_or_else(|| Error::ModelFormat("tensor size overflows".into()))?;
        let raw = self.take(len)?;
        let values: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    fn matrix<T: Scalar>(&mut self, what: &str) -> Result<Array2<T>> {
        self.tensor()?
            .into_dimensionality()
            .map_err(|_| Error::ModelFormat(format!("{what} is not a matrix")))
    }

    fn vector<T: Scalar>(&mut self, what: &str) -> Result<Array1<T>> {
        self.tensor()?
            .into_dimensionality()
            .map_err(|_| Error::ModelFormat(format!("{what} is not a vector")))
    }
}

/// Parses a model from bytes, verifying magic, version, dtype and checksum.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < MODEL_MAGIC.len() + 4 + 1 + 4 {
        return Err(Error::ModelFormat("truncated file".into()));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "format version {version}, this build reads {MODEL_FORMAT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::ModelFormat("checksum mismatch (file corrupt or truncated)".into()));
    }
    if body[12] != T::DTYPE_TAG {
        return Err(Error::ModelFormat(format!(
            "file stores {}-byte floats, requested {}-byte",
            body[12],
            T::DTYPE_TAG
        )));
    }

    let mut r = Reader { buf: body, pos: 13 };
    let w1 = r.matrix("w1")?;
    let b1 = r.vector("b1")?;
    let w2 = r.matrix("w2")?;
    let b2 = r.vector("b2")?;
    let params = GcnParams::from_parts(w1, b1, w2, b2)?;
    let interior: Array2<T> = r.matrix("interior prototypes")?;
    let mut border = Vec::with_capacity(interior.nrows());
    for _ in 0..interior.nrows() {
        let n = r.u64()?;
        let mut list = Vec::new();
        for _ in 0..n {
            let cluster = r.u64()?;
            let vector = r.vector("border prototype")?;
            if vector.len() != interior.ncols() {
                return Err(Error::ModelFormat("border prototype width mismatch".into()));
            }
            list.push(BorderPrototype { cluster, vector });
        }
        border.push(list);
    }
    let meta_len = r.u64()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
    if r.pos != body.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if meta.n_classes != interior.nrows() || interior.ncols() != params.latent() {
        return Err(Error::ModelFormat(format!(
            "prototype pool {:?} inconsistent with C = {} and latent width {}",
            interior.dim(),
            meta.n_classes,
            params.latent()
        )));
    }
    Ok(Model {
        params,
        pool: PrototypePool { interior, border },
        config: meta.config,
        flags: meta.flags,
        n_classes: meta.n_classes,
        tau: meta.tau,
        diagnostics: meta.diagnostics,
        experiment: meta.experiment,
    })
}

pub fn save<T: Scalar>(m: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(m)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{EpochRecord, TrainDiagnostics};
    use ndarray::array;

    fn toy() -> Model<f64> {
        let params = GcnParams::init(3, 4, 2, 7).unwrap();
        let mut pool = PrototypePool::init(2, 2, 1).unwrap();
        pool.border[1].push(BorderPrototype {
            cluster: 3,
            vector: array![0.25, -1.0 / 3.0],
        });
        let diagnostics = TrainDiagnostics {
            log: vec![EpochRecord {
                epoch: 0,
                loss: 0.1 + 0.2,
                l_cls: 0.3,
                l_div: 1e-17,
                n_clean: 5,
                val_macro_f1: f64::NAN,
            }],
            ..Default::default()
        };
        Model {
            params,
            pool,
            config: TrainConfig::default(),
            flags: AblationFlags::default(),
            n_classes: 2,
            tau: 0.5,
            diagnostics,
            experiment: Some(serde_json::json!({"ind_rate": 0.05})),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = toy();
        let a = to_bytes(&m).unwrap();
        let back: Model<f64> = from_bytes(&a).unwrap();
        assert_eq!(back.params.w1, m.params.w1);
        assert_eq!(back.pool, m.pool);
        assert!(back.diagnostics.log[0].val_macro_f1.is_nan());
        assert_eq!(to_bytes(&back).unwrap(), a);
    }

    #[test]
    fn rejects_corruption() {
        let a = to_bytes(&toy()).unwrap();
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f64>(&bad), Err(Error::ModelFormat(m)) if m.contains("magic")));
        let mut bad = a.clone();
        bad[8] = 9;
        assert!(matches!(from_bytes::<f64>(&bad), Err(Error::ModelFormat(m)) if m.contains("version")));
        let mut bad = a.clone();
        bad[40] ^= 1;
        assert!(matches!(from_bytes::<f64>(&bad), Err(Error::ModelFormat(m)) if m.contains("checksum")));
        assert!(from_bytes::<f64>(&a[..a.len() - 10]).is_err());
        assert!(from_bytes::<f32>(&a).is_err());
    }
}
