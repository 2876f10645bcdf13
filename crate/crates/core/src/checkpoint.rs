//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "RELCAPCK"
//! version    u32       FORMAT_VERSION
//! meta_len   u64
//! meta       meta_len bytes of UTF-8 JSON (config echo, vocabulary, ...)
//! count      u32       number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   payload  prod(dims) × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RELCAPCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    pub fn push_params<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (_, p) in store.iter() {
            self.push(format!("{prefix}{}", p.name), &p.value);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies `prefix + name` entries into every parameter of `store`.
    pub fn restore_params<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        for p in store.iter_mut() {
            let key = format!("{prefix}{}", p.name);
            let t = self
                .get(&key)
                .ok_or_else(|| Error::Format(format!("missing tensor `{key}`")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let meta_len = read_u64(r)? as usize;
        let meta_bytes = read_vec(r, meta_len)?;
        let meta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(read_vec(r, name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = read_u32(r)? as usize;
            let mut dims = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                dims.push(read_u64(r)? as usize);
            }
            let n: usize = dims.iter().product();
            let raw = read_vec(r, n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
            tensors.push((name, t));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    r.take(n as u64).read_to_end(&mut v)?;
    if v.len() != n {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({"model": "mttsnet", "hidden": 8}));
        ck.push("w", &Tensor::<f64>::matrix(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, 7.0]).unwrap());
        ck.push("b", &Tensor::<f32>::row(vec![0.5]));
        ck
    }

    #[test]
    fn roundtrip() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), FORMAT_VERSION);
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let mut bytes = sample().to_bytes().unwrap();
        let cut = bytes[..bytes.len() - 3].to_vec();
        assert!(matches!(Checkpoint::read_from(&mut cut.as_slice()), Err(Error::Format(_))));
        bytes[8] = 99;
        assert!(matches!(Checkpoint::read_from(&mut bytes.as_slice()), Err(Error::Format(_))));
        assert!(matches!(
            Checkpoint::read_from(&mut &b"garbage!"[..]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn restore_checks_shapes() {
        let ck = sample();
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros(&[2, 3])).unwrap();
        ck.restore_params("", &mut store).unwrap();
        assert_eq!(store.by_name("w").unwrap().value.data()[1], -2.5);

        let mut wrong = ParamStore::<f64>::new();
        wrong.add("w", Tensor::zeros(&[3, 2])).unwrap();
        assert!(ck.restore_params("", &mut wrong).is_err());
    }
}
