//! Single-file tensor container used by every pipeline stage.
//!
//! Layout (little-endian throughout):
//! - magic `MRFT`, version `u32`, record count `u32`
//! - per record: name (`u16` length + UTF-8 bytes), dtype code (`u8`;
//!   f64 = 1, c128 = 2, i64 = 3, u8 = 4), rank (`u8`), dims (`u64` each),
//!   then the raw row-major payload
//!
//! Metadata travels as a UTF-8 JSON record named `__meta__`. Files are
//! bit-exact: writing the same records twice produces identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{MrfError, Result};

pub const MAGIC: &[u8; 4] = b"MRFT";
pub const VERSION: u32 = 1;
pub const META_RECORD: &str = "__meta__";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 1,
    C128 = 2,
    I64 = 3,
    U8 = 4,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F64),
            2 => Ok(DType::C128),
            3 => Ok(DType::I64),
            4 => Ok(DType::U8),
            other => Err(MrfError::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn elem_size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::C128 => 16,
            DType::I64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Record {
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub data: Vec<u8>,
}

impl Record {
    pub fn len(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An in-memory container; records keep insertion-independent (sorted) order
/// on write so that equal content yields equal bytes.
#[derive(Debug, Default, Clone)]
pub struct TensorFile {
    records: BTreeMap<String, Record>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.contains_key(name)
    }

    fn insert(&mut self, name: &str, dtype: DType, dims: Vec<u64>, data: Vec<u8>) {
        let expect = dims.iter().product::<u64>() as usize * dtype.elem_size();
        assert_eq!(data.len(), expect, "record {name} payload size");
        self.records.insert(name.to_string(), Record { dtype, dims, data });
    }

    pub fn put_f64(&mut self, name: &str, dims: &[u64], values: &[f64]) {
        let mut data = Vec::with_capacity(values.len() * 8);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        self.insert(name, DType::F64, dims.to_vec(), data);
    }

    pub fn put_c128(&mut self, name: &str, dims: &[u64], values: &[Complex64]) {
        let mut data = Vec::with_capacity(values.len() * 16);
        for v in values {
            data.extend_from_slice(&v.re.to_le_bytes());
            data.extend_from_slice(&v.im.to_le_bytes());
        }
        self.insert(name, DType::C128, dims.to_vec(), data);
    }

    pub fn put_i64(&mut self, name: &str, dims: &[u64], values: &[i64]) {
        let mut data = Vec::with_capacity(values.len() * 8);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        self.insert(name, DType::I64, dims.to_vec(), data);
    }

    pub fn put_u8(&mut self, name: &str, dims: &[u64], values: &[u8]) {
        self.insert(name, DType::U8, dims.to_vec(), values.to_vec());
    }

    pub fn put_meta(&mut self, meta: &serde_json::Value) {
        let bytes = serde_json::to_vec(meta).expect("meta serializes");
        self.put_u8(META_RECORD, &[bytes.len() as u64], &bytes);
    }

    fn record(&self, name: &str) -> Result<&Record> {
        self.records
            .get(name)
            .ok_or_else(|| MrfError::Format(format!("missing record `{name}`")))
    }

    pub fn dims(&self, name: &str) -> Result<&[u64]> {
        Ok(&self.record(name)?.dims)
    }

    pub fn get_f64(&self, name: &str) -> Result<Vec<f64>> {
        let rec = self.record(name)?;
        if rec.dtype != DType::F64 {
            return Err(MrfError::Format(format!("record `{name}` is not f64")));
        }
        Ok(rec
            .data
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn get_c128(&self, name: &str) -> Result<Vec<Complex64>> {
        let rec = self.record(name)?;
        if rec.dtype != DType::C128 {
            return Err(MrfError::Format(format!("record `{name}` is not c128")));
        }
        Ok(rec
            .data
            .chunks_exact(16)
            .map(|b| {
                Complex64::new(
                    f64::from_le_bytes(b[..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..].try_into().unwrap()),
                )
            })
            .collect())
    }

    pub fn get_i64(&self, name: &str) -> Result<Vec<i64>> {
        let rec = self.record(name)?;
        if rec.dtype != DType::I64 {
            return Err(MrfError::Format(format!("record `{name}` is not i64")));
        }
        Ok(rec
            .data
            .chunks_exact(8)
            .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn get_u8(&self, name: &str) -> Result<Vec<u8>> {
        let rec = self.record(name)?;
        if rec.dtype != DType::U8 {
            return Err(MrfError::Format(format!("record `{name}` is not u8")));
        }
        Ok(rec.data.clone())
    }

    pub fn get_meta(&self) -> Result<serde_json::Value> {
        let bytes = self.get_u8(META_RECORD)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| MrfError::Format(format!("metadata is not valid JSON: {e}")))
    }

    /// Convenience: a 2-D complex record as an `Array2`.
    pub fn get_c128_matrix(&self, name: &str) -> Result<Array2<Complex64>> {
        let dims = self.dims(name)?.to_vec();
        if dims.len() != 2 {
            return Err(MrfError::Shape(format!(
                "record `{name}` has rank {}, expected 2",
                dims.len()
            )));
        }
        let data = self.get_c128(name)?;
        Array2::from_shape_vec((dims[0] as usize, dims[1] as usize), data)
            .map_err(|e| MrfError::Shape(format!("record `{name}`: {e}")))
    }

    pub fn get_f64_matrix(&self, name: &str) -> Result<Array2<f64>> {
        let dims = self.dims(name)?.to_vec();
        if dims.len() != 2 {
            return Err(MrfError::Shape(format!(
                "record `{name}` has rank {}, expected 2",
                dims.len()
            )));
        }
        let data = self.get_f64(name)?;
        Array2::from_shape_vec((dims[0] as usize, dims[1] as usize), data)
            .map_err(|e| MrfError::Shape(format!("record `{name}`: {e}")))
    }

    pub fn get_f64_vector(&self, name: &str) -> Result<Array1<f64>> {
        let data = self.get_f64(name)?;
        Ok(Array1::from_vec(data))
    }

    pub fn put_f64_matrix(&mut self, name: &str, m: &Array2<f64>) {
        let flat: Vec<f64> = m.iter().copied().collect();
        self.put_f64(name, &[m.nrows() as u64, m.ncols() as u64], &flat);
    }

    pub fn put_c128_matrix(&mut self, name: &str, m: &Array2<Complex64>) {
        let flat: Vec<Complex64> = m.iter().copied().collect();
        self.put_c128(name, &[m.nrows() as u64, m.ncols() as u64], &flat);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, rec) in &self.records {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.push(rec.dtype as u8);
            out.push(rec.dims.len() as u8);
            for d in &rec.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&rec.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| MrfError::Format("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(MrfError::Format(format!(
                "bad magic {:?}, expected MRFT",
                magic
            )));
        }
        let version = read_u32(&mut cur)?;
        if version != VERSION {
            return Err(MrfError::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let count = read_u32(&mut cur)?;
        let mut file = TensorFile::new();
        for _ in 0..count {
            let name_len = read_u16(&mut cur)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            cur.read_exact(&mut name_bytes)
                .map_err(|_| MrfError::Format("truncated record name".into()))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| MrfError::Format("record name is not UTF-8".into()))?;
            let dtype = DType::from_code(read_u8(&mut cur)?)?;
            let rank = read_u8(&mut cur)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(&mut cur)?);
            }
            let n_bytes = dims.iter().product::<u64>() as usize * dtype.elem_size();
            let mut data = vec![0u8; n_bytes];
            cur.read_exact(&mut data)
                .map_err(|_| MrfError::Format(format!("truncated payload for `{name}`")))?;
            file.records.insert(name, Record { dtype, dims, data });
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| MrfError::io(dir, e))?;
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| MrfError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| MrfError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| MrfError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 over the named records (dims and payload), used for lineage
    /// checks between pipeline stages.
    pub fn hash_records(&self, names: &[&str]) -> Result<String> {
        let mut hasher = Sha256::new();
        for name in names {
            let rec = self.record(name)?;
            hasher.update(name.as_bytes());
            hasher.update([rec.dtype as u8]);
            for d in &rec.dims {
                hasher.update(d.to_le_bytes());
            }
            hasher.update(&rec.data);
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// SHA-256 of arbitrary bytes, hex-encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_u8(cur: &mut std::io::Cursor<&[u8]>) -> Result<u8> {
    let mut b = [0u8; 1];
    cur.read_exact(&mut b)
        .map_err(|_| MrfError::Format("unexpected end of file".into()))?;
    Ok(b[0])
}

fn read_u16(cur: &mut std::io::Cursor<&[u8]>) -> Result<u16> {
    let mut b = [0u8; 2];
    cur.read_exact(&mut b)
        .map_err(|_| MrfError::Format("unexpected end of file".into()))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| MrfError::Format("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut std::io::Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)
        .map_err(|_| MrfError::Format("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_dtypes() {
        let mut tf = TensorFile::new();
        tf.put_f64("a", &[2, 2], &[1.0, -2.5, 3.25, f64::MIN_POSITIVE]);
        tf.put_c128("b", &[2], &[Complex64::new(1.0, -1.0), Complex64::new(0.0, 2.0)]);
        tf.put_i64("c", &[3], &[-1, 0, i64::MAX]);
        tf.put_u8("d", &[4], &[0, 1, 254, 255]);
        tf.put_meta(&serde_json::json!({"k": "v", "n": 3}));
        let bytes = tf.to_bytes();
        let back = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.get_f64("a").unwrap(), tf.get_f64("a").unwrap());
        assert_eq!(back.get_c128("b").unwrap(), tf.get_c128("b").unwrap());
        assert_eq!(back.get_i64("c").unwrap(), tf.get_i64("c").unwrap());
        assert_eq!(back.get_u8("d").unwrap(), tf.get_u8("d").unwrap());
        assert_eq!(back.get_meta().unwrap()["n"], 3);
        // identical content -> identical bytes
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn missing_record_and_bad_magic() {
        let tf = TensorFile::new();
        assert!(tf.get_f64("nope").is_err());
        assert!(TensorFile::from_bytes(b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").is_err());
    }
}
