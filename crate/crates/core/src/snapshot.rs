//! Binary snapshot files holding named `f64` arrays.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "FLOWINF\0"
//! version    u32      1
//! kind       u32      1 = flow stack, 2 = surrogate
//! d          u32      input dimension
//! m          u32      output dimension (0 for flows)
//! n_limits   u32      followed by n_limits pairs of f64 (low, high)
//! n_arrays   u32
//! per array: name_len u32, name (utf-8), ndim u32, dims u64 * ndim,
//!            values f64 * prod(dims)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FLOWINF\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Flow = 1,
    Surrogate = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub kind: SnapshotKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub limits: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

pub fn encode(header: &SnapshotHeader, arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, header.kind as usize);
    put_u32(&mut out, header.input_dim);
    put_u32(&mut out, header.output_dim);
    put_u32(&mut out, header.limits.len());
    for [lo, hi] in &header.limits {
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    put_u32(&mut out, arrays.len());
    for a in arrays {
        put_u32(&mut out, a.name.len());
        out.extend_from_slice(a.name.as_bytes());
        put_u32(&mut out, a.shape.len());
        for &d in &a.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated while reading {field}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, field: &str) -> std::result::Result<usize, String> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, field: &str) -> std::result::Result<usize, String> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
    }
    fn f64(&mut self, field: &str) -> std::result::Result<f64, String> {
        let b = self.take(8, field)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(SnapshotHeader, Vec<NamedArray>), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err("magic".into());
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(format!("version (unsupported {version})"));
    }
    let kind = match r.u32("kind")? {
        1 => SnapshotKind::Flow,
        2 => SnapshotKind::Surrogate,
        k => return Err(format!("kind (unknown {k})")),
    };
    let input_dim = r.u32("d")?;
    let output_dim = r.u32("m")?;
    let n_limits = r.u32("limits")?;
    let mut limits = Vec::with_capacity(n_limits);
    for _ in 0..n_limits {
        limits.push([r.f64("limits")?, r.f64("limits")?]);
    }
    let n_arrays = r.u32("array count")?;
    let mut arrays = Vec::with_capacity(n_arrays);
    for i in 0..n_arrays {
        let len = r.u32("array name")?;
        let name = std::str::from_utf8(r.take(len, "array name")?)
            .map_err(|_| format!("array {i} name (invalid utf-8)"))?
            .to_string();
        let ndim = r.u32(&name)?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64(&name)?);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64(&name)?);
        }
        arrays.push(NamedArray { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after last array".into());
    }
    Ok((
        SnapshotHeader {
            kind,
            input_dim,
            output_dim,
            limits,
        },
        arrays,
    ))
}

pub fn write(path: &Path, header: &SnapshotHeader, arrays: &[NamedArray]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(header, arrays)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(SnapshotHeader, Vec<NamedArray>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|field| Error::Snapshot {
        path: path.to_path_buf(),
        field,
    })
}

/// Looks up an array by name, checking its shape.
pub fn take_array<'a>(arrays: &'a [NamedArray], name: &str, shape: &[usize], path: &Path) -> Result<&'a NamedArray> {
    let a = arrays.iter().find(|a| a.name == name).ok_or_else(|| Error::Snapshot {
        path: path.to_path_buf(),
        field: format!("{name} (missing)"),
    })?;
    if a.shape != shape {
        return Err(Error::Snapshot {
            path: path.to_path_buf(),
            field: format!("{name} (shape {:?}, expected {shape:?})", a.shape),
        });
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40),
            lo in -10.0f64..0.0,
        ) {
            let header = SnapshotHeader { kind: SnapshotKind::Surrogate, input_dim: 2, output_dim: 1, limits: vec![[lo, 1.0], [lo, 2.0]] };
            let arrays = vec![NamedArray::new("a", vec![values.len()], values.clone()), NamedArray::new("b", vec![0, 3], vec![])];
            let (h, a) = decode(&encode(&header, &arrays)).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(a, arrays);
        }
    }

    #[test]
    fn truncated_file_names_the_field() {
        let header = SnapshotHeader { kind: SnapshotKind::Flow, input_dim: 1, output_dim: 0, limits: vec![] };
        let bytes = encode(&header, &[NamedArray::new("weights", vec![2], vec![1.0, 2.0])]);
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.contains("weights"), "{err}");
        assert_eq!(decode(b"NOTASNAP").unwrap_err(), "magic");
    }
}
