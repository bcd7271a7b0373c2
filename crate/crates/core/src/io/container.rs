//! The `PS2F` array container.
//!
//! Layout (all integers little-endian):
//!
//! | field        | size            | value                              |
//! |--------------|-----------------|------------------------------------|
//! | magic        | 4               | `PS2F`                             |
//! | version      | u16             | 1                                  |
//! | dtype        | u8              | 1 = float32 LE                     |
//! | ndim         | u8              |                                    |
//! | dims         | ndim x u64      | outermost first                    |
//! | n_attrs      | u32             |                                    |
//! | attrs        | n_attrs records | u32 key len, key, u32 val len, val |
//! | data_len     | u64             | bytes, = product(dims) * 4         |
//! | data         | data_len        | row-major float32                  |
//!
//! Attribute keys and values are UTF-8 and written in sorted key order, so a
//! given container always serializes to the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PS2F";
pub const VERSION: u16 = 1;
pub const DTYPE_F32_LE: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated container at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("declared data length {declared} bytes does not match dims (expected {expected})")]
    LengthMismatch { declared: u64, expected: u64 },
    #[error("invalid UTF-8 in attribute at byte offset {offset}")]
    BadUtf8 { offset: usize },
    #[error("{count} trailing bytes after data at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("missing attribute `{0}`")]
    MissingAttribute(String),
    #[error("attribute `{key}`: {reason}")]
    BadAttribute { key: String, reason: String },
    #[error("container holds a `{found}`, expected a `{expected}`")]
    KindMismatch { expected: String, found: String },
}

/// An n-dimensional float32 array with named string attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub dims: Vec<usize>,
    pub attrs: BTreeMap<String, String>,
    pub data: Vec<f32>,
}

impl Container {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        Container { dims, attrs: BTreeMap::new(), data }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn attr(&self, key: &str) -> Result<&str, FormatError> {
        self.attrs.get(key).map(String::as_str).ok_or_else(|| FormatError::MissingAttribute(key.to_string()))
    }

    /// Parses an attribute stored as JSON.
    pub fn attr_json<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, FormatError> {
        serde_json::from_str(self.attr(key)?).map_err(|e| FormatError::BadAttribute { key: key.into(), reason: e.to_string() })
    }

    pub fn set_json<T: serde::Serialize>(&mut self, key: &str, value: &T) {
        let text = serde_json::to_string(value).expect("attribute serializes");
        self.attrs.insert(key.to_string(), text);
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), FormatError> {
        let found = self.attr("kind")?;
        if found != kind {
            return Err(FormatError::KindMismatch { expected: kind.into(), found: found.into() });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.data.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32_LE);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.attrs.len() as u32).to_le_bytes());
        for (k, v) in &self.attrs {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&((self.data.len() * 4) as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic { expected: MAGIC, found: magic });
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion { found: version, supported: VERSION });
        }
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32_LE {
            return Err(FormatError::UnsupportedDtype(dtype));
        }
        let ndim = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u64()? as usize);
        }
        let n_attrs = r.u32()?;
        let mut attrs = BTreeMap::new();
        for _ in 0..n_attrs {
            let key = r.string()?;
            let value = r.string()?;
            attrs.insert(key, value);
        }
        let declared = r.u64()?;
        let expected = dims.iter().try_fold(4u64, |acc, &d| acc.checked_mul(d as u64)).unwrap_or(u64::MAX);
        if declared != expected {
            return Err(FormatError::LengthMismatch { declared, expected });
        }
        let raw = r.take(declared as usize)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes { offset: r.pos, count: bytes.len() - r.pos });
        }
        Ok(Container { dims, attrs, data })
    }

    pub fn read_file(path: impl AsRef<Path>) -> crate::Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let avail = self.bytes.len() - self.pos;
        if n > avail {
            return Err(FormatError::Truncated { offset: self.bytes.len(), needed: n - avail });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, FormatError> {
        let len = self.u32()? as usize;
        let offset = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::BadUtf8 { offset })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        Container::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0])
            .with_attr("kind", "test")
            .with_attr("pitch", "6.875e-6")
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"PS2F");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(b[6], 1);
        assert_eq!(b[7], 2);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(&b[b.len() - 4..], &7.0f32.to_le_bytes());
    }

    #[test]
    fn wrong_magic_names_both() {
        let mut b = sample().to_bytes();
        b[..4].copy_from_slice(b"NOPE");
        assert_eq!(
            Container::from_bytes(&b),
            Err(FormatError::BadMagic { expected: *b"PS2F", found: *b"NOPE" })
        );
    }

    #[test]
    fn truncation_reports_offset() {
        let b = sample().to_bytes();
        let cut = &b[..b.len() - 3];
        match Container::from_bytes(cut) {
            Err(FormatError::Truncated { offset, needed }) => {
                assert_eq!(offset, cut.len());
                assert_eq!(needed, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_and_length_checked() {
        let mut b = sample().to_bytes();
        b[4] = 9;
        assert!(matches!(Container::from_bytes(&b), Err(FormatError::UnsupportedVersion { found: 9, .. })));
        let mut c = sample();
        c.dims = vec![2, 2];
        assert!(matches!(Container::from_bytes(&c.to_bytes()), Err(FormatError::LengthMismatch { .. })));
        let mut extra = sample().to_bytes();
        extra.push(0);
        assert!(matches!(Container::from_bytes(&extra), Err(FormatError::TrailingBytes { .. })));
    }

    #[test]
    fn non_ascii_attributes_preserved() {
        let c = sample().with_attr("Ψ-λ键", "µm ✓ 6.9×6.9×19.5 µm³");
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.attr("Ψ-λ键").unwrap(), "µm ✓ 6.9×6.9×19.5 µm³");
        assert_eq!(back, c);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
            attrs in proptest::collection::btree_map("\\PC{1,8}", "\\PC{0,12}", 0..4),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff)).collect();
            let c = Container { dims, attrs, data };
            let bytes = c.to_bytes();
            let back = Container::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
