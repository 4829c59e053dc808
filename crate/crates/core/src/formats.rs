//! Little-endian framing shared by the binary file formats.
//!
//! Every format starts with a four byte magic and a `u32` version. Parsers
//! read the whole file into memory and walk it with [`ByteReader`], which
//! names the field it was reading when something goes wrong.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{format}: field `magic`: expected {expected:?}, found {found:?}")]
    BadMagic {
        format: &'static str,
        expected: String,
        found: String,
    },
    #[error("{format}: field `version`: unsupported version {found}")]
    UnsupportedVersion { format: &'static str, found: u32 },
    #[error("{format}: truncated while reading field `{field}`")]
    Truncated { format: &'static str, field: String },
    #[error("{format}: field `{field}`: {reason}")]
    Invalid {
        format: &'static str,
        field: String,
        reason: String,
    },
    #[error("{format}: {count} trailing bytes after payload")]
    TrailingBytes { format: &'static str, count: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub fn invalid(format: &'static str, field: impl Into<String>, reason: impl Into<String>) -> Self {
        FormatError::Invalid {
            format,
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Field name carried by the error, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            FormatError::BadMagic { .. } => Some("magic"),
            FormatError::UnsupportedVersion { .. } => Some("version"),
            FormatError::Truncated { field, .. } | FormatError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| FormatError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub struct ByteReader<'a> {
    format: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(format: &'static str, buf: &'a [u8]) -> Self {
        Self { format, buf, pos: 0 }
    }

    pub fn format(&self) -> &'static str {
        self.format
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(FormatError::Truncated {
                format: self.format,
                field: field.to_string(),
            }),
        }
    }

    /// Reads the magic and the version header, accepting only `version`.
    pub fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<(), FormatError> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(FormatError::BadMagic {
                format: self.format,
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let v = self.u32("version")?;
        if v != version {
            return Err(FormatError::UnsupportedVersion {
                format: self.format,
                found: v,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self, field: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u16(&mut self, field: &str) -> Result<u16, FormatError> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, field: &str) -> Result<u32, FormatError> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64, FormatError> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32(&mut self, field: &str) -> Result<f32, FormatError> {
        let b = self.take(4, field)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32_vec(&mut self, n: usize, field: &str) -> Result<Vec<f32>, FormatError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| FormatError::invalid(self.format, field, "length overflow"))?;
        let b = self.take(bytes, field)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&mut self, n: usize, field: &str) -> Result<&'a [u8], FormatError> {
        self.take(n, field)
    }

    /// `u16` length prefix followed by UTF-8 bytes.
    pub fn short_string(&mut self, field: &str) -> Result<String, FormatError> {
        let len = self.u16(field)? as usize;
        let raw = self.take(len, field)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| FormatError::invalid(self.format, field, "not valid UTF-8"))
    }

    /// Checks that a count read from the header can be backed by the bytes left.
    pub fn check_capacity(&self, count: u64, record_bytes: u64, field: &str) -> Result<usize, FormatError> {
        let remaining = (self.buf.len() - self.pos) as u64;
        match count.checked_mul(record_bytes) {
            Some(need) if need <= remaining => Ok(count as usize),
            _ => Err(FormatError::invalid(
                self.format,
                field,
                format!("count {count} exceeds remaining {remaining} bytes"),
            )),
        }
    }

    pub fn finish(self) -> Result<(), FormatError> {
        let left = self.buf.len() - self.pos;
        if left != 0 {
            return Err(FormatError::TrailingBytes {
                format: self.format,
                count: left,
            });
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_header(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32_slice(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.f32(*x);
        }
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// Panics if `s` is longer than `u16::MAX` bytes; callers validate first.
    pub fn short_string(&mut self, s: &str) {
        let len = u16::try_from(s.len()).expect("string longer than u16::MAX");
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_names_field() {
        let mut w = ByteWriter::with_header(b"TEST", 1);
        w.u16(7);
        let bytes = w.into_bytes();
        let mut r = ByteReader::new("TEST", &bytes);
        r.header(b"TEST", 1).unwrap();
        let err = r.u32("count").unwrap_err();
        assert_eq!(err.field(), Some("count"));
    }

    #[test]
    fn bad_magic_and_version() {
        let bytes = ByteWriter::with_header(b"ABCD", 2).into_bytes();
        let err = ByteReader::new("X", &bytes).header(b"ABCE", 2).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic { .. }));
        let err = ByteReader::new("X", &bytes).header(b"ABCD", 1).unwrap_err();
        assert!(matches!(err, FormatError::UnsupportedVersion { found: 2, .. }));
    }

    #[test]
    fn capacity_check_rejects_huge_counts() {
        let bytes = [0u8; 16];
        let r = ByteReader::new("X", &bytes);
        assert!(r.check_capacity(u64::MAX, 4, "count").is_err());
        assert_eq!(r.check_capacity(4, 4, "count").unwrap(), 4);
    }
}
