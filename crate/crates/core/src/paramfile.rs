//! Versioned binary container for trained parameters.
//!
//! Layout: 5-byte magic (`PLEX1` or `HEAD1`), little-endian `u32` dimension
//! header, then row-major little-endian `f64` tensors in a fixed order.

use std::io::Read;

use crate::error::{PlexError, Result};

pub(crate) const MAGIC_LEN: usize = 5;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(magic: &[u8; MAGIC_LEN]) -> Self {
        Writer {
            buf: magic.to_vec(),
        }
    }

    pub(crate) fn u32(&mut self, v: usize) -> &mut Self {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
        self
    }

    pub(crate) fn f64s(&mut self, vals: &[f64]) -> &mut Self {
        for v in vals {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub(crate) fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks the magic. A matching family with a different version digit is
    /// a version mismatch; anything else is a format error.
    pub(crate) fn open(bytes: &'a [u8], magic: &[u8; MAGIC_LEN]) -> Result<Self> {
        if bytes.len() < MAGIC_LEN {
            return Err(PlexError::Format("file too short for magic header".into()));
        }
        let found = &bytes[..MAGIC_LEN];
        if found != magic {
            let family = MAGIC_LEN - 1;
            if found[..family] == magic[..family] {
                return Err(PlexError::VersionMismatch {
                    expected: String::from_utf8_lossy(magic).into_owned(),
                    found: String::from_utf8_lossy(found).into_owned(),
                });
            }
            return Err(PlexError::Format(format!(
                "bad magic bytes {:?}, expected {}",
                found,
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Reader {
            bytes,
            pos: MAGIC_LEN,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PlexError::Format(format!(
                "truncated file: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(
            n.checked_mul(8)
                .ok_or_else(|| PlexError::Format("tensor size overflow".into()))?,
        )?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(PlexError::Format(format!(
                "{} trailing bytes after parameters",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
