//! Shared pieces of the `MMH1` little-endian file formats.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMH1";

pub const KIND_EMBEDDINGS: u8 = b'E';
pub const KIND_LABELS: u8 = b'L';
pub const KIND_PARAMS: u8 = b'P';
pub const KIND_CODES: u8 = b'C';

/// Writes through a temp file in the destination directory and renames it
/// into place only after `body` succeeds.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_header<W: Write>(w: &mut W, kind: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[kind])?;
    Ok(())
}

/// Cursor over an in-memory file image.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::TruncatedFile(format!(
                "need {n} bytes for {what}, {} left",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Checks the magic and kind byte.
    pub fn header(&mut self, kind: u8) -> Result<()> {
        let bad = Error::BadMagic {
            expected: kind as char,
        };
        if self.remaining() < 5 {
            return Err(if self.buf[self.pos..] == MAGIC[..self.remaining().min(4)] {
                Error::TruncatedFile("header".into())
            } else {
                bad
            });
        }
        let head = self.take(5, "header")?;
        if &head[..4] != MAGIC || head[4] != kind {
            return Err(bad);
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Fails unless `n` payload bytes remain, before anything is allocated.
    pub fn expect_remaining(&self, n: u128, what: &str) -> Result<()> {
        let have = self.remaining() as u128;
        if have < n {
            return Err(Error::TruncatedFile(format!(
                "{what} needs {n} bytes, file has {have}"
            )));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(Error::TrailingBytes(n as u64)),
        }
    }
}
