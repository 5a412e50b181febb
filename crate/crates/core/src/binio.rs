//! Little-endian section encoding shared by the `EMOF` and `EMOM` formats.
//!
//! A section is `magic (4 bytes) | ... | crc32`, where the CRC covers every
//! byte of the section before it, magic included. Sections may be
//! concatenated; the reader validates each one as it is consumed.

use crate::{Error, Result};

pub(crate) struct SectionWriter {
    buf: Vec<u8>,
    start: usize,
}

impl SectionWriter {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self {
            buf: Vec::new(),
            start: 0,
        };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    /// Starts a further section after a finished one.
    pub fn append(mut self, magic: &[u8; 4], version: u32) -> Self {
        self.start = self.buf.len();
        self.buf.extend_from_slice(magic);
        self.u32(version);
        self
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Closes the current section by appending its CRC32.
    pub fn seal(&mut self) {
        let crc = crc32fast::hash(&self.buf[self.start..]);
        self.u32(crc);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct SectionReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    start: usize,
}

impl<'a> SectionReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            start: 0,
        }
    }

    /// Reads the magic and version of the next section.
    pub fn open(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        self.start = self.pos;
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let v = self.u32("version")?;
        if v != version {
            return Err(Error::Version {
                expected: version,
                found: v,
            });
        }
        Ok(())
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Truncated(format!("{what} length overflow")))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Truncated(format!("{what} length overflow")))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::Invalid(format!("{what}: {e}")))
    }

    /// Checks the trailing CRC32 of the current section.
    pub fn verify(&mut self) -> Result<()> {
        let computed = crc32fast::hash(&self.bytes[self.start..self.pos]);
        let stored = self.u32("checksum")?;
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(())
    }
}
