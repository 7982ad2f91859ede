//! Little-endian framing shared by the binary file formats.
//!
//! Sealed files are laid out as magic, version, total file length (u64), payload,
//! then a CRC32 of everything before it. The length field lets a reader tell a cut
//! file from a corrupted one before looking at the checksum.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

const LENGTH_AT: usize = 8;
const SEALED_HEADER: usize = 16;

impl Writer {
    /// Header for a file that will be finished with [`Writer::seal`].
    pub fn new(magic: [u8; 4], version: u32) -> Self {
        let mut w = Self::plain(magic, version);
        w.u64(0);
        w
    }

    /// Header without a length field, for formats that are never sealed.
    pub fn plain(magic: [u8; 4], version: u32) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.bytes(&magic);
        w.u32(version);
        w
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.bytes(&v.to_le_bytes());
        }
    }

    pub fn len_u32(&mut self, n: usize, what: &str) -> Result<()> {
        let v =
            u32::try_from(n).map_err(|_| Error::Parameter(format!("{what} {n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    /// Fills in the length field, appends the CRC32 and returns the finished bytes.
    pub fn seal(mut self) -> Vec<u8> {
        let total = (self.buf.len() + 4) as u64;
        self.buf[LENGTH_AT..SEALED_HEADER].copy_from_slice(&total.to_le_bytes());
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }

    /// Unsealed contents, for formats without a checksum.
    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!(
                "{what}: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes_needed = n
            .checked_mul(8)
            .ok_or_else(|| Error::Malformed(format!("{what}: count {n} overflows")))?;
        let raw = self.take(bytes_needed, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

/// Checks magic and version, returning a reader positioned after them.
pub(crate) fn open_header<'a>(bytes: &'a [u8], magic: [u8; 4], version: u32) -> Result<Reader<'a>> {
    let mut r = Reader::new(bytes);
    let found: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let v = r.u32("version")?;
    if v != version {
        return Err(Error::Version {
            expected: version,
            found: v,
        });
    }
    Ok(r)
}

/// Like [`open_header`] for sealed files; also consumes the length field.
pub(crate) fn open_sealed_header<'a>(
    bytes: &'a [u8],
    magic: [u8; 4],
    version: u32,
) -> Result<(Reader<'a>, u64)> {
    let mut r = open_header(bytes, magic, version)?;
    let total = r.u64("file length")?;
    Ok((r, total))
}

/// Decodes a sealed file: header checks, then the recorded length against the
/// actual one, then the checksum, then `parse` on the payload.
pub(crate) fn decode_sealed<T>(
    bytes: &[u8],
    magic: [u8; 4],
    version: u32,
    parse: impl FnOnce(&mut Reader<'_>) -> Result<T>,
) -> Result<T> {
    let (_, total) = open_sealed_header(bytes, magic, version)?;
    let actual = bytes.len() as u64;
    if actual < total.max(SEALED_HEADER as u64 + 4) {
        return Err(Error::Truncated(format!(
            "file has {actual} bytes, header records {total}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if actual != total {
        return Err(Error::Malformed(format!(
            "file has {actual} bytes, header records {total}"
        )));
    }
    let mut r = Reader::new(&body[SEALED_HEADER..]);
    let v = parse(&mut r)?;
    r.finish()?;
    Ok(v)
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
