//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Every container starts with an 8-byte magic, a `u32` version and a
/// reserved `u32` (always zero), for 16 bytes total.
pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 8], version: u32) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())
}

pub(crate) fn read_header<R: Read>(
    r: &mut R,
    kind: &'static str,
    magic: &[u8; 8],
    version: u32,
) -> Result<()> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got).map_err(|e| eof(kind, e))?;
    if &got != magic {
        return Err(Error::format(kind, "bad magic"));
    }
    let v = read_u32(r, kind)?;
    if v != version {
        return Err(Error::format(kind, format!("unsupported version {v}")));
    }
    let reserved = read_u32(r, kind)?;
    if reserved != 0 {
        return Err(Error::format(kind, "non-zero reserved header field"));
    }
    Ok(())
}

fn eof(kind: &'static str, e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format(kind, "truncated file")
    } else {
        Error::Io(e)
    }
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// `u32` byte length followed by UTF-8 bytes.
pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R, kind: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| eof(kind, e))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, kind: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| eof(kind, e))?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a `u64` count and checks it against a sanity ceiling so a corrupt
/// header cannot trigger a huge allocation.
pub(crate) fn read_len<R: Read>(r: &mut R, kind: &'static str, limit: u64) -> Result<usize> {
    let v = read_u64(r, kind)?;
    if v > limit {
        return Err(Error::format(kind, format!("length {v} exceeds limit {limit}")));
    }
    Ok(v as usize)
}

pub(crate) fn read_f64<R: Read>(r: &mut R, kind: &'static str) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| eof(kind, e))?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, kind: &'static str, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|e| eof(kind, e))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub(crate) fn read_str<R: Read>(r: &mut R, kind: &'static str) -> Result<String> {
    let len = read_u32(r, kind)? as usize;
    if len > 1 << 16 {
        return Err(Error::format(kind, "string too long"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| eof(kind, e))?;
    String::from_utf8(buf).map_err(|_| Error::format(kind, "string is not UTF-8"))
}

pub(crate) fn read_bytes<const N: usize, R: Read>(r: &mut R, kind: &'static str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| eof(kind, e))?;
    Ok(b)
}

/// Fails unless the reader is exhausted.
pub(crate) fn expect_end<R: Read>(r: &mut R, kind: &'static str) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::format(kind, "trailing bytes after payload")),
    }
}
