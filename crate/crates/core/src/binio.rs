//! Little-endian primitives shared by the binary container formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn read_exact_buf<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Corruption(format!("truncated while reading {what}")))?;
    Ok(buf)
}

pub(crate) fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let buf = read_exact_buf(r, 4, "magic bytes")?;
    if buf != magic {
        return Err(Error::Format(format!(
            "bad magic for {what}: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

pub(crate) fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let buf = read_exact_buf(r, 2, what)?;
    Ok(u16::from_le_bytes([buf[0], buf[1]]))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let buf = read_exact_buf(r, 4, what)?;
    Ok(u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let buf = read_exact_buf(r, 8, what)?;
    let mut b = [0u8; 8];
    b.copy_from_slice(&buf);
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f64_vec<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = read_exact_buf(r, n * 8, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b.copy_from_slice(c);
            f64::from_le_bytes(b)
        })
        .collect())
}

pub(crate) fn write_u16<W: Write>(w: &mut W, v: u16) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    // One buffered pass; element-at-a-time writes dominate save time otherwise.
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Fails when a reader still has unconsumed bytes after the structured payload.
pub(crate) fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Corruption(format!("{what}: trailing bytes after payload"))),
        Err(e) => Err(Error::Corruption(format!("{what}: {e}"))),
    }
}
