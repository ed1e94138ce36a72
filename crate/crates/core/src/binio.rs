//! Little-endian primitives shared by every binary format in the crate.

use crate::error::{Error, Result};
use std::io::{Read, Write};

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_i8<W: Write>(w: &mut W, v: i8) -> Result<()> {
    w.write_all(&[v as u8])?;
    Ok(())
}

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

/// Length-prefixed UTF-8 (u16 length).
pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::InvalidArg(format!(
            "string of {} bytes too long for u16 length prefix",
            bytes.len()
        )));
    }
    write_u16(w, bytes.len() as u16)?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::FileFormat("truncated input".into())
        } else {
            Error::Io(e)
        }
    })
}

pub fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_i8<R: Read>(r: &mut R) -> Result<i8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0] as i8)
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u16(r)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::FileFormat("string field is not UTF-8".into()))
}

/// Read 4 bytes and require them to match `expect`.
pub fn expect_magic<R: Read>(r: &mut R, expect: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    read_exact(r, &mut got)?;
    if &got != expect {
        return Err(Error::FileFormat(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(expect),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}

/// Require the reader to be exhausted.
pub fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::FileFormat("trailing bytes after payload".into())),
        Err(e) => Err(Error::Io(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_round_trip() {
        let mut buf = Vec::new();
        write_u16(&mut buf, 0xBEEF).unwrap();
        write_u32(&mut buf, 0xDEAD_BEEF).unwrap();
        write_u64(&mut buf, u64::MAX - 1).unwrap();
        write_f32(&mut buf, -0.0).unwrap();
        write_f64(&mut buf, 1e-300).unwrap();
        write_i8(&mut buf, -127).unwrap();
        write_str(&mut buf, "stage1.block2.weight").unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_u16(&mut r).unwrap(), 0xBEEF);
        assert_eq!(read_u32(&mut r).unwrap(), 0xDEAD_BEEF);
        assert_eq!(read_u64(&mut r).unwrap(), u64::MAX - 1);
        assert_eq!(read_f32(&mut r).unwrap().to_bits(), (-0.0f32).to_bits());
        assert_eq!(read_f64(&mut r).unwrap(), 1e-300);
        assert_eq!(read_i8(&mut r).unwrap(), -127);
        assert_eq!(read_str(&mut r).unwrap(), "stage1.block2.weight");
    }

    #[test]
    fn truncation_is_a_format_error() {
        let mut r: &[u8] = &[1, 2];
        let err = read_u32(&mut r).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn magic_mismatch_names_both() {
        let mut r: &[u8] = b"WAVE";
        let err = expect_magic(&mut r, b"LMEL").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("LMEL") && msg.contains("WAVE"));
    }
}
