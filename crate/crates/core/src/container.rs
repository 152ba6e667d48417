//! Binary container: magic, JSON header, little-endian `f64` payload.
//!
//! ```text
//! bytes 0..4    b"GDIF"
//! bytes 4..8    format version (u32 LE)
//! bytes 8..16   header length in bytes (u64 LE)
//! ...           UTF-8 JSON header
//! ...           payload, f64 LE, length announced in the header
//! ```

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GDIF";
const VERSION: u32 = 1;

pub fn write<W: Write, H: Serialize>(mut w: W, header: &H, payload: &[f64]) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(head.len() as u64).to_le_bytes())?;
    w.write_all(&head)?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read<R: Read, H: DeserializeOwned>(mut r: R) -> Result<(H, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a GDIF container".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let mut head = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut head)?;
    let header = serde_json::from_slice(&head)?;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut payload = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        payload.push(f64::from_le_bytes(b8));
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_foreign_bytes() {
        let r: Result<(serde_json::Value, Vec<f64>)> = read(&b"NOPE0000"[..]);
        assert!(matches!(r, Err(Error::Format(_))));
    }
}
