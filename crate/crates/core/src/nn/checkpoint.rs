//! `QCKP` checkpoint files: magic, `u32` version, then for every network a
//! `u32` name length, the UTF-8 name, a `u32` parameter count and that many
//! little-endian `f64` values. Entries run to end of file.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(entries: &[(String, Vec<f64>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    for (name, params) in entries {
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
        for &p in params {
            out.write_f64::<LittleEndian>(p).unwrap();
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut cur = Cursor::new(bytes);
    let fail = |cur: &Cursor<&[u8]>, message: &str| Error::Format {
        offset: cur.position(),
        message: message.to_string(),
    };
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| fail(&cur, "truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected QCKP"),
        });
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| fail(&cur, "truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut entries = Vec::new();
    while (cur.position() as usize) < bytes.len() {
        let len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fail(&cur, "truncated name length"))? as usize;
        let mut name = vec![0u8; len];
        cur.read_exact(&mut name).map_err(|_| fail(&cur, "truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| fail(&cur, "name is not UTF-8"))?;
        let count = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| fail(&cur, "truncated parameter count"))? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(
                cur.read_f64::<LittleEndian>()
                    .map_err(|_| fail(&cur, "truncated parameters"))?,
            );
        }
        entries.push((name, params));
    }
    Ok(entries)
}

pub fn save_checkpoint(path: &Path, entries: &[(String, Vec<f64>)]) -> Result<()> {
    fs::write(path, encode_checkpoint(entries)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
