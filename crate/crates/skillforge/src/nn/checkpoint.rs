//! Binary checkpoint format for named parameter vectors.
//!
//! Layout (all integers little-endian):
//!   magic "SKF1" | u32 version | u32 net count |
//!   per net: u32 name length | UTF-8 name | u64 param count | f64 params
//!
//! Round-trips are bit-exact; readers reject unknown versions explicitly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SKF1";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, nets: &[(&str, &[f64])]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (name, params) in nets {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in *params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let bytes = fs::read(path)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint {} truncated at byte {}",
                path.display(),
                *cursor
            )));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    let magic = take(&mut cursor, 4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic in {}", path.display())));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} in {} (reader supports {VERSION})",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|_| Error::Format(format!("non-UTF-8 net name in {}", path.display())))?;
        let param_count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let raw = take(&mut cursor, param_count * 8)?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        nets.push((name, params));
    }
    Ok(nets)
}

/// Looks up a named parameter vector in a loaded checkpoint.
pub fn find_net<'a>(nets: &'a [(String, Vec<f64>)], name: &str) -> Result<&'a [f64]> {
    nets.iter()
        .find(|(n, _)| n == name)
        .map(|(_, p)| p.as_slice())
        .ok_or_else(|| Error::Format(format!("checkpoint has no net named {name:?}")))
}
