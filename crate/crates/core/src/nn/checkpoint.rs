//! Checkpoint container: magic `EPD1`, a manifest of (name, shape,
//! offset) entries, then little-endian float32 blobs.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"EPD1";

#[derive(Debug)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save(path: &Path, entries: &[(String, Vec<usize>, &[f32])]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;

    let mut offset = 0u64;
    for (name, shape, data) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("entry name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[shape.len() as u8])?;
        for &d in shape.iter() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += (data.len() * 4) as u64;
    }
    for (_, _, data) in entries {
        for &v in data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut pos: usize = 0;

    let read_exact = |r: &mut BufReader<File>, buf: &mut [u8], pos: &mut usize| -> Result<()> {
        r.read_exact(buf).map_err(|_| {
            Error::format(path, format!("truncated checkpoint at byte offset {pos}"))
        })?;
        *pos += buf.len();
        Ok(())
    };

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &mut pos)?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic, expected EPD1"));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut r, &mut u32buf, &mut pos)?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        read_exact(&mut r, &mut u16buf, &mut pos)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, &mut pos)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::format(path, "entry name is not utf-8"))?;
        let mut ndim = [0u8; 1];
        read_exact(&mut r, &mut ndim, &mut pos)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            read_exact(&mut r, &mut u32buf, &mut pos)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let mut u64buf = [0u8; 8];
        read_exact(&mut r, &mut u64buf, &mut pos)?;
        let offset = u64::from_le_bytes(u64buf);
        manifest.push((name, shape, offset));
    }

    // Blobs follow the manifest in entry order; offsets are relative to
    // the blob section, so verify they agree before reading.
    let mut expected = 0u64;
    let mut entries = Vec::with_capacity(count);
    for (name, shape, offset) in manifest {
        if offset != expected {
            return Err(Error::format(
                path,
                format!("blob offset mismatch for {name}: manifest says {offset}, expected {expected}"),
            ));
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut r, &mut raw, &mut pos)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        expected += (numel * 4) as u64;
        entries.push(CheckpointEntry { name, shape, data });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = std::env::temp_dir().join("epd-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.epd");
        let a = vec![1.0f32, -2.5, 3.25, f32::MIN_POSITIVE];
        let b = vec![0.125f32; 6];
        save(
            &path,
            &[
                ("layer.weight".to_string(), vec![2, 2], a.as_slice()),
                ("layer.bias".to_string(), vec![6], b.as_slice()),
            ],
        )
        .unwrap();
        let entries = load(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].name, "layer.weight");
        assert_eq!(entries[0].shape, vec![2, 2]);
        assert_eq!(entries[0].data, a);
        assert_eq!(entries[1].data, b);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = std::env::temp_dir().join("epd-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.epd");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(matches!(load(&path), Err(Error::Format { .. })));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = std::env::temp_dir().join("epd-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.epd");
        let a = vec![1.0f32; 8];
        save(
            &path,
            &[("w".to_string(), vec![8], a.as_slice())],
        )
        .unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        match load(&path) {
            Err(Error::Format { reason, .. }) => {
                assert!(reason.contains("byte offset"), "{reason}")
            }
            other => panic!("expected format error, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }
}
