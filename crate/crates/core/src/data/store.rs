//! Packed waveform store.
//!
//! Layout: magic `SW6K`, u32 LE trace count, then per trace a 32-byte
//! zero-padded trace id, two u32 LE arrival samples, and 3x6000 LE
//! float32 samples. A sidecar CSV (`<store>.idx.csv`) maps trace_id to
//! byte offset for random access.

use super::{CHANNELS, SEQ_LEN};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"SW6K";
const ID_BYTES: usize = 32;
const WAVE_BYTES: usize = CHANNELS * SEQ_LEN * 4;
const TRACE_BYTES: usize = ID_BYTES + 8 + WAVE_BYTES;

/// One stored trace: id, arrivals, raw 3-channel waveform.
#[derive(Debug, Clone)]
pub struct StoredTrace {
    pub trace_id: String,
    pub p_arrival_sample: u32,
    pub s_arrival_sample: u32,
    pub waveform: Vec<f32>,
}

pub fn index_path(store: &Path) -> PathBuf {
    let mut os = store.as_os_str().to_owned();
    os.push(".idx.csv");
    PathBuf::from(os)
}

/// Writes traces and the sidecar index; returns the per-trace offsets.
pub fn pack_store(traces: &[StoredTrace], path: &Path) -> Result<Vec<u64>> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(traces.len() as u32).to_le_bytes())?;

    let mut offsets = Vec::with_capacity(traces.len());
    let mut offset = (MAGIC.len() + 4) as u64;
    for t in traces {
        let id = t.trace_id.as_bytes();
        if id.len() > ID_BYTES {
            return Err(Error::invalid(format!(
                "trace_id `{}` longer than {ID_BYTES} bytes",
                t.trace_id
            )));
        }
        if t.waveform.len() != CHANNELS * SEQ_LEN {
            return Err(Error::invalid(format!(
                "trace `{}` has {} samples, expected {}",
                t.trace_id,
                t.waveform.len(),
                CHANNELS * SEQ_LEN
            )));
        }
        offsets.push(offset);
        let mut padded = [0u8; ID_BYTES];
        padded[..id.len()].copy_from_slice(id);
        w.write_all(&padded)?;
        w.write_all(&t.p_arrival_sample.to_le_bytes())?;
        w.write_all(&t.s_arrival_sample.to_le_bytes())?;
        for &v in &t.waveform {
            w.write_all(&v.to_le_bytes())?;
        }
        offset += TRACE_BYTES as u64;
    }
    w.flush()?;

    let mut idx = csv::Writer::from_path(index_path(path))?;
    idx.write_record(["trace_id", "byte_offset"])?;
    for (t, off) in traces.iter().zip(&offsets) {
        idx.write_record([t.trace_id.as_str(), &off.to_string()])?;
    }
    idx.flush()?;
    Ok(offsets)
}

fn read_trace(r: &mut BufReader<File>, path: &Path, offset: u64) -> Result<StoredTrace> {
    let mut buf = vec![0u8; TRACE_BYTES];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, format!("truncated store at byte offset {offset}")))?;
    let id_end = buf[..ID_BYTES]
        .iter()
        .position(|&b| b == 0)
        .unwrap_or(ID_BYTES);
    let trace_id = String::from_utf8(buf[..id_end].to_vec())
        .map_err(|_| Error::format(path, format!("non-utf8 trace id at offset {offset}")))?;
    let p = u32::from_le_bytes(buf[ID_BYTES..ID_BYTES + 4].try_into().unwrap());
    let s = u32::from_le_bytes(buf[ID_BYTES + 4..ID_BYTES + 8].try_into().unwrap());
    let wave_raw = &buf[ID_BYTES + 8..];
    let waveform: Vec<f32> = wave_raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(StoredTrace {
        trace_id,
        p_arrival_sample: p,
        s_arrival_sample: s,
        waveform,
    })
}

fn open_checked(path: &Path) -> Result<(BufReader<File>, usize)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated store at byte offset 0"))?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic, expected SW6K"));
    }
    let mut cnt = [0u8; 4];
    r.read_exact(&mut cnt)
        .map_err(|_| Error::format(path, "truncated store at byte offset 4"))?;
    Ok((r, u32::from_le_bytes(cnt) as usize))
}

/// Reads every trace in file order.
pub fn unpack_store(path: &Path) -> Result<Vec<StoredTrace>> {
    let (mut r, count) = open_checked(path)?;
    let mut out = Vec::with_capacity(count);
    let mut offset = (MAGIC.len() + 4) as u64;
    for _ in 0..count {
        out.push(read_trace(&mut r, path, offset)?);
        offset += TRACE_BYTES as u64;
    }
    Ok(out)
}

/// Random access by id through the sidecar index.
pub fn unpack_by_ids(path: &Path, ids: &[&str]) -> Result<Vec<StoredTrace>> {
    let idx_path = index_path(path);
    let mut by_id = std::collections::HashMap::new();
    let mut idx = csv::Reader::from_path(&idx_path)
        .map_err(|e| Error::format(&idx_path, format!("cannot open index: {e}")))?;
    for record in idx.records() {
        let record = record.map_err(|e| Error::format(&idx_path, e.to_string()))?;
        let id = record
            .get(0)
            .ok_or_else(|| Error::format(&idx_path, "short index row"))?;
        let off: u64 = record
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(&idx_path, "unparseable byte_offset"))?;
        by_id.insert(id.to_string(), off);
    }

    let (mut r, _count) = open_checked(path)?;
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let &offset = by_id
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("trace_id {id} in {}", path.display())))?;
        r.seek(SeekFrom::Start(offset))?;
        let t = read_trace(&mut r, path, offset)?;
        if t.trace_id != id {
            return Err(Error::format(
                path,
                format!("index points at `{}` but store holds `{}`", id, t.trace_id),
            ));
        }
        out.push(t);
    }
    Ok(out)
}
