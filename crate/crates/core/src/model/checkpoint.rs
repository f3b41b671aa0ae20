use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Array;
use crate::error::{Error, Result};

use super::params::ModelParams;

pub const CKPT_TAG: &str = "xspec-ckpt-v1";

/// Flat binary container of named f64 arrays: a text header listing
/// name, shape, and byte offset into the payload, then little-endian data.
pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let named = params.named();
    let mut header = String::new();
    header.push_str(CKPT_TAG);
    header.push('\n');
    let mut offset = 0usize;
    for (name, arr) in &named {
        let shape = arr
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        header.push_str(&format!("{name} shape={shape} offset={offset}\n"));
        offset += arr.numel() * 8;
    }
    header.push_str("@payload\n");
    w.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    for (_, arr) in &named {
        for v in &arr.data {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a checkpoint as (name, array) pairs in header order.
pub fn read_named(path: &Path) -> Result<Vec<(String, Array)>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let marker = b"@payload\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Checkpoint("missing @payload marker".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Checkpoint("header is not utf-8".into()))?;
    let payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    let tag = lines.next().unwrap_or("");
    if tag != CKPT_TAG {
        return Err(Error::Checkpoint(format!(
            "version mismatch: expected {CKPT_TAG}, found {tag:?}"
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let (name, shape_s, offset_s) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Checkpoint(format!("malformed header line: {line}"))),
        };
        let shape: Vec<usize> = shape_s
            .strip_prefix("shape=")
            .ok_or_else(|| Error::Checkpoint(format!("malformed shape in: {line}")))?
            .split('x')
            .map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("bad shape in: {line}"))))
            .collect::<Result<_>>()?;
        let offset: usize = offset_s
            .strip_prefix("offset=")
            .and_then(|o| o.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("malformed offset in: {line}")))?;
        let numel: usize = shape.iter().product();
        let end = offset + numel * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "array {name} extends past payload ({end} > {})",
                payload.len()
            )));
        }
        let data = payload[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name.to_string(), Array::new(shape, data)));
    }
    Ok(out)
}

/// Load a checkpoint into an existing parameter structure. Every array must
/// match by name and shape, so a config/checkpoint mismatch is caught here.
pub fn load_into(params: &mut ModelParams, path: &Path) -> Result<()> {
    let stored = read_named(path)?;
    let mut targets = params.named_mut();
    if stored.len() != targets.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} arrays, model expects {}",
            stored.len(),
            targets.len()
        )));
    }
    for ((sname, sarr), (tname, tarr)) in stored.into_iter().zip(targets.iter_mut()) {
        if &sname != tname {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: checkpoint has {sname}, model expects {tname}"
            )));
        }
        if sarr.shape != tarr.shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {sname}: checkpoint {:?}, model {:?}",
                sarr.shape, tarr.shape
            )));
        }
        **tarr = sarr;
    }
    Ok(())
}
