//! Checkpoint files: a versioned JSON header (run configuration and layer
//! dimensions) followed by named parameter blocks with explicit shapes,
//! little-endian 64-bit floats. The loader rejects unknown versions, shape
//! mismatches against the header, and non-finite payloads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"TJPD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: RunConfig,
    /// `(name, rows, cols)` of every block, in file order.
    pub dims: Vec<(String, usize, usize)>,
}

pub fn save(path: &Path, store: &ParamStore<f64>, config: &RunConfig) -> Result<()> {
    let dims: Vec<(String, usize, usize)> = store
        .ids()
        .into_iter()
        .map(|id| {
            let m = store.value(id);
            (store.name(id).to_string(), m.rows(), m.cols())
        })
        .collect();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        dims,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Format(format!("header encode: {e}")))?;

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let m = store.value(id);
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for &v in m.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore<f64>, CheckpointHeader)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unknown checkpoint format version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("header decode: {e}")))?;
    if header.format_version != version {
        return Err(Error::Format("header/container version disagree".into()));
    }

    let n_params = read_u32(&mut r)? as usize;
    if n_params != header.dims.len() {
        return Err(Error::Format(format!(
            "{n_params} blocks but header declares {}",
            header.dims.len()
        )));
    }
    let mut store = ParamStore::new();
    for (decl_name, decl_rows, decl_cols) in &header.dims {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if name != *decl_name || rows != *decl_rows || cols != *decl_cols {
            return Err(Error::Format(format!(
                "block {name} ({rows}x{cols}) does not match header ({decl_name}, {decl_rows}x{decl_cols})"
            )));
        }
        let mut values = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let matrix = Matrix::from_vec(rows, cols, values)
            .map_err(|e| Error::Format(format!("block {name}: {e}")))?;
        store.register(&name, matrix)?;
    }
    // Trailing garbage means a corrupt or mismatched file.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after parameter blocks".into()));
    }
    Ok((store, header))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
