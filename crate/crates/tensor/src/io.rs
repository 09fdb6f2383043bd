//! Binary persistence for tensors.
//!
//! Blob layout (little endian): magic `SGT1`, `u32` rank, `rank` x `u64`
//! dims, then `numel` x `f64`. A named collection is a directory with one
//! `<name>.bin` blob per entry.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SGT1";
const MAX_RANK: u32 = 8;

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a tensor blob (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: corrupt header ({detail})")]
    BadHeader { path: PathBuf, detail: String },
    #[error("{path}: truncated payload")]
    Truncated { path: PathBuf },
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_tensor<R: Read>(r: &mut R, path: &Path) -> Result<Tensor, BlobError> {
    let io_err = |source| BlobError::Io { path: path.to_path_buf(), source };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| BlobError::BadMagic { path: path.to_path_buf() })?;
    if &magic != MAGIC {
        return Err(BlobError::BadMagic { path: path.to_path_buf() });
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io_err)?;
    let rank = u32::from_le_bytes(word);
    if rank > MAX_RANK {
        return Err(BlobError::BadHeader { path: path.to_path_buf(), detail: format!("rank {rank}") });
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let mut d = [0u8; 8];
        r.read_exact(&mut d).map_err(|_| BlobError::Truncated { path: path.to_path_buf() })?;
        shape.push(u64::from_le_bytes(d) as usize);
    }
    let n: usize = shape.iter().product();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() != n * 8 {
        return Err(BlobError::Truncated { path: path.to_path_buf() });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Tensor::new(shape, data))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), BlobError> {
    let mut f = io::BufWriter::new(
        fs::File::create(path).map_err(|source| BlobError::Io { path: path.to_path_buf(), source })?,
    );
    write_tensor(&mut f, t)
        .and_then(|_| f.flush())
        .map_err(|source| BlobError::Io { path: path.to_path_buf(), source })
}

pub fn load_tensor(path: &Path) -> Result<Tensor, BlobError> {
    let f = fs::File::open(path).map_err(|source| BlobError::Io { path: path.to_path_buf(), source })?;
    read_tensor(&mut io::BufReader::new(f), path)
}

/// Writes each entry to `dir/<name>.bin`, creating `dir` if needed.
pub fn save_named(dir: &Path, items: &BTreeMap<String, Tensor>) -> Result<(), BlobError> {
    fs::create_dir_all(dir).map_err(|source| BlobError::Io { path: dir.to_path_buf(), source })?;
    for (name, t) in items {
        save_tensor(&dir.join(format!("{name}.bin")), t)?;
    }
    Ok(())
}

/// Loads every `*.bin` blob in `dir`, keyed by file stem.
pub fn load_named(dir: &Path) -> Result<BTreeMap<String, Tensor>, BlobError> {
    let io_err = |source| BlobError::Io { path: dir.to_path_buf(), source };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("bin") {
            continue;
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .expect("utf-8 blob name")
            .to_string();
        out.insert(name, load_tensor(&path)?);
    }
    Ok(out)
}
