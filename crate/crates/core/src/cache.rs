//! Versioned binary cache for value tables, keyed by `(h, n)`.
//!
//! Layout (little-endian): magic `ALSQ`, version `u32`, `h` as `f64`, `n` as
//! `u32`, then `n + 1` rows of `points` `f64` values each. A file whose
//! length disagrees with its header is rejected.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bellman::{compute_values, BellmanError, ValueTable};
use crate::numerics::GridSpec;

pub const MAGIC: &[u8; 4] = b"ALSQ";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} is not a value-table cache")]
    BadMagic { path: PathBuf },
    #[error("{path}: cache version {found}, expected {VERSION}")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: header says h = {h}, n = {n}; wanted h = {want_h}, n = {want_n}")]
    KeyMismatch {
        path: PathBuf,
        h: f64,
        n: usize,
        want_h: f64,
        want_n: usize,
    },
    #[error(transparent)]
    Bellman(#[from] BellmanError),
}

pub type Result<T> = std::result::Result<T, CacheError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File name for the table of grid `h` and horizon `n`.
pub fn cache_file_name(grid: &GridSpec, n: usize) -> String {
    format!("values_N{}_n{}.alsq", grid.intervals(), n)
}

pub fn encode(vt: &ValueTable) -> Vec<u8> {
    let points = vt.grid().points();
    let n = vt.horizon();
    let mut buf = Vec::with_capacity(HEADER_LEN + (n + 1) * points * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&vt.grid().step().to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for row in vt.rows() {
        for v in row.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ValueTable> {
    let path_buf = || path.to_path_buf();
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(CacheError::BadMagic { path: path_buf() });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(CacheError::Version {
            path: path_buf(),
            found: version,
        });
    }
    let h = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let n = u32_at(16) as usize;
    let grid = GridSpec::new(h).map_err(BellmanError::from)?;
    let points = grid.points();
    let expected = HEADER_LEN + (n + 1) * points * 8;
    if bytes.len() != expected {
        return Err(CacheError::Truncated {
            path: path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let rows = bytes[HEADER_LEN..]
        .chunks_exact(points * 8)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok(ValueTable::from_rows(grid, rows)?)
}

pub fn write_table(path: &Path, vt: &ValueTable) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("alsq.tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&encode(vt)).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_table(path: &Path) -> Result<ValueTable> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode(&bytes, path)
}

/// Whether the table came from disk or was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Computed,
}

/// Reads the `(h, n)` table from `dir`, or computes and stores it.
/// A corrupt file is replaced.
pub fn load_or_compute(dir: &Path, grid: GridSpec, n: usize) -> Result<(ValueTable, CacheStatus)> {
    let path = dir.join(cache_file_name(&grid, n));
    if path.exists() {
        match read_table(&path) {
            Ok(vt) if vt.horizon() == n && vt.grid() == &grid => return Ok((vt, CacheStatus::Hit)),
            Ok(vt) => {
                return Err(CacheError::KeyMismatch {
                    path,
                    h: vt.grid().step(),
                    n: vt.horizon(),
                    want_h: grid.step(),
                    want_n: n,
                })
            }
            Err(CacheError::Io { path, source }) => return Err(CacheError::Io { path, source }),
            Err(_) => {}
        }
    }
    let vt = compute_values(grid, n)?;
    write_table(&path, &vt)?;
    Ok((vt, CacheStatus::Computed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(1e-2).unwrap();
        let (vt, status) = load_or_compute(dir.path(), grid, 5).unwrap();
        assert_eq!(status, CacheStatus::Computed);
        let (again, status) = load_or_compute(dir.path(), grid, 5).unwrap();
        assert_eq!(status, CacheStatus::Hit);
        assert_eq!(vt, again);
    }

    #[test]
    fn header_layout() {
        let vt = compute_values(GridSpec::new(0.1).unwrap(), 2).unwrap();
        let b = encode(&vt);
        assert_eq!(&b[..4], b"ALSQ");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), VERSION);
        assert_eq!(f64::from_le_bytes(b[8..16].try_into().unwrap()), 0.1);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(b.len(), HEADER_LEN + 3 * 11 * 8);
    }

    #[test]
    fn rejects_damaged_files() {
        let vt = compute_values(GridSpec::new(0.1).unwrap(), 2).unwrap();
        let p = Path::new("x");
        let mut b = encode(&vt);
        b.pop();
        assert!(matches!(decode(&b, p), Err(CacheError::Truncated { .. })));
        let mut b = encode(&vt);
        b[0] = b'X';
        assert!(matches!(decode(&b, p), Err(CacheError::BadMagic { .. })));
        let mut b = encode(&vt);
        b[4] = 9;
        assert!(matches!(decode(&b, p), Err(CacheError::Version { found: 9, .. })));
    }

    #[test]
    fn corrupt_cache_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(0.1).unwrap();
        fs::write(dir.path().join(cache_file_name(&grid, 3)), b"ALSQ junk").unwrap();
        let (_, status) = load_or_compute(dir.path(), grid, 3).unwrap();
        assert_eq!(status, CacheStatus::Computed);
    }
}
