//! The FSEG float-matrix payload and the per-segment feature table.
//!
//! Layout: 16-byte header (`b"FSEG"`, u32 row count, u32 dimension, u32
//! reserved = 0), then `rows * dim` little-endian f32 values, row-major.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::files::{read_json, write_atomic, write_json};

pub const FSEG_MAGIC: &[u8; 4] = b"FSEG";
pub const FSEG_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FloatMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FloatMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::invalid(
                "matrix",
                format!("{} values for {rows}x{dim}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix", format!("non-finite value at {i}")));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FSEG_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FSEG_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FSEG_HEADER_LEN || &bytes[..4] != FSEG_MAGIC {
            return Err(Error::invalid("FSEG payload", "missing FSEG header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (rows, dim) = (word(4), word(8));
        let body = &bytes[FSEG_HEADER_LEN..];
        if body.len() != rows * dim * 4 {
            return Err(Error::invalid(
                "FSEG payload",
                format!("{} payload bytes for {rows}x{dim}", body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, dim, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Invalid { reason, .. } => Error::Malformed {
                file: path.to_path_buf(),
                field: "payload".into(),
                reason,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Identifies a segment within a scene: frame id plus segment id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub frame: String,
    pub segment: u32,
}

/// One feature row per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<SegmentKey>,
    pub features: FloatMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureIndexFile {
    pub payload: String,
    pub dim: usize,
    pub segments: Vec<SegmentKey>,
}

impl FeatureTable {
    pub fn new(ids: Vec<SegmentKey>, features: FloatMatrix) -> Result<Self> {
        if ids.len() != features.rows {
            return Err(Error::invalid(
                "feature table",
                format!("{} ids for {} feature rows", ids.len(), features.rows),
            ));
        }
        Ok(Self { ids, features })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim
    }

    /// Keeps the rows whose keys satisfy `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(&SegmentKey) -> bool) -> Self {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (i, k) in self.ids.iter().enumerate() {
            if keep(k) {
                ids.push(k.clone());
                data.extend_from_slice(self.features.row(i));
            }
        }
        let rows = ids.len();
        Self {
            ids,
            features: FloatMatrix {
                rows,
                dim: self.features.dim,
                data,
            },
        }
    }

    /// Loads from a JSON index whose `payload` is resolved relative to it.
    pub fn load(index_path: &Path) -> Result<Self> {
        let index: FeatureIndexFile = read_json(index_path)?;
        let payload = resolve_beside(index_path, &index.payload);
        let features = FloatMatrix::load(&payload)?;
        if features.dim != index.dim {
            return Err(Error::Malformed {
                file: index_path.to_path_buf(),
                field: "dim".into(),
                reason: format!("index says {}, payload has {}", index.dim, features.dim),
            });
        }
        Self::new(index.segments, features).map_err(|e| match e {
            Error::Invalid { reason, .. } => Error::Malformed {
                file: index_path.to_path_buf(),
                field: "segments".into(),
                reason,
            },
            other => other,
        })
    }

    /// Writes the index and its payload (`<stem>.fseg` next to it).
    pub fn save(&self, index_path: &Path) -> Result<()> {
        let stem = index_path.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
        let payload = format!("{stem}.fseg");
        self.features.save(&resolve_beside(index_path, &payload))?;
        write_json(
            index_path,
            &FeatureIndexFile {
                payload,
                dim: self.features.dim,
                segments: self.ids.clone(),
            },
        )
    }
}

fn resolve_beside(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = FloatMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[..4], b"FSEG");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(b.len(), 16 + 24);
        assert_eq!(&b[36..40], &(-6.5f32).to_le_bytes());
        assert_eq!(FloatMatrix::from_bytes(&b).unwrap(), m);
        assert!(FloatMatrix::from_bytes(&b[..30]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(FloatMatrix::new(1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn table_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec![
            SegmentKey {
                frame: "a".into(),
                segment: 1,
            },
            SegmentKey {
                frame: "b".into(),
                segment: 4,
            },
        ];
        let t = FeatureTable::new(ids, FloatMatrix::new(2, 2, vec![0.5, 1.0, 2.0, 3.0]).unwrap()).unwrap();
        let path = dir.path().join("features.json");
        t.save(&path).unwrap();
        assert!(dir.path().join("features.fseg").exists());
        assert_eq!(FeatureTable::load(&path).unwrap(), t);
        assert!(FeatureTable::new(vec![], t.features.clone()).is_err());
    }
}
