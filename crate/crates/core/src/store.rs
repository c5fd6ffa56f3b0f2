//! Item embedding matrices: validation, normalization and the on-disk format.
//!
//! A saved matrix is three files in one directory:
//!
//! ```text
//! manifest.json   {"dims", "count", "dtype": "f32le", "values_file", "ids_file", "checksum"}
//! values.f32      count * dims little-endian f32, row-major
//! ids.txt         one UTF-8 id per line, newline-terminated
//! ```
//!
//! The checksum is `sha256:<hex>` over the raw bytes of the values file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DTYPE_F32LE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";
const VALUES_FILE: &str = "values.f32";
const IDS_FILE: &str = "ids.txt";

/// Row-major `count x dims` f32 matrix with one unique id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dims: usize,
    values: Vec<f32>,
    ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(dims: usize, values: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("dims must be positive".into()));
        }
        if values.len() != ids.len() * dims {
            return Err(Error::CountMismatch(format!(
                "{} values for {} ids of dimension {}",
                values.len(),
                ids.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { dims, values, ids })
    }

    /// Builds a matrix from rows; all rows must have the same length.
    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.len() != ids.len() {
            return Err(Error::CountMismatch(format!(
                "{} rows for {} ids",
                rows.len(),
                ids.len()
            )));
        }
        let mut values = Vec::with_capacity(rows.len() * dims);
        for row in rows {
            if row.len() != dims {
                return Err(Error::DimMismatch {
                    context: "embedding row",
                    expected: dims,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(dims.max(1), values, ids)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.values[index * self.dims..(index + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.values.chunks_exact(self.dims))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Returns the row stored under `id`.
    pub fn lookup(&self, id: &str) -> Result<&[f32]> {
        self.index_of(id)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dims: usize,
    pub count: usize,
    pub dtype: String,
    pub values_file: String,
    pub ids_file: String,
    pub checksum: String,
}

fn checksum(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// Writes `matrix` into `dir` and returns the manifest that was written.
pub fn save_embeddings(matrix: &EmbeddingMatrix, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = matrix.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut ids = String::new();
    for id in &matrix.ids {
        ids.push_str(id);
        ids.push('\n');
    }
    let manifest = Manifest {
        dims: matrix.dims,
        count: matrix.count(),
        dtype: DTYPE_F32LE.to_string(),
        values_file: VALUES_FILE.to_string(),
        ids_file: IDS_FILE.to_string(),
        checksum: checksum(&bytes),
    };
    write(&dir.join(VALUES_FILE), &bytes)?;
    write(&dir.join(IDS_FILE), ids.as_bytes())?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    write(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads and validates a matrix from its manifest. Data file paths in the
/// manifest are resolved relative to the manifest's directory.
pub fn load_embeddings(manifest_path: &Path) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::json(manifest_path.display().to_string(), e))?;
    if manifest.dtype != DTYPE_F32LE {
        return Err(Error::UnsupportedDtype(manifest.dtype));
    }
    if manifest.dims == 0 {
        return Err(Error::InvalidArgument("manifest dims must be positive".into()));
    }
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |f: &str| -> PathBuf { base.join(f) };

    let values_path = resolve(&manifest.values_file);
    let bytes = fs::read(&values_path).map_err(|e| Error::io(&values_path, e))?;
    let actual = checksum(&bytes);
    if actual != manifest.checksum {
        return Err(Error::ChecksumMismatch {
            expected: manifest.checksum,
            actual,
        });
    }

    let ids_path = resolve(&manifest.ids_file);
    let ids_text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
    let ids: Vec<String> = ids_text.lines().map(str::to_string).collect();
    if ids.len() != manifest.count {
        return Err(Error::CountMismatch(format!(
            "manifest count {} but ids file has {} lines",
            manifest.count,
            ids.len()
        )));
    }
    if bytes.len() != manifest.count * manifest.dims * 4 {
        return Err(Error::CountMismatch(format!(
            "values file has {} bytes, expected {}",
            bytes.len(),
            manifest.count * manifest.dims * 4
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(manifest.dims, values, ids)
}

/// Scales `v` to unit Euclidean norm (computed in f64).
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Degenerate("empty vector".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!("vector norm is {norm}")));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Cosine similarity as the dot product of the two normalized vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            context: "cosine",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let a = l2_normalize(a)?;
    let b = l2_normalize(b)?;
    Ok(dot(&a, &b))
}

/// Dot product with eight fixed interleaved partial sums, combined in a fixed
/// order; deterministic for a given length.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
