//! Embedding stores: a dense row-major f32 matrix of unit-norm image
//! embeddings plus per-row labels, persisted as a JSON manifest next to a
//! raw little-endian matrix file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClassId, DISTRACTOR_LABEL};
use crate::numeric;

/// Row norms must sit this close to 1.0 once a store is in memory.
pub const NORM_TOLERANCE: f64 = 1e-4;
/// The loader re-normalizes rows this far from unit norm and rejects worse.
pub const LOAD_NORM_TOLERANCE: f64 = 1e-2;
/// Rows already unit to f32 roundoff are kept bit-for-bit on load.
const SKIP_RENORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path} is not valid json: {detail}")]
    BadManifest { path: PathBuf, detail: String },
    #[error("unsupported {field} {value:?}; this reader handles f32 little-endian only")]
    UnsupportedFormat { field: &'static str, value: String },
    #[error("shape mismatch: {detail}")]
    ShapeMismatch { detail: String },
    #[error("row {row} has label {label}, outside 0..{class_count} for split {split}")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        class_count: usize,
        split: SplitTag,
    },
    #[error("row {row} has L2 norm {norm}, too far from 1.0")]
    NotNormalized { row: usize, norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Distractor,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
            SplitTag::Distractor => "distractor",
        };
        f.write_str(s)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    count: usize,
    class_count: usize,
    split_tag: SplitTag,
    dtype: String,
    byte_order: String,
    matrix: String,
    labels: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

/// In-memory store. Rows are L2-normalized; labels are class ids in
/// `0..class_count`, or [`DISTRACTOR_LABEL`] throughout a distractor split.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    class_count: usize,
    split: SplitTag,
    labels: Vec<i64>,
    data: Vec<f32>,
    class_names: Option<Vec<String>>,
}

impl EmbeddingStore {
    pub fn new(
        dim: usize,
        class_count: usize,
        split: SplitTag,
        labels: Vec<i64>,
        data: Vec<f32>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self, StoreError> {
        if dim == 0 || class_count == 0 {
            return Err(StoreError::ShapeMismatch {
                detail: format!("dim {dim} and class_count {class_count} must be positive"),
            });
        }
        if data.len() != labels.len() * dim {
            return Err(StoreError::ShapeMismatch {
                detail: format!(
                    "matrix has {} values, expected {} rows x dim {}",
                    data.len(),
                    labels.len(),
                    dim
                ),
            });
        }
        if let Some(names) = &class_names {
            if names.len() != class_count {
                return Err(StoreError::ShapeMismatch {
                    detail: format!(
                        "{} class names for class_count {class_count}",
                        names.len()
                    ),
                });
            }
        }
        for (row, label) in labels.iter().enumerate() {
            let ok = match split {
                SplitTag::Distractor => *label == DISTRACTOR_LABEL,
                _ => (0..class_count as i64).contains(label),
            };
            if !ok {
                return Err(StoreError::LabelOutOfRange {
                    row,
                    label: *label,
                    class_count,
                    split,
                });
            }
        }
        for row in 0..labels.len() {
            let norm = numeric::l2_norm_f32(&data[row * dim..(row + 1) * dim]);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(StoreError::NotNormalized { row, norm });
            }
        }
        Ok(EmbeddingStore {
            dim,
            class_count,
            split,
            labels,
            data,
            class_names,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn label(&self, index: usize) -> i64 {
        self.labels[index]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Class of a row, `None` for distractor rows.
    pub fn class_of(&self, index: usize) -> Option<ClassId> {
        let label = self.labels[index];
        (label >= 0).then_some(label as ClassId)
    }

    pub fn rows_of_class(&self, class_id: ClassId) -> Vec<usize> {
        (0..self.rows())
            .filter(|&i| self.class_of(i) == Some(class_id))
            .collect()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn matrix(&self) -> &[f32] {
        &self.data
    }

    /// Write `<stem>.json` manifest and `<stem>.f32` matrix.
    pub fn save(&self, manifest_path: &Path) -> Result<(), StoreError> {
        let matrix_name = matrix_file_name(manifest_path);
        let manifest = Manifest {
            dim: self.dim,
            count: self.rows(),
            class_count: self.class_count,
            split_tag: self.split,
            dtype: "f32".to_string(),
            byte_order: "little".to_string(),
            matrix: matrix_name.clone(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(manifest_path, json.as_bytes())?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_file(&manifest_path.with_file_name(matrix_name), &bytes)
    }

    pub fn load(manifest_path: &Path) -> Result<Self, StoreError> {
        let raw = fs::read_to_string(manifest_path).map_err(|source| StoreError::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&raw).map_err(|e| StoreError::BadManifest {
                path: manifest_path.to_path_buf(),
                detail: e.to_string(),
            })?;
        if manifest.dtype != "f32" {
            return Err(StoreError::UnsupportedFormat {
                field: "dtype",
                value: manifest.dtype,
            });
        }
        if manifest.byte_order != "little" {
            return Err(StoreError::UnsupportedFormat {
                field: "byte_order",
                value: manifest.byte_order,
            });
        }
        if manifest.labels.len() != manifest.count {
            return Err(StoreError::ShapeMismatch {
                detail: format!(
                    "manifest count {} but {} labels",
                    manifest.count,
                    manifest.labels.len()
                ),
            });
        }
        let matrix_path = manifest_path.with_file_name(&manifest.matrix);
        let bytes = fs::read(&matrix_path).map_err(|source| StoreError::Io {
            path: matrix_path.clone(),
            source,
        })?;
        let expected = manifest.count * manifest.dim * 4;
        if bytes.len() != expected {
            return Err(StoreError::ShapeMismatch {
                detail: format!(
                    "matrix file {} holds {} bytes, manifest implies {expected}",
                    matrix_path.display(),
                    bytes.len()
                ),
            });
        }
        let mut data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        for row in 0..manifest.count {
            let slice = &mut data[row * manifest.dim..(row + 1) * manifest.dim];
            let norm = numeric::l2_norm_f32(slice);
            let drift = (norm - 1.0).abs();
            if drift <= SKIP_RENORM_TOLERANCE {
                continue;
            }
            if drift > LOAD_NORM_TOLERANCE {
                return Err(StoreError::NotNormalized { row, norm });
            }
            for v in slice.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        EmbeddingStore::new(
            manifest.dim,
            manifest.class_count,
            manifest.split_tag,
            manifest.labels,
            data,
            manifest.class_names,
        )
    }
}

fn matrix_file_name(manifest_path: &Path) -> String {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "store".to_string());
    format!("{stem}.f32")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = fs::File::create(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: usize, dim: usize) -> Vec<f32> {
        // Axis-aligned unit rows keep hand reasoning easy.
        let mut data = vec![0.0; rows * dim];
        for r in 0..rows {
            data[r * dim + (r % dim)] = 1.0;
        }
        data
    }

    #[test]
    fn constructor_checks_label_range_per_split() {
        let data = unit_rows(2, 4);
        let bad = EmbeddingStore::new(4, 2, SplitTag::Train, vec![0, 2], data.clone(), None);
        assert!(matches!(bad, Err(StoreError::LabelOutOfRange { row: 1, .. })));
        let neg = EmbeddingStore::new(4, 2, SplitTag::Train, vec![0, -1], data.clone(), None);
        assert!(matches!(neg, Err(StoreError::LabelOutOfRange { .. })));
        let distractor =
            EmbeddingStore::new(4, 2, SplitTag::Distractor, vec![-1, -1], data, None).unwrap();
        assert_eq!(distractor.class_of(0), None);
    }

    #[test]
    fn constructor_rejects_unnormalized_rows() {
        let mut data = unit_rows(2, 4);
        data[0] = 0.9;
        let err = EmbeddingStore::new(4, 2, SplitTag::Train, vec![0, 1], data, None);
        assert!(matches!(err, Err(StoreError::NotNormalized { row: 0, .. })));
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.json");
        let store = EmbeddingStore::new(
            4,
            2,
            SplitTag::Test,
            vec![0, 1, 1],
            unit_rows(3, 4),
            Some(vec!["first".into(), "second".into()]),
        )
        .unwrap();
        store.save(&path).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        let a: Vec<u32> = store.matrix().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = loaded.matrix().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(loaded.labels(), store.labels());
        assert_eq!(loaded.class_names().unwrap()[1], "second");
    }

    #[test]
    fn loader_renormalizes_mild_drift_and_rejects_gross_drift() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drift.json");
        let store =
            EmbeddingStore::new(4, 1, SplitTag::Train, vec![0, 0], unit_rows(2, 4), None).unwrap();
        store.save(&path).unwrap();

        // Scale row 0 to norm 1.005: loader must bring it back to unit.
        let matrix_path = dir.path().join("drift.f32");
        let mut bytes = fs::read(&matrix_path).unwrap();
        let drifted = (1.005f32).to_le_bytes();
        bytes[..4].copy_from_slice(&drifted);
        fs::write(&matrix_path, &bytes).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        assert!((numeric::l2_norm_f32(loaded.row(0)) - 1.0).abs() < 1e-6);

        // Norm 0.9 is past the loader tolerance.
        let gross = (0.9f32).to_le_bytes();
        bytes[..4].copy_from_slice(&gross);
        fs::write(&matrix_path, &bytes).unwrap();
        assert!(matches!(
            EmbeddingStore::load(&path),
            Err(StoreError::NotNormalized { row: 0, .. })
        ));
    }

    #[test]
    fn loader_rejects_truncated_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.json");
        let store =
            EmbeddingStore::new(4, 1, SplitTag::Train, vec![0, 0], unit_rows(2, 4), None).unwrap();
        store.save(&path).unwrap();
        let matrix_path = dir.path().join("short.f32");
        let bytes = fs::read(&matrix_path).unwrap();
        fs::write(&matrix_path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            EmbeddingStore::load(&path),
            Err(StoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn loader_rejects_foreign_formats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fmt.json");
        let store =
            EmbeddingStore::new(4, 1, SplitTag::Train, vec![0], unit_rows(1, 4), None).unwrap();
        store.save(&path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"little\"", "\"big\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            EmbeddingStore::load(&path),
            Err(StoreError::UnsupportedFormat { field: "byte_order", .. })
        ));
    }

    #[test]
    fn rows_of_class_partitions_labels() {
        let store = EmbeddingStore::new(
            4,
            2,
            SplitTag::Train,
            vec![0, 1, 0, 1],
            unit_rows(4, 4),
            None,
        )
        .unwrap();
        assert_eq!(store.rows_of_class(0), vec![0, 2]);
        assert_eq!(store.rows_of_class(1), vec![1, 3]);
    }
}
