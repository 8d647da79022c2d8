//! On-disk embedding format and the in-memory store.
//!
//! A table named `<base>` is a pair of files:
//!
//! * `<base>.bin` holds `count * dimension` little-endian `f32` values, row-major,
//!   no header;
//! * `<base>.manifest.json` holds `{"dimension", "count", "normalized", "keys"}` with
//!   `keys` in row order.
//!
//! Every vector is divided by its Euclidean norm when loaded into an
//! [`EmbeddingStore`], so downstream cosine similarity is a plain dot product.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, IngestWarning, WarningKind};
use crate::error::{EmbeddingKind, Error, Result};

/// Vectors with a norm below this are rejected at load.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub dimension: usize,
    pub count: usize,
    pub normalized: bool,
    pub keys: Vec<String>,
}

/// Resolves `<base>.bin` and `<base>.manifest.json`. A trailing `.bin` on the
/// argument is accepted and ignored.
pub fn table_paths(base: &Path) -> (PathBuf, PathBuf) {
    let s = base.as_os_str().to_string_lossy();
    let stem = s.strip_suffix(".bin").unwrap_or(&s);
    (
        PathBuf::from(format!("{stem}.bin")),
        PathBuf::from(format!("{stem}.manifest.json")),
    )
}

/// Keyed vectors of one dimension, rows kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingTable {
    /// Validates dimensions, finiteness and key uniqueness.
    pub fn from_entries<I, K, V>(dimension: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: AsRef<[f32]>,
    {
        let mut table = EmbeddingTable {
            dimension,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            normalized: false,
        };
        for (key, values) in entries {
            let key = key.into();
            let values = values.as_ref();
            if values.len() != dimension {
                return Err(Error::DimensionMismatch {
                    key,
                    expected: dimension,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { key });
            }
            if table.index.contains_key(&key) {
                return Err(Error::DuplicateKey { key });
            }
            table.index.insert(key.clone(), table.keys.len());
            table.keys.push(key);
            table.data.extend_from_slice(values);
        }
        Ok(table)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    /// Whether the rows have been scaled to unit length.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.keys
            .iter()
            .enumerate()
            .map(move |(i, k)| (k.as_str(), self.row(i)))
    }

    pub fn manifest(&self) -> EmbeddingManifest {
        EmbeddingManifest {
            dimension: self.dimension,
            count: self.keys.len(),
            normalized: self.normalized,
            keys: self.keys.clone(),
        }
    }

    /// Divides every row by its Euclidean norm (accumulated in f64).
    pub fn normalize(&mut self) -> Result<()> {
        if self.dimension == 0 {
            return Ok(());
        }
        for (i, row) in self.data.chunks_exact_mut(self.dimension).enumerate() {
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm < MIN_NORM {
                return Err(Error::ZeroVector {
                    key: self.keys[i].clone(),
                });
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        self.normalized = true;
        Ok(())
    }

    /// Multiplies every value by `factor`. The result is no longer marked normalized.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out.normalized = false;
        out
    }

    /// Writes the `.bin` + `.manifest.json` pair and returns both paths.
    pub fn write(&self, base: &Path) -> Result<(PathBuf, PathBuf)> {
        let (bin, manifest) = table_paths(base);
        if let Some(parent) = bin.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let mut json = serde_json::to_vec_pretty(&self.manifest()).map_err(|e| Error::json(&manifest, e))?;
        json.push(b'\n');
        fs::write(&manifest, json).map_err(|e| Error::io(&manifest, e))?;
        Ok((bin, manifest))
    }

    /// Reads a table exactly as stored, without normalizing.
    pub fn read(base: &Path) -> Result<Self> {
        let (bin, manifest_path) = table_paths(base);
        let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: EmbeddingManifest =
            serde_json::from_slice(&raw).map_err(|e| Error::json(&manifest_path, e))?;
        if manifest.keys.len() != manifest.count {
            return Err(Error::LengthMismatch {
                path: manifest_path,
                expected: manifest.count as u64,
                actual: manifest.keys.len() as u64,
            });
        }
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let expected = (manifest.count as u64) * (manifest.dimension as u64) * 4;
        if bytes.len() as u64 != expected {
            return Err(Error::LengthMismatch {
                path: bin,
                expected,
                actual: bytes.len() as u64,
            });
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let dim = manifest.dimension;
        let rows = manifest
            .keys
            .into_iter()
            .enumerate()
            .map(|(i, k)| (k, values[i * dim..(i + 1) * dim].to_vec()));
        let mut table = EmbeddingTable::from_entries(dim, rows)?;
        table.normalized = manifest.normalized;
        Ok(table)
    }
}

/// Validates and writes a keyed vector collection as a `.bin` + manifest pair.
pub fn write_store<I, K, V>(entries: I, dimension: usize, base: &Path, normalized: bool) -> Result<(PathBuf, PathBuf)>
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: AsRef<[f32]>,
{
    let mut table = EmbeddingTable::from_entries(dimension, entries)?;
    table.normalized = normalized;
    table.write(base)
}

/// Unit-normalized image and label vectors sharing one dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dimension: usize,
    images: EmbeddingTable,
    labels: EmbeddingTable,
    /// `normalized` flag as found in each manifest (images, labels).
    pub source_normalized: (bool, bool),
}

impl EmbeddingStore {
    /// Normalizes both tables and checks they agree on dimension.
    pub fn from_tables(mut images: EmbeddingTable, mut labels: EmbeddingTable) -> Result<Self> {
        if images.dimension() != labels.dimension() {
            return Err(Error::DimensionConflict {
                image: images.dimension(),
                label: labels.dimension(),
            });
        }
        let source_normalized = (images.normalized, labels.normalized);
        images.normalize()?;
        labels.normalize()?;
        Ok(EmbeddingStore {
            dimension: images.dimension(),
            images,
            labels,
            source_normalized,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn images(&self) -> &EmbeddingTable {
        &self.images
    }

    pub fn labels(&self) -> &EmbeddingTable {
        &self.labels
    }

    pub fn image(&self, image_id: &str) -> Result<&[f32]> {
        self.images.get(image_id).ok_or_else(|| Error::MissingEmbedding {
            kind: EmbeddingKind::Image,
            key: image_id.to_owned(),
        })
    }

    pub fn label(&self, label: &str) -> Result<&[f32]> {
        self.labels.get(label).ok_or_else(|| Error::MissingEmbedding {
            kind: EmbeddingKind::Label,
            key: label.to_owned(),
        })
    }
}

/// Loads and normalizes an image table and a label table.
pub fn load_store(image_base: &Path, label_base: &Path) -> Result<EmbeddingStore> {
    let images = EmbeddingTable::read(image_base)?;
    let labels = EmbeddingTable::read(label_base)?;
    EmbeddingStore::from_tables(images, labels)
}

/// Dataset items that have no vector in the store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub missing_images: Vec<String>,
    pub missing_labels: Vec<String>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing_images.is_empty() && self.missing_labels.is_empty()
    }

    pub fn into_error(self) -> Error {
        Error::CoverageIncomplete {
            missing_images: self.missing_images,
            missing_labels: self.missing_labels,
        }
    }
}

pub fn coverage_check(store: &EmbeddingStore, dataset: &Dataset) -> CoverageReport {
    CoverageReport {
        missing_images: dataset
            .records
            .iter()
            .filter(|r| !store.images().contains(&r.image_id))
            .map(|r| r.image_id.clone())
            .collect(),
        missing_labels: dataset
            .vocabulary
            .labels()
            .filter(|l| !store.labels().contains(l))
            .map(str::to_owned)
            .collect(),
    }
}

/// Partial mode: drops images without a vector, assignments whose label has
/// no vector, and images left with no assignments. The vocabulary is rebuilt
/// from what remains and every exclusion is appended to the warnings.
pub fn restrict_to_coverage(dataset: &Dataset, store: &EmbeddingStore) -> Result<Dataset> {
    let mut warnings = dataset.warnings.clone();
    let mut records = Vec::new();
    for record in &dataset.records {
        if !store.images().contains(&record.image_id) {
            warnings.push(IngestWarning {
                kind: WarningKind::Uncovered,
                file: record.image_path.to_string_lossy().into_owned(),
                line: None,
                message: format!("image {:?} has no embedding; excluded", record.image_id),
            });
            continue;
        }
        let mut kept = record.clone();
        kept.assignments.retain(|a| {
            let ok = store.labels().contains(&a.label);
            if !ok {
                warnings.push(IngestWarning {
                    kind: WarningKind::Uncovered,
                    file: record.image_path.to_string_lossy().into_owned(),
                    line: None,
                    message: format!("label {:?} has no embedding; assignment dropped", a.label),
                });
            }
            ok
        });
        if kept.assignments.is_empty() {
            warnings.push(IngestWarning {
                kind: WarningKind::Uncovered,
                file: record.image_path.to_string_lossy().into_owned(),
                line: None,
                message: format!("image {:?} has no covered labels; excluded", record.image_id),
            });
            continue;
        }
        records.push(kept);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(PathBuf::from("<covered subset>")));
    }
    let mut out = Dataset::from_records(records)?;
    out.warnings = warnings;
    Ok(out)
}
