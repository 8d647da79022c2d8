//! Multi-label image corpus: one image file plus one CSV sidecar per image.
//!
//! Sidecar layout (header required, RFC-4180 quoting):
//!
//! ```text
//! label,source,x1,y1,x2,y2
//! claw hammer,human,10,20,110,220
//! Hammer,web-scrape,,,,
//! ```
//!
//! Labels are kept byte-exact. The only transformation is dropping a single
//! trailing newline that survives CSV quoting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &[
    "jpg", "jpeg", "png", "bmp", "gif", "webp", "tif", "tiff",
];

const SIDECAR_HEADER: [&str; 6] = ["label", "source", "x1", "y1", "x2", "y2"];

/// Pixel-space box `(x1, y1) - (x2, y2)`; carried through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        (x1 < x2 && y1 < y2).then_some(BoundingBox { x1, y1, x2, y2 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub label: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

impl LabelAssignment {
    pub fn new(label: impl Into<String>, source: impl Into<String>) -> Self {
        LabelAssignment {
            label: label.into(),
            source: source.into(),
            bbox: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// Path relative to the dataset directory.
    pub image_path: PathBuf,
    pub assignments: Vec<LabelAssignment>,
}

impl ImageRecord {
    /// Distinct assigned labels in first-seen order.
    pub fn distinct_labels(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.assignments
            .iter()
            .map(|a| a.label.as_str())
            .filter(|l| seen.insert(*l))
            .collect()
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.assignments.iter().any(|a| a.label == label)
    }
}

/// Distinct labels with their occurrence counts across all assignments.
///
/// Keys iterate in ascending byte order, which every downstream tie-break relies on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    entries: BTreeMap<String, u64>,
}

impl LabelVocabulary {
    pub fn from_records(records: &[ImageRecord]) -> Self {
        let mut entries = BTreeMap::new();
        for a in records.iter().flat_map(|r| &r.assignments) {
            *entries.entry(a.label.clone()).or_insert(0) += 1;
        }
        LabelVocabulary { entries }
    }

    /// Builds a vocabulary directly from `(label, frequency)` pairs. Zero
    /// frequencies are dropped; repeated labels accumulate.
    pub fn from_frequencies<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (label, freq) in pairs {
            if freq > 0 {
                *entries.entry(label.into()).or_insert(0) += freq;
            }
        }
        LabelVocabulary { entries }
    }

    pub fn frequency(&self, label: &str) -> Option<u64> {
        self.entries.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    pub fn total_distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn total_assignments(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Labels in ascending byte order.
    pub fn labels(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VocabularyStats {
    pub distinct: usize,
    pub total_assignments: u64,
    pub top: Vec<(String, u64)>,
}

/// Distinct count, assignment count and the `top_n` most frequent labels
/// (frequency descending, ties by ascending byte order).
pub fn vocabulary_stats(vocab: &LabelVocabulary, top_n: usize) -> VocabularyStats {
    let mut ranked: Vec<(&str, u64)> = vocab.iter().collect();
    // BTreeMap order already gives ascending labels; a stable sort keeps it for ties.
    ranked.sort_by_key(|&(_, f)| std::cmp::Reverse(f));
    VocabularyStats {
        distinct: vocab.total_distinct(),
        total_assignments: vocab.total_assignments(),
        top: ranked
            .into_iter()
            .take(top_n)
            .map(|(l, f)| (l.to_owned(), f))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    MissingSidecar,
    OrphanSidecar,
    DuplicateImage,
    MalformedHeader,
    MalformedRow,
    EmptyRecord,
    NonUtf8Name,
    /// Item excluded because it has no embedding (partial mode).
    Uncovered,
}

/// One line of `ingest_warnings.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub kind: WarningKind,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    pub message: String,
}

/// Loaded corpus: records sorted by `image_id`, the derived vocabulary and
/// every non-fatal ingest problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub vocabulary: LabelVocabulary,
    pub warnings: Vec<IngestWarning>,
}

impl Dataset {
    /// Sorts the records by id and derives the vocabulary. Duplicate ids
    /// are rejected.
    pub fn from_records(mut records: Vec<ImageRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if let Some(w) = records.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return Err(Error::DuplicateKey {
                key: w[0].image_id.clone(),
            });
        }
        let vocabulary = LabelVocabulary::from_records(&records);
        Ok(Dataset {
            records,
            vocabulary,
            warnings: Vec::new(),
        })
    }

    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records
            .binary_search_by(|r| r.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.records[i])
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

/// Loads `<dir>/<image_id>.<ext>` + `<dir>/<image_id>.csv` pairs.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut sidecars: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut warnings = Vec::new();

    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();

    for path in paths {
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_owned(),
            None => {
                if is_image(&path) || is_csv(&path) {
                    warnings.push(IngestWarning {
                        kind: WarningKind::NonUtf8Name,
                        file: path.to_string_lossy().into_owned(),
                        line: None,
                        message: "file name is not valid UTF-8".into(),
                    });
                }
                continue;
            }
        };
        if is_csv(&path) {
            sidecars.insert(stem, path);
        } else if is_image(&path) {
            if let Some(prev) = images.get(&stem) {
                warnings.push(IngestWarning {
                    kind: WarningKind::DuplicateImage,
                    file: file_name(&path),
                    line: None,
                    message: format!("image id {stem:?} already provided by {}", file_name(prev)),
                });
                continue;
            }
            images.insert(stem, path);
        }
    }

    for (stem, path) in &sidecars {
        if !images.contains_key(stem) {
            warnings.push(IngestWarning {
                kind: WarningKind::OrphanSidecar,
                file: file_name(path),
                line: None,
                message: "sidecar has no matching image".into(),
            });
        }
    }

    let parsed: Vec<(Option<ImageRecord>, Vec<IngestWarning>)> = images
        .par_iter()
        .map(|(image_id, image_path)| match sidecars.get(image_id) {
            None => (
                None,
                vec![IngestWarning {
                    kind: WarningKind::MissingSidecar,
                    file: file_name(image_path),
                    line: None,
                    message: "image has no CSV sidecar".into(),
                }],
            ),
            Some(csv_path) => {
                let (assignments, mut warns) = parse_sidecar(csv_path);
                if assignments.is_empty() {
                    warns.push(IngestWarning {
                        kind: WarningKind::EmptyRecord,
                        file: file_name(csv_path),
                        line: None,
                        message: "no parseable label rows".into(),
                    });
                    (None, warns)
                } else {
                    let rel = PathBuf::from(image_path.file_name().unwrap_or_default());
                    let record = ImageRecord {
                        image_id: image_id.clone(),
                        image_path: rel,
                        assignments,
                    };
                    (Some(record), warns)
                }
            }
        })
        .collect();

    let mut records = Vec::new();
    for (record, warns) in parsed {
        warnings.extend(warns);
        records.extend(record);
    }

    for w in &warnings {
        tracing::warn!(file = %w.file, line = ?w.line, kind = ?w.kind, "{}", w.message);
    }

    if records.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    let mut dataset = Dataset::from_records(records)?;
    dataset.warnings = warnings;
    Ok(dataset)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

struct Columns {
    label: usize,
    source: usize,
    coords: Option<[usize; 4]>,
}

fn header_columns(headers: &csv::StringRecord) -> Option<Columns> {
    let names: Vec<String> = headers
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim().to_ascii_lowercase())
        .collect();
    let find = |name: &str| names.iter().position(|n| n == name);
    let coords = match (find("x1"), find("y1"), find("x2"), find("y2")) {
        (Some(a), Some(b), Some(c), Some(d)) => Some([a, b, c, d]),
        _ => None,
    };
    Some(Columns {
        label: find("label")?,
        source: find("source")?,
        coords,
    })
}

fn strip_trailing_newline(s: &str) -> &str {
    s.strip_suffix("\r\n")
        .or_else(|| s.strip_suffix('\n'))
        .unwrap_or(s)
}

fn parse_sidecar(path: &Path) -> (Vec<LabelAssignment>, Vec<IngestWarning>) {
    let name = file_name(path);
    let mut warnings = Vec::new();
    let mut reader = match csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
    {
        Ok(r) => r,
        Err(e) => {
            warnings.push(IngestWarning {
                kind: WarningKind::MalformedHeader,
                file: name,
                line: None,
                message: e.to_string(),
            });
            return (Vec::new(), warnings);
        }
    };
    let columns = match reader.headers().ok().and_then(header_columns) {
        Some(c) => c,
        None => {
            warnings.push(IngestWarning {
                kind: WarningKind::MalformedHeader,
                file: name,
                line: Some(1),
                message: "header must contain `label` and `source` columns".into(),
            });
            return (Vec::new(), warnings);
        }
    };

    let mut assignments = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                warnings.push(IngestWarning {
                    kind: WarningKind::MalformedRow,
                    file: name.clone(),
                    line: e.position().map(|p| p.line()),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line());
        match parse_row(&row, &columns) {
            Ok(a) => assignments.push(a),
            Err(message) => warnings.push(IngestWarning {
                kind: WarningKind::MalformedRow,
                file: name.clone(),
                line,
                message,
            }),
        }
    }
    (assignments, warnings)
}

fn parse_row(row: &csv::StringRecord, columns: &Columns) -> std::result::Result<LabelAssignment, String> {
    let label = strip_trailing_newline(row.get(columns.label).unwrap_or(""));
    if label.is_empty() {
        return Err("empty label".into());
    }
    let source = row.get(columns.source).unwrap_or("").to_owned();
    let bbox = match columns.coords {
        None => None,
        Some(idx) => {
            let raw: Vec<&str> = idx.iter().map(|&i| row.get(i).unwrap_or("").trim()).collect();
            if raw.iter().all(|s| s.is_empty()) {
                None
            } else if raw.iter().any(|s| s.is_empty()) {
                return Err("bounding box must have all four coordinates or none".into());
            } else {
                let mut v = [0.0f64; 4];
                for (slot, s) in v.iter_mut().zip(&raw) {
                    *slot = s
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| format!("invalid coordinate {s:?}"))?;
                }
                Some(
                    BoundingBox::new(v[0], v[1], v[2], v[3])
                        .ok_or_else(|| "bounding box requires x1<x2 and y1<y2".to_string())?,
                )
            }
        }
    };
    Ok(LabelAssignment {
        label: label.to_owned(),
        source,
        bbox,
    })
}

/// Writes one canonical sidecar per record into `dir`. Image files are not touched.
pub fn write_sidecars(records: &[ImageRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for record in records {
        let path = dir.join(format!("{}.csv", record.image_id));
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.clone(),
            source: e,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(SIDECAR_HEADER).map_err(csv_err)?;
        for a in &record.assignments {
            let coords: [String; 4] = match a.bbox {
                Some(b) => [b.x1, b.y1, b.x2, b.y2].map(|c| c.to_string()),
                None => Default::default(),
            };
            w.write_record([
                a.label.as_str(),
                a.source.as_str(),
                &coords[0],
                &coords[1],
                &coords[2],
                &coords[3],
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Writes `ingest_warnings.jsonl`.
pub fn write_warnings(path: &Path, warnings: &[IngestWarning]) -> Result<()> {
    let mut out = Vec::new();
    for w in warnings {
        serde_json::to_writer(&mut out, w).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn loads_fig3_style_labels() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "img1.jpg", "");
        write(
            dir.path(),
            "img1.csv",
            "label,source,x1,y1,x2,y2\nclaw hammer,human,1,2,30,40\nHammer,human,,,,\n",
        );
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].assignments.len(), 2);
        assert_eq!(ds.vocabulary.frequency("claw hammer"), Some(1));
        assert_eq!(ds.vocabulary.frequency("Hammer"), Some(1));
        assert_eq!(
            ds.records[0].assignments[0].bbox,
            BoundingBox::new(1.0, 2.0, 30.0, 40.0)
        );
        assert!(ds.warnings.is_empty());
    }

    #[test]
    fn duplicate_label_counts_twice() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.png", "");
        write(dir.path(), "a.csv", "label,source\nwrench,human\nwrench,web-scrape\n");
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.vocabulary.frequency("wrench"), Some(2));
        assert_eq!(ds.vocabulary.total_distinct(), 1);
        assert_eq!(ds.records[0].distinct_labels(), vec!["wrench"]);
    }

    #[test]
    fn helmet_frequency_across_images() {
        let dir = tempfile::tempdir().unwrap();
        // 12 + 11 + 11 = 34 assignments of "helmet"
        for (id, n) in [("a", 12), ("b", 11), ("c", 11)] {
            write(dir.path(), &format!("{id}.jpg"), "");
            let mut body = String::from("label,source\n");
            for _ in 0..n {
                body.push_str("helmet,human\n");
            }
            write(dir.path(), &format!("{id}.csv"), &body);
        }
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.vocabulary.frequency("helmet"), Some(34));
    }

    #[test]
    fn labels_are_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "x.jpg", "");
        write(
            dir.path(),
            "x.csv",
            "label,source\n\"2\"\" wood screw\",web\nSafety_Helmet ,human\n\"multi\nline\n\",human\n",
        );
        let ds = load_dataset(dir.path()).unwrap();
        let labels: Vec<&str> = ds.vocabulary.labels().collect();
        assert_eq!(labels, vec!["2\" wood screw", "Safety_Helmet ", "multi\nline"]);
    }

    #[test]
    fn missing_sidecar_and_bad_rows_are_warnings() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.jpg", "");
        write(dir.path(), "b.jpg", "");
        write(
            dir.path(),
            "a.csv",
            "label,source,x1,y1,x2,y2\nok,human,,,,\n,human,,,,\nbox,human,5,5,1,1\nhalf,human,1,2,,\n",
        );
        write(dir.path(), "orphan.csv", "label,source\nz,human\n");
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].assignments.len(), 1);
        let kinds: Vec<(WarningKind, Option<u64>)> =
            ds.warnings.iter().map(|w| (w.kind, w.line)).collect();
        assert!(kinds.contains(&(WarningKind::OrphanSidecar, None)));
        assert!(kinds.contains(&(WarningKind::MissingSidecar, None)));
        assert!(kinds.contains(&(WarningKind::MalformedRow, Some(3))));
        assert!(kinds.contains(&(WarningKind::MalformedRow, Some(4))));
        assert!(kinds.contains(&(WarningKind::MalformedRow, Some(5))));
    }

    #[test]
    fn empty_dataset_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.jpg", "");
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn stats_ordering() {
        let v = LabelVocabulary::from_frequencies([("a", 3), ("b", 1)]);
        let s = vocabulary_stats(&v, 1);
        assert_eq!((s.distinct, s.total_assignments), (2, 4));
        assert_eq!(s.top, vec![("a".to_string(), 3)]);

        let v = LabelVocabulary::from_frequencies([("y", 2), ("x", 2)]);
        let s = vocabulary_stats(&v, 2);
        let order: Vec<&str> = s.top.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(order, vec!["x", "y"]);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "p.jpg", "");
        write(dir.path(), "q.png", "");
        let records = vec![
            ImageRecord {
                image_id: "p".into(),
                image_path: "p.jpg".into(),
                assignments: vec![
                    LabelAssignment {
                        label: "2\" wood screw".into(),
                        source: "web-scrape".into(),
                        bbox: BoundingBox::new(0.5, 1.0, 20.25, 30.0),
                    },
                    LabelAssignment::new("Lathe, Information", "human"),
                ],
            },
            ImageRecord {
                image_id: "q".into(),
                image_path: "q.png".into(),
                assignments: vec![LabelAssignment::new("PPE", "human")],
            },
        ];
        write_sidecars(&records, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.records, records);
    }
}
