//! Cosine primitives and per-image label diagnostics.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageRecord, LabelVocabulary};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

/// Number of weakest (image, label) pairs kept in the report.
pub const WORST_ASSIGNED_LEN: usize = 25;

/// Dot product accumulated in f64, over eight interleaved lanes so it vectorizes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += f64::from(x[l]) * f64::from(y[l]);
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Similarity of two unit vectors, clamped to [-1, 1]. Signed zero is folded to +0.
#[inline]
pub fn unit_similarity(a: &[f32], b: &[f32]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0) + 0.0
}

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            key: String::from("<operand>"),
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector {
            key: String::from("<operand>"),
        });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0) + 0.0)
}

/// `1 - cosine_similarity`, in [0, 2].
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Descending similarity, then ascending label bytes.
pub fn rank_order(a_sim: f64, a_label: &str, b_sim: f64, b_label: &str) -> Ordering {
    b_sim.total_cmp(&a_sim).then_with(|| a_label.cmp(b_label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedLabelScore {
    pub image_id: String,
    pub label: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMatch {
    pub image_id: String,
    pub ranked: Vec<LabelScore>,
}

/// One score per distinct assigned label, best first.
pub fn score_assigned(image: &ImageRecord, store: &EmbeddingStore) -> Result<Vec<AssignedLabelScore>> {
    let e = store.image(&image.image_id)?;
    let mut scores = image
        .distinct_labels()
        .into_iter()
        .map(|label| {
            Ok(AssignedLabelScore {
                image_id: image.image_id.clone(),
                label: label.to_owned(),
                similarity: unit_similarity(e, store.label(label)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| rank_order(a.similarity, &a.label, b.similarity, &b.label));
    Ok(scores)
}

/// Vocabulary label vectors packed contiguously in ascending byte order.
pub struct LabelIndex<'a> {
    labels: Vec<&'a str>,
    dimension: usize,
    data: Vec<f32>,
}

impl<'a> LabelIndex<'a> {
    pub fn new(vocab: &'a LabelVocabulary, store: &EmbeddingStore) -> Result<Self> {
        let labels: Vec<&str> = vocab.labels().collect();
        let mut data = Vec::with_capacity(labels.len() * store.dimension());
        for label in &labels {
            data.extend_from_slice(store.label(label)?);
        }
        Ok(LabelIndex {
            labels,
            dimension: store.dimension(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Exhaustive scan; returns the `k` best labels for `query`.
    pub fn top_k(&self, query: &[f32], k: usize) -> Vec<LabelScore> {
        let mut scored: Vec<(f64, usize)> = self
            .data
            .chunks_exact(self.dimension.max(1))
            .enumerate()
            .map(|(i, row)| (unit_similarity(query, row), i))
            .collect();
        // labels are byte-ordered, so index order is the label tie-break
        let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k == 0 {
            return Vec::new();
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
            .into_iter()
            .map(|(sim, i)| LabelScore {
                label: self.labels[i].to_owned(),
                sim,
            })
            .collect()
    }
}

/// Ranks the whole vocabulary against one image and keeps the best `top_k`.
pub fn best_dataset_matches(
    image: &ImageRecord,
    store: &EmbeddingStore,
    vocab: &LabelVocabulary,
    top_k: usize,
) -> Result<DatasetMatch> {
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    let index = LabelIndex::new(vocab, store)?;
    Ok(DatasetMatch {
        image_id: image.image_id.clone(),
        ranked: index.top_k(store.image(&image.image_id)?, top_k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// A vocabulary label outside the assigned set beats the best assigned one.
    ReplaceCandidate,
    /// Even the best assigned label is a poor match.
    WeakLabel,
}

impl Flag {
    pub const ALL: [Flag; 2] = [Flag::ReplaceCandidate, Flag::WeakLabel];

    pub fn as_str(self) -> &'static str {
        match self {
            Flag::ReplaceCandidate => "replace-candidate",
            Flag::WeakLabel => "weak-label",
        }
    }

    pub fn parse(s: &str) -> Option<Flag> {
        Flag::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl std::fmt::Display for Flag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds for flagging images. Neither value comes with a canonical default;
/// both are tunable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagRules {
    pub gap_threshold: f64,
    pub weak_threshold: f64,
}

impl Default for FlagRules {
    fn default() -> Self {
        FlagRules {
            gap_threshold: 0.0,
            weak_threshold: 0.2,
        }
    }
}

/// One entry of `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDiagnostics {
    pub image_id: String,
    pub assigned: Vec<LabelScore>,
    pub best_assigned: LabelScore,
    /// Top-k vocabulary matches; the first entry is the global best.
    pub best_dataset: Vec<LabelScore>,
    pub gap: f64,
    pub flags: Vec<Flag>,
}

impl ImageDiagnostics {
    pub fn top_dataset(&self) -> &LabelScore {
        &self.best_dataset[0]
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub images: Vec<ImageDiagnostics>,
    /// Lowest-scoring assigned labels over the whole corpus, weakest first.
    pub worst_assigned: Vec<AssignedLabelScore>,
    pub flag_counts: BTreeMap<Flag, usize>,
    pub rules: FlagRules,
    pub top_k: usize,
}

impl DiagnosticsReport {
    pub fn image(&self, image_id: &str) -> Option<&ImageDiagnostics> {
        self.images
            .binary_search_by(|d| d.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.images[i])
    }
}

pub fn flags_for(best_assigned: &LabelScore, top: &LabelScore, image: &ImageRecord, rules: &FlagRules) -> Vec<Flag> {
    let mut flags = Vec::new();
    let gap = top.sim - best_assigned.sim;
    if gap > rules.gap_threshold && !image.has_label(&top.label) {
        flags.push(Flag::ReplaceCandidate);
    }
    if best_assigned.sim < rules.weak_threshold {
        flags.push(Flag::WeakLabel);
    }
    flags
}

/// Scores every image against its own labels and against the whole vocabulary.
pub fn build_diagnostics(
    dataset: &Dataset,
    store: &EmbeddingStore,
    top_k: usize,
    rules: &FlagRules,
) -> Result<DiagnosticsReport> {
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    let index = LabelIndex::new(&dataset.vocabulary, store)?;
    let per_image: Vec<(ImageDiagnostics, Vec<AssignedLabelScore>)> = dataset
        .records
        .par_iter()
        .map(|record| {
            let scores = score_assigned(record, store)?;
            let assigned: Vec<LabelScore> = scores
                .iter()
                .map(|s| LabelScore {
                    label: s.label.clone(),
                    sim: s.similarity,
                })
                .collect();
            let best_assigned = assigned[0].clone();
            let best_dataset = index.top_k(store.image(&record.image_id)?, top_k);
            let flags = flags_for(&best_assigned, &best_dataset[0], record, rules);
            let diag = ImageDiagnostics {
                image_id: record.image_id.clone(),
                gap: best_dataset[0].sim - best_assigned.sim,
                assigned,
                best_assigned,
                best_dataset,
                flags,
            };
            Ok((diag, scores))
        })
        .collect::<Result<_>>()?;

    let mut images = Vec::with_capacity(per_image.len());
    let mut all_scores = Vec::new();
    for (diag, scores) in per_image {
        images.push(diag);
        all_scores.extend(scores);
    }
    all_scores.sort_by(|a, b| {
        a.similarity
            .total_cmp(&b.similarity)
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then_with(|| a.label.cmp(&b.label))
    });
    all_scores.truncate(WORST_ASSIGNED_LEN);

    let mut flag_counts: BTreeMap<Flag, usize> = Flag::ALL.iter().map(|f| (*f, 0)).collect();
    for f in images.iter().flat_map(|d| &d.flags) {
        *flag_counts.entry(*f).or_default() += 1;
    }

    Ok(DiagnosticsReport {
        images,
        worst_assigned: all_scores,
        flag_counts,
        rules: *rules,
        top_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabelAssignment;
    use crate::embedding::EmbeddingTable;

    fn store(images: &[(&str, Vec<f32>)], labels: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let dim = images[0].1.len();
        EmbeddingStore::from_tables(
            EmbeddingTable::from_entries(dim, images.iter().cloned()).unwrap(),
            EmbeddingTable::from_entries(dim, labels.iter().cloned()).unwrap(),
        )
        .unwrap()
    }

    fn record(id: &str, labels: &[&str]) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            image_path: format!("{id}.jpg").into(),
            assignments: labels.iter().map(|l| LabelAssignment::new(*l, "human")).collect(),
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn assigned_scores_sorted_and_deduplicated() {
        let s = store(
            &[("img", vec![1.0, 0.0])],
            &[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])],
        );
        let r = record("img", &["b", "a", "b"]);
        let scores = score_assigned(&r, &s).unwrap();
        let got: Vec<(&str, f64)> = scores.iter().map(|x| (x.label.as_str(), x.similarity)).collect();
        assert_eq!(got, vec![("a", 1.0), ("b", 0.0)]);

        let single = score_assigned(&record("img", &["b"]), &s).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn dataset_match_finds_identical_direction() {
        let s = store(
            &[("img", vec![0.0, 1.0, 0.0])],
            &[
                ("x", vec![1.0, 0.0, 0.0]),
                ("y", vec![0.0, 2.0, 0.0]),
                ("z", vec![0.0, 1.0, 1.0]),
            ],
        );
        let r = record("img", &["x"]);
        let vocab = LabelVocabulary::from_frequencies([("x", 1), ("y", 1), ("z", 1)]);
        let m = best_dataset_matches(&r, &s, &vocab, 3).unwrap();
        assert_eq!(m.ranked[0].label, "y");
        assert_eq!(m.ranked[0].sim, 1.0);
        let order: Vec<&str> = m.ranked.iter().map(|l| l.label.as_str()).collect();
        assert_eq!(order, vec!["y", "z", "x"]);
        assert!(best_dataset_matches(&r, &s, &vocab, 0).is_err());
    }

    #[test]
    fn ties_break_by_label_bytes() {
        let s = store(
            &[("img", vec![1.0, 0.0])],
            &[("b", vec![1.0, 1.0]), ("B", vec![1.0, 1.0]), ("a", vec![1.0, 1.0])],
        );
        let vocab = LabelVocabulary::from_frequencies([("a", 1), ("b", 1), ("B", 1)]);
        let m = best_dataset_matches(&record("img", &["a"]), &s, &vocab, 2).unwrap();
        let order: Vec<&str> = m.ranked.iter().map(|l| l.label.as_str()).collect();
        assert_eq!(order, vec!["B", "a"]);
    }

    #[test]
    fn flags() {
        // assigned sim 0.15 vs best 0.30
        let assigned = (0.15f64, (1.0f64 - 0.15 * 0.15).sqrt());
        let best = (0.30f64, (1.0f64 - 0.30 * 0.30).sqrt());
        let better = vec![best.0 as f32, -best.1 as f32];
        let s = store(
            &[("img", vec![1.0, 0.0]), ("img2", better.clone())],
            &[("assigned", vec![assigned.0 as f32, assigned.1 as f32]), ("better", better)],
        );
        let ds = Dataset::from_records(vec![record("img", &["assigned"]), record("img2", &["better"])]).unwrap();
        let rules = FlagRules {
            gap_threshold: 0.05,
            weak_threshold: 0.2,
        };
        let report = build_diagnostics(&ds, &s, 2, &rules).unwrap();
        let d = report.image("img").unwrap();
        assert_eq!(d.top_dataset().label, "better");
        assert!((d.gap - 0.15).abs() < 1e-6);
        assert_eq!(d.flags, vec![Flag::ReplaceCandidate, Flag::WeakLabel]);
        let d2 = report.image("img2").unwrap();
        assert_eq!(d2.gap, 0.0);
        assert!(d2.flags.is_empty());
        assert_eq!(report.flag_counts[&Flag::ReplaceCandidate], 1);
    }

    #[test]
    fn flag_names_round_trip() {
        for f in Flag::ALL {
            assert_eq!(Flag::parse(f.as_str()), Some(f));
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{f}\""));
        }
        assert_eq!(Flag::parse("nonsense"), None);
    }
}
