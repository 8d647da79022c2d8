//! Per-image resolution to a single representative label, plus the curator
//! decision log that can override it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterParams, ClusterSet};
use crate::dataset::{Dataset, ImageRecord, LabelVocabulary};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::similarity::{rank_order, unit_similarity, DiagnosticsReport, Flag, FlagRules, LabelScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Argmax,
    CuratorOverride,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Argmax => "argmax",
            Provenance::CuratorOverride => "curator-override",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedRecord {
    pub image_id: String,
    /// Assigned labels in sidecar order, duplicates kept.
    pub original_labels: Vec<String>,
    /// Representatives of the assigned labels, best match first.
    pub candidate_representatives: Vec<LabelScore>,
    pub final_label: String,
    pub similarity: f64,
    pub provenance: Provenance,
    #[serde(default)]
    pub flags: Vec<Flag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SanitizedRecord {
    fn reset_to_argmax(&mut self) {
        let best = &self.candidate_representatives[0];
        self.final_label = best.label.clone();
        self.similarity = best.sim;
        self.provenance = Provenance::Argmax;
        self.note = None;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub image_count: usize,
    pub distinct_labels: usize,
    pub cluster_count: usize,
    pub final_distinct_labels: usize,
    pub flag_counts: BTreeMap<Flag, usize>,
    pub provenance_counts: BTreeMap<Provenance, usize>,
}

impl RunSummary {
    pub fn from_records(records: &[SanitizedRecord], distinct_labels: usize, cluster_count: usize) -> Self {
        let mut flag_counts: BTreeMap<Flag, usize> = Flag::ALL.iter().map(|f| (*f, 0)).collect();
        let mut provenance_counts: BTreeMap<Provenance, usize> =
            [(Provenance::Argmax, 0), (Provenance::CuratorOverride, 0)].into_iter().collect();
        for r in records {
            for f in &r.flags {
                *flag_counts.entry(*f).or_default() += 1;
            }
            *provenance_counts.entry(r.provenance).or_default() += 1;
        }
        RunSummary {
            image_count: records.len(),
            distinct_labels,
            cluster_count,
            final_distinct_labels: records.iter().map(|r| r.final_label.as_str()).collect::<BTreeSet<_>>().len(),
            flag_counts,
            provenance_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizationRun {
    pub summary: RunSummary,
    pub params: ClusterParams,
    pub rules: FlagRules,
    pub records: Vec<SanitizedRecord>,
}

impl SanitizationRun {
    pub fn record(&self, image_id: &str) -> Option<&SanitizedRecord> {
        self.records
            .binary_search_by(|r| r.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.records[i])
    }

    fn refresh_summary(&mut self) {
        self.summary = RunSummary::from_records(&self.records, self.summary.distinct_labels, self.summary.cluster_count);
    }

    /// `sanitized.csv`: `image_id,final_label,similarity,provenance`.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "final_label", "similarity", "provenance"])
            .expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.image_id.as_str(),
                r.final_label.as_str(),
                &r.similarity.to_string(),
                r.provenance.as_str(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Cluster representatives of an image's assigned labels, as a byte-ordered set.
pub fn apply_clusters(image: &ImageRecord, clusters: &ClusterSet) -> Result<Vec<String>> {
    let mut reps = BTreeSet::new();
    for label in image.distinct_labels() {
        let rep = clusters.representative_of(label).ok_or_else(|| Error::UnmappedLabel {
            image_id: image.image_id.clone(),
            label: label.to_owned(),
        })?;
        reps.insert(rep.to_owned());
    }
    Ok(reps.into_iter().collect())
}

/// Picks the candidate most similar to the image (ties by byte order).
pub fn resolve_final_label(image: &ImageRecord, candidates: &[String], store: &EmbeddingStore) -> Result<SanitizedRecord> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates(image.image_id.clone()));
    }
    let e = store.image(&image.image_id)?;
    let mut scored = candidates
        .iter()
        .map(|c| {
            Ok(LabelScore {
                label: c.clone(),
                sim: unit_similarity(e, store.label(c)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| rank_order(a.sim, &a.label, b.sim, &b.label));
    let best = scored[0].clone();
    Ok(SanitizedRecord {
        image_id: image.image_id.clone(),
        original_labels: image.assignments.iter().map(|a| a.label.clone()).collect(),
        candidate_representatives: scored,
        final_label: best.label,
        similarity: best.sim,
        provenance: Provenance::Argmax,
        flags: Vec::new(),
        note: None,
    })
}

/// Replaces labels by representatives and resolves each image to one label.
pub fn run_sanitization(
    dataset: &Dataset,
    store: &EmbeddingStore,
    clusters: &ClusterSet,
    diagnostics: Option<&DiagnosticsReport>,
) -> Result<SanitizationRun> {
    let records = dataset
        .records
        .par_iter()
        .map(|image| {
            let candidates = apply_clusters(image, clusters)?;
            let mut record = resolve_final_label(image, &candidates, store)?;
            if let Some(d) = diagnostics.and_then(|d| d.image(&image.image_id)) {
                record.flags = d.flags.clone();
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = RunSummary::from_records(&records, dataset.vocabulary.total_distinct(), clusters.cluster_count);
    Ok(SanitizationRun {
        summary,
        params: clusters.params,
        rules: diagnostics.map(|d| d.rules).unwrap_or_default(),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionAction {
    Accept,
    Override,
}

/// One line of `decisions.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub image_id: String,
    pub action: DecisionAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Strict validation used when a decision is first submitted.
pub fn check_decision(decision: &Decision, run: &SanitizationRun, vocab: &LabelVocabulary) -> Result<()> {
    if run.record(&decision.image_id).is_none() {
        return Err(Error::UnknownImage(decision.image_id.clone()));
    }
    if decision.action == DecisionAction::Override {
        match &decision.label {
            None => return Err(Error::UnknownLabel(String::new())),
            Some(l) if !vocab.contains(l) => return Err(Error::UnknownLabel(l.clone())),
            Some(_) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionIssue {
    /// References an image or label no longer in scope; skipped.
    Stale,
    /// An earlier decision for the same image was superseded.
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionWarning {
    /// Zero-based position in the log.
    pub index: usize,
    pub image_id: String,
    pub issue: DecisionIssue,
    pub message: String,
}

/// Folds the decision log over a run. Per image the last applicable decision
/// wins; stale entries are reported and skipped. Replaying the same log is idempotent.
pub fn apply_curator_decisions(
    mut run: SanitizationRun,
    decisions: &[Decision],
    vocab: &LabelVocabulary,
    store: &EmbeddingStore,
) -> Result<(SanitizationRun, Vec<DecisionWarning>)> {
    let mut warnings = Vec::new();
    let mut winner: BTreeMap<&str, (usize, &Decision)> = BTreeMap::new();
    for (index, d) in decisions.iter().enumerate() {
        if let Err(e) = check_decision(d, &run, vocab) {
            warnings.push(DecisionWarning {
                index,
                image_id: d.image_id.clone(),
                issue: DecisionIssue::Stale,
                message: e.to_string(),
            });
            continue;
        }
        if let Some((prev, _)) = winner.insert(d.image_id.as_str(), (index, d)) {
            warnings.push(DecisionWarning {
                index: prev,
                image_id: d.image_id.clone(),
                issue: DecisionIssue::Superseded,
                message: format!("superseded by decision #{index}"),
            });
        }
    }
    for w in &warnings {
        tracing::warn!(index = w.index, image_id = %w.image_id, issue = ?w.issue, "{}", w.message);
    }

    for (image_id, (_, d)) in winner {
        let i = run
            .records
            .binary_search_by(|r| r.image_id.as_str().cmp(image_id))
            .expect("checked above");
        let record = &mut run.records[i];
        match d.action {
            DecisionAction::Accept => {
                record.reset_to_argmax();
                record.note = d.note.clone();
            }
            DecisionAction::Override => {
                let label = d.label.as_deref().expect("checked above");
                record.similarity = unit_similarity(store.image(image_id)?, store.label(label)?);
                record.final_label = label.to_owned();
                record.provenance = Provenance::CuratorOverride;
                record.note = d.note.clone();
            }
        }
    }
    run.refresh_summary();
    Ok((run, warnings))
}

/// Reads `decisions.jsonl`; a missing file is an empty log.
pub fn read_decision_log(path: &Path) -> Result<Vec<Decision>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

fn decision_line(d: &Decision) -> Vec<u8> {
    let mut line = serde_json::to_vec(d).expect("decision serializes");
    line.push(b'\n');
    line
}

pub fn write_decision_log(path: &Path, decisions: &[Decision]) -> Result<()> {
    let bytes: Vec<u8> = decisions.iter().flat_map(decision_line).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Appends one decision and syncs it to disk before returning.
pub fn append_decision(path: &Path, decision: &Decision) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&decision_line(decision)).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}
