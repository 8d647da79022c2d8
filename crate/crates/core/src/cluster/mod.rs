//! Label vocabulary clustering: distance matrix, DBSCAN, representative
//! election and threshold merging of small clusters.

mod dbscan;
mod matrix;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dbscan::{dbscan, resolve_noise, Partition, RawPartition};
pub use matrix::{build_distance_matrix, DistanceMatrix, Distances};

use crate::dataset::LabelVocabulary;
use crate::embedding::{EmbeddingStore, MIN_NORM};
use crate::error::{Error, Result};
use crate::similarity::unit_similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeAnchor {
    /// Renormalized mean of member vectors.
    #[default]
    Centroid,
    /// Vector of the cluster's representative label.
    Representative,
}

impl std::str::FromStr for MergeAnchor {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "centroid" => Ok(MergeAnchor::Centroid),
            "representative" => Ok(MergeAnchor::Representative),
            other => Err(format!("unknown merge anchor {other:?} (expected centroid|representative)")),
        }
    }
}

impl std::fmt::Display for MergeAnchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MergeAnchor::Centroid => "centroid",
            MergeAnchor::Representative => "representative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_samples: usize,
    /// Clusters with fewer members than this are merged away; 0 disables merging.
    pub merge_threshold: usize,
    pub merge_anchor: MergeAnchor,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            eps: 0.07,
            min_samples: 1,
            merge_threshold: 2,
            merge_anchor: MergeAnchor::Centroid,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.min_samples < 1 {
            return Err(Error::InvalidConfig("min_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub cluster_id: usize,
    pub representative: String,
    pub rep_frequency: u64,
    pub total_frequency: u64,
    /// Ascending byte order.
    pub members: Vec<String>,
    #[serde(skip)]
    pub centroid: Vec<f32>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub source_id: usize,
    pub target_id: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSet {
    pub params: ClusterParams,
    pub distinct_labels: usize,
    pub cluster_count: usize,
    pub clusters: Vec<Cluster>,
    pub merge_log: Vec<MergeStep>,
    #[serde(skip)]
    pub label_to_cluster: BTreeMap<String, usize>,
}

impl ClusterSet {
    pub fn cluster(&self, id: usize) -> Option<&Cluster> {
        self.clusters
            .binary_search_by_key(&id, |c| c.cluster_id)
            .ok()
            .map(|i| &self.clusters[i])
    }

    pub fn cluster_of(&self, label: &str) -> Option<&Cluster> {
        self.label_to_cluster.get(label).and_then(|&id| self.cluster(id))
    }

    pub fn representative_of(&self, label: &str) -> Option<&str> {
        self.cluster_of(label).map(|c| c.representative.as_str())
    }

    /// Anchor vector of a cluster under the given mode.
    pub fn anchor<'a>(&'a self, cluster: &'a Cluster, mode: MergeAnchor, store: &'a EmbeddingStore) -> Result<&'a [f32]> {
        match mode {
            MergeAnchor::Centroid => Ok(&cluster.centroid),
            MergeAnchor::Representative => store.label(&cluster.representative),
        }
    }

    /// `clusters.json`: pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("cluster set serializes");
        out.push(b'\n');
        out
    }

    /// `clusters.csv`: `label,cluster_id,representative`, one row per label in byte order.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "cluster_id", "representative"]).expect("in-memory write");
        for (label, id) in &self.label_to_cluster {
            let rep = self.cluster(*id).map(|c| c.representative.as_str()).unwrap_or("");
            w.write_record([label.as_str(), &id.to_string(), rep]).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Most frequent member; ties go to the smallest label in byte order.
fn pick_representative<'a>(members: impl IntoIterator<Item = &'a str>, vocab: &LabelVocabulary) -> (&'a str, u64) {
    let mut best: Option<(&str, u64)> = None;
    for m in members {
        let f = vocab.frequency(m).unwrap_or(0);
        best = match best {
            Some((bl, bf)) if bf > f || (bf == f && bl <= m) => Some((bl, bf)),
            _ => Some((m, f)),
        };
    }
    best.expect("cluster has at least one member")
}

fn normalized_or(sum: &[f64], fallback: &[f32]) -> Vec<f32> {
    let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        // members cancel out exactly; fall back to the representative direction
        return fallback.to_vec();
    }
    sum.iter().map(|v| (v / norm) as f32).collect()
}

fn member_sum(members: &[String], store: &EmbeddingStore) -> Result<Vec<f64>> {
    let mut sum = vec![0f64; store.dimension()];
    for m in members {
        for (s, v) in sum.iter_mut().zip(store.label(m)?) {
            *s += f64::from(*v);
        }
    }
    Ok(sum)
}

fn build_cluster(cluster_id: usize, mut members: Vec<String>, vocab: &LabelVocabulary, store: &EmbeddingStore) -> Result<Cluster> {
    members.sort();
    let (rep, rep_frequency) = pick_representative(members.iter().map(String::as_str), vocab);
    let representative = rep.to_owned();
    let total_frequency = members.iter().map(|m| vocab.frequency(m).unwrap_or(0)).sum();
    let centroid = normalized_or(&member_sum(&members, store)?, store.label(&representative)?);
    Ok(Cluster {
        cluster_id,
        representative,
        rep_frequency,
        total_frequency,
        members,
        centroid,
    })
}

/// Turns a partition over `labels` into clusters with representatives and centroids.
pub fn elect_representatives(
    partition: &Partition,
    labels: &[String],
    vocab: &LabelVocabulary,
    store: &EmbeddingStore,
) -> Result<Vec<Cluster>> {
    partition
        .groups()
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(id, group)| {
            let members = group.into_iter().map(|i| labels[i].clone()).collect();
            build_cluster(id, members, vocab, store)
        })
        .collect()
}

fn anchor_vector(cluster: &Cluster, mode: MergeAnchor, store: &EmbeddingStore) -> Result<Vec<f32>> {
    Ok(match mode {
        MergeAnchor::Centroid => cluster.centroid.clone(),
        MergeAnchor::Representative => store.label(&cluster.representative)?.to_vec(),
    })
}

/// Repeatedly folds the smallest under-threshold cluster into its nearest
/// neighbor (by anchor cosine distance) until none is left or one cluster remains.
///
/// Ties: smallest cluster by lowest id, nearest target by lowest id.
pub fn merge_small_clusters(
    clusters: Vec<Cluster>,
    params: &ClusterParams,
    vocab: &LabelVocabulary,
    store: &EmbeddingStore,
) -> Result<ClusterSet> {
    let mut slots: Vec<Option<Cluster>> = clusters.into_iter().map(Some).collect();
    slots.sort_by_key(|c| c.as_ref().map(|c| c.cluster_id));
    let mut sums: Vec<Vec<f64>> = slots
        .iter()
        .map(|c| member_sum(&c.as_ref().unwrap().members, store))
        .collect::<Result<_>>()?;
    let mut anchors: Vec<Vec<f32>> = slots
        .iter()
        .map(|c| anchor_vector(c.as_ref().unwrap(), params.merge_anchor, store))
        .collect::<Result<_>>()?;
    let mut active = slots.len();
    let mut merge_log = Vec::new();

    while params.merge_threshold > 0 && active >= 2 {
        let source = slots
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|c| (c.len(), c.cluster_id, i)))
            .filter(|(len, _, _)| *len < params.merge_threshold)
            .min();
        let Some((_, _, s)) = source else { break };

        let src_anchor = &anchors[s];
        let (distance, _, t) = slots
            .par_iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let c = c.as_ref()?;
                (i != s).then(|| (1.0 - unit_similarity(src_anchor, &anchors[i]), c.cluster_id, i))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("at least two active clusters");

        let src = slots[s].take().expect("source active");
        active -= 1;
        let src_sum = std::mem::take(&mut sums[s]);
        let target = slots[t].as_mut().expect("target active");
        merge_log.push(MergeStep {
            source_id: src.cluster_id,
            target_id: target.cluster_id,
            distance,
        });

        for (a, b) in sums[t].iter_mut().zip(&src_sum) {
            *a += b;
        }
        target.members.extend(src.members);
        target.members.sort();
        let (rep, rep_freq) = pick_representative(
            [target.representative.as_str(), src.representative.as_str()],
            vocab,
        );
        target.representative = rep.to_owned();
        target.rep_frequency = rep_freq;
        target.total_frequency += src.total_frequency;
        target.centroid = normalized_or(&sums[t], store.label(&target.representative)?);
        anchors[t] = anchor_vector(target, params.merge_anchor, store)?;
    }

    let clusters: Vec<Cluster> = slots.into_iter().flatten().collect();
    let label_to_cluster = clusters
        .iter()
        .flat_map(|c| c.members.iter().map(move |m| (m.clone(), c.cluster_id)))
        .collect::<BTreeMap<_, _>>();
    Ok(ClusterSet {
        params: *params,
        distinct_labels: label_to_cluster.len(),
        cluster_count: clusters.len(),
        clusters,
        merge_log,
        label_to_cluster,
    })
}

/// Pre-merge state of a pipeline run, kept for inspection and replay.
#[derive(Debug, Clone)]
pub struct ClusterStages {
    pub raw: RawPartition,
    pub partition: Partition,
    pub pre_merge: Vec<Cluster>,
}

/// Distance matrix, DBSCAN, noise resolution, election and merging.
pub fn cluster_pipeline(vocab: &LabelVocabulary, store: &EmbeddingStore, params: &ClusterParams) -> Result<ClusterSet> {
    cluster_pipeline_staged(vocab, store, params).map(|(set, _)| set)
}

pub fn cluster_pipeline_staged(
    vocab: &LabelVocabulary,
    store: &EmbeddingStore,
    params: &ClusterParams,
) -> Result<(ClusterSet, ClusterStages)> {
    params.validate()?;
    let matrix = build_distance_matrix(vocab, store)?;
    let raw = dbscan(&matrix, params.eps, params.min_samples);
    let partition = resolve_noise(&raw);
    let pre_merge = elect_representatives(&partition, matrix.labels(), vocab, store)?;
    let set = merge_small_clusters(pre_merge.clone(), params, vocab, store)?;
    tracing::info!(
        labels = vocab.total_distinct(),
        dbscan_clusters = raw.n_clusters,
        noise = raw.noise_count(),
        clusters = set.cluster_count,
        merges = set.merge_log.len(),
        "clustered vocabulary"
    );
    Ok((
        set,
        ClusterStages {
            raw,
            partition,
            pre_merge,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingTable;

    fn store_2d(labels: &[(&str, [f32; 2])]) -> EmbeddingStore {
        EmbeddingStore::from_tables(
            EmbeddingTable::from_entries(2, [("img", [1.0f32, 0.0])]).unwrap(),
            EmbeddingTable::from_entries(2, labels.iter().map(|(k, v)| (*k, *v))).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn helmet_row_elects_helmet() {
        // rep 34, total 56 across the helmet variants
        let freqs = [
            ("helmet", 34),
            ("Helmet", 6),
            ("helmets", 5),
            ("safety helmet with earmuffs", 4),
            ("Abus helmet", 3),
            ("helmet with face shield", 2),
            ("cap", 2),
        ];
        let vocab = LabelVocabulary::from_frequencies(freqs);
        assert_eq!(vocab.total_assignments(), 56);
        let labels: Vec<(&str, [f32; 2])> = freqs.iter().map(|(l, _)| (*l, [1.0, 0.1])).collect();
        let store = store_2d(&labels);
        let names: Vec<String> = vocab.labels().map(str::to_owned).collect();
        let partition = Partition {
            assignment: vec![0; names.len()],
            n_clusters: 1,
        };
        let clusters = elect_representatives(&partition, &names, &vocab, &store).unwrap();
        assert_eq!(clusters[0].representative, "helmet");
        assert_eq!(clusters[0].rep_frequency, 34);
        assert_eq!(clusters[0].total_frequency, 56);
    }

    #[test]
    fn equal_frequency_tie_prefers_uppercase() {
        let vocab = LabelVocabulary::from_frequencies([("bike", 5), ("Bike", 5)]);
        let (rep, f) = pick_representative(["bike", "Bike"], &vocab);
        assert_eq!((rep, f), ("Bike", 5));
        let (rep, _) = pick_representative(["Bike", "bike"], &vocab);
        assert_eq!(rep, "Bike");
    }

    #[test]
    fn singleton_rep_is_member() {
        let vocab = LabelVocabulary::from_frequencies([("solo", 3)]);
        let store = store_2d(&[("solo", [0.0, 1.0])]);
        let p = Partition {
            assignment: vec![0],
            n_clusters: 1,
        };
        let c = elect_representatives(&p, &["solo".to_string()], &vocab, &store).unwrap();
        assert_eq!(c[0].representative, "solo");
        assert_eq!(c[0].centroid, vec![0.0, 1.0]);
    }

    fn ten_plus_one() -> (LabelVocabulary, EmbeddingStore, Vec<Cluster>) {
        let mut labels: Vec<(String, [f32; 2])> = (0..10).map(|i| (format!("a{i}"), [1.0, i as f32 * 0.001])).collect();
        labels.push(("z".into(), [0.0, 1.0]));
        let vocab = LabelVocabulary::from_frequencies(labels.iter().map(|(l, _)| (l.clone(), 1)));
        let store = EmbeddingStore::from_tables(
            EmbeddingTable::from_entries(2, [("img", [1.0f32, 0.0])]).unwrap(),
            EmbeddingTable::from_entries(2, labels.iter().map(|(k, v)| (k.clone(), *v))).unwrap(),
        )
        .unwrap();
        let names: Vec<String> = vocab.labels().map(str::to_owned).collect();
        let assignment = names.iter().map(|n| usize::from(n == "z")).collect();
        let p = Partition {
            assignment,
            n_clusters: 2,
        };
        let clusters = elect_representatives(&p, &names, &vocab, &store).unwrap();
        (vocab, store, clusters)
    }

    #[test]
    fn singleton_merges_into_only_target() {
        let (vocab, store, clusters) = ten_plus_one();
        let params = ClusterParams {
            merge_threshold: 2,
            ..Default::default()
        };
        let set = merge_small_clusters(clusters, &params, &vocab, &store).unwrap();
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.clusters[0].len(), 11);
        assert_eq!(set.merge_log.len(), 1);
        assert_eq!((set.merge_log[0].source_id, set.merge_log[0].target_id), (1, 0));
    }

    #[test]
    fn threshold_zero_disables_merging() {
        let (vocab, store, clusters) = ten_plus_one();
        let params = ClusterParams {
            merge_threshold: 0,
            ..Default::default()
        };
        let set = merge_small_clusters(clusters.clone(), &params, &vocab, &store).unwrap();
        assert_eq!(set.clusters, clusters);
        assert!(set.merge_log.is_empty());
    }

    #[test]
    fn params_validation() {
        assert!(ClusterParams::default().validate().is_ok());
        for eps in [0.0, -1.0, f64::NAN] {
            let p = ClusterParams {
                eps,
                ..Default::default()
            };
            assert!(p.validate().is_err());
        }
        let p = ClusterParams {
            min_samples: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert_eq!("representative".parse::<MergeAnchor>(), Ok(MergeAnchor::Representative));
        assert!("median".parse::<MergeAnchor>().is_err());
    }
}
