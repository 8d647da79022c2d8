use std::collections::{BTreeMap, BTreeSet};

use labelsweep_core::cluster::{build_distance_matrix, cluster_pipeline, cluster_pipeline_staged, Distances};
use labelsweep_core::dataset::{load_dataset, write_sidecars};
use labelsweep_core::embedding::{load_store, write_store};
use labelsweep_core::sanitize::{apply_curator_decisions, run_sanitization};
use labelsweep_core::similarity::{build_diagnostics, cosine_similarity};
use labelsweep_core::{
    ClusterParams, Decision, DecisionAction, FlagRules, ImageRecord, LabelAssignment, LabelVocabulary, MergeAnchor,
};
use labelsweep_testkit::synth::{store_from, Corpus};
use labelsweep_testkit::{gaussian, random_unit, rng, to_f32};
use proptest::prelude::*;
use rand::Rng;

fn label_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        "\\PC{1,16}",
        "[a-z]{1,4}\n[a-zA-Z ,\"]{1,4}",
        "[ ,\"'A-Za-z\u{e9}\u{4e2d}]{1,12}[a-z]",
    ]
}

fn params_strategy() -> impl Strategy<Value = ClusterParams> {
    (0.005f64..0.6, 1usize..5, 0usize..6, any::<bool>()).prop_map(|(eps, min_samples, merge_threshold, rep)| {
        ClusterParams {
            eps,
            min_samples,
            merge_threshold,
            merge_anchor: if rep { MergeAnchor::Representative } else { MergeAnchor::Centroid },
        }
    })
}

/// Random labels in a low dimension so that clusters actually form.
fn random_vocab(seed: u64, n: usize, dim: usize) -> (LabelVocabulary, labelsweep_core::EmbeddingStore) {
    let mut r = rng(seed);
    let labels: BTreeMap<String, Vec<f32>> =
        (0..n).map(|i| (format!("t{i:03}"), to_f32(&random_unit(&mut r, dim)))).collect();
    let vocab = LabelVocabulary::from_frequencies(labels.keys().map(|l| (l.clone(), r.gen_range(1..50))));
    let images = [("probe".to_owned(), labels["t000"].clone())].into_iter().collect();
    (vocab, store_from(&images, &labels))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn frequencies_are_conserved(seed in any::<u64>(), n in 1usize..80) {
        let corpus = Corpus::generate(seed, n);
        let dataset = corpus.dataset();
        let assignments: usize = corpus.records.iter().map(|r| r.assignments.len()).sum();
        prop_assert_eq!(dataset.vocabulary.total_assignments(), assignments as u64);
        let set = cluster_pipeline(&dataset.vocabulary, &corpus.store(), &ClusterParams::default()).unwrap();
        let total: u64 = set.clusters.iter().map(|c| c.total_frequency).sum();
        prop_assert_eq!(total, assignments as u64);
    }

    #[test]
    fn labels_survive_sidecars_byte_exact(labels in prop::collection::vec(label_strategy(), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let record = ImageRecord {
            image_id: "img".into(),
            image_path: "img.jpg".into(),
            assignments: labels.iter().map(|l| LabelAssignment::new(l.clone(), "web")).collect(),
        };
        std::fs::write(dir.path().join("img.jpg"), b"").unwrap();
        write_sidecars(std::slice::from_ref(&record), dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back.records[0].assignments, &record.assignments);
        prop_assert!(back.warnings.is_empty());
    }

    #[test]
    fn similarity_is_symmetric(seed in any::<u64>(), dim in 1usize..300) {
        let mut r = rng(seed);
        let a = to_f32(&gaussian(&mut r, dim));
        let b = to_f32(&gaussian(&mut r, dim));
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn loaded_vectors_have_unit_norm(seed in any::<u64>(), scale in 1e-3f32..1e3) {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng(seed);
        let rows: Vec<(String, Vec<f32>)> = (0..10)
            .map(|i| (format!("k{i}"), gaussian(&mut r, 12).iter().map(|x| *x as f32 * scale).collect()))
            .collect();
        write_store(rows.clone(), 12, &dir.path().join("img"), false).unwrap();
        write_store(rows, 12, &dir.path().join("lab"), false).unwrap();
        let store = load_store(&dir.path().join("img"), &dir.path().join("lab")).unwrap();
        for (_, v) in store.labels().iter().chain(store.images().iter()) {
            let n = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn scaling_changes_no_ranking_or_flag(seed in any::<u64>(), factor in 0.01f32..500.0) {
        let corpus = Corpus::generate(seed, 30);
        let scale = |m: &BTreeMap<String, Vec<f32>>| -> BTreeMap<String, Vec<f32>> {
            m.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| x * factor).collect())).collect()
        };
        let scaled = store_from(&scale(&corpus.image_vectors), &scale(&corpus.label_vectors));
        let dataset = corpus.dataset();
        let a = build_diagnostics(&dataset, &corpus.store(), 5, &FlagRules::default()).unwrap();
        let b = build_diagnostics(&dataset, &scaled, 5, &FlagRules::default()).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            prop_assert_eq!(&x.flags, &y.flags);
            let lx: Vec<&str> = x.best_dataset.iter().map(|s| s.label.as_str()).collect();
            let ly: Vec<&str> = y.best_dataset.iter().map(|s| s.label.as_str()).collect();
            prop_assert_eq!(lx, ly);
            for (p, q) in x.best_dataset.iter().zip(&y.best_dataset) {
                prop_assert!((p.sim - q.sim).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn best_dataset_match_dominates_assigned(seed in any::<u64>()) {
        let corpus = Corpus::generate(seed, 40);
        let report = build_diagnostics(&corpus.dataset(), &corpus.store(), 3, &FlagRules::default()).unwrap();
        for d in &report.images {
            prop_assert!(d.gap >= 0.0);
            for s in &d.assigned {
                prop_assert!(d.top_dataset().sim >= s.sim);
            }
            prop_assert!(d.best_dataset.windows(2).all(|w| w[0].sim >= w[1].sim));
        }
    }

    #[test]
    fn distance_matrix_is_well_formed(seed in any::<u64>(), n in 1usize..40) {
        let (vocab, store) = random_vocab(seed, n, 6);
        let m = build_distance_matrix(&vocab, &store).unwrap();
        prop_assert_eq!(m.len(), n);
        for i in 0..n {
            prop_assert_eq!(m.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!((0.0..=2.0).contains(&m.get(i, j)));
            }
        }
    }

    #[test]
    fn larger_eps_never_adds_clusters(seed in any::<u64>(), n in 2usize..60, e1 in 0.001f64..0.8, e2 in 0.001f64..0.8) {
        let (vocab, store) = random_vocab(seed, n, 4);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let count = |eps| {
            let p = ClusterParams { eps, min_samples: 1, merge_threshold: 0, ..Default::default() };
            cluster_pipeline(&vocab, &store, &p).unwrap().cluster_count
        };
        prop_assert!(count(hi) <= count(lo));
    }

    #[test]
    fn clusters_partition_the_vocabulary(seed in any::<u64>(), n in 1usize..60, params in params_strategy()) {
        let (vocab, store) = random_vocab(seed, n, 4);
        let (set, stages) = cluster_pipeline_staged(&vocab, &store, &params).unwrap();
        let mut seen = BTreeSet::new();
        for c in &set.clusters {
            prop_assert!(!c.members.is_empty());
            for m in &c.members {
                prop_assert!(seen.insert(m.clone()), "{} in two clusters", m);
                prop_assert_eq!(set.label_to_cluster[m], c.cluster_id);
            }
            // representative stability
            prop_assert!(c.members.contains(&c.representative));
            let max = c.members.iter().map(|m| vocab.frequency(m).unwrap()).max().unwrap();
            prop_assert_eq!(c.rep_frequency, max);
            let total: u64 = c.members.iter().map(|m| vocab.frequency(m).unwrap()).sum();
            prop_assert_eq!(c.total_frequency, total);
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert!(set.cluster_count <= n);
        if set.clusters.iter().any(|c| c.members.len() > 1) {
            prop_assert!(set.cluster_count < n);
        }
        // merge termination
        prop_assert!(set.merge_log.len() < stages.pre_merge.len().max(1));
        prop_assert_eq!(stages.pre_merge.len() - set.merge_log.len(), set.cluster_count);
        if params.min_samples == 1 {
            prop_assert_eq!(stages.raw.noise_count(), 0);
        }
        if params.merge_threshold > 0 && set.cluster_count > 1 {
            prop_assert!(set.clusters.iter().all(|c| c.members.len() >= params.merge_threshold));
        }
    }

    #[test]
    fn final_labels_are_representatives_and_replay_is_idempotent(seed in any::<u64>(), picks in prop::collection::vec((0usize..40, 0usize..64, any::<bool>()), 0..10)) {
        let corpus = Corpus::generate(seed, 40);
        let dataset = corpus.dataset();
        let store = corpus.store();
        let set = cluster_pipeline(&dataset.vocabulary, &store, &ClusterParams::default()).unwrap();
        let run = run_sanitization(&dataset, &store, &set, None).unwrap();
        let reps: BTreeSet<&str> = set.clusters.iter().map(|c| c.representative.as_str()).collect();
        for r in &run.records {
            prop_assert!(reps.contains(r.final_label.as_str()));
            prop_assert!(r.candidate_representatives.iter().all(|c| c.sim <= r.similarity));
        }
        let labels: Vec<&str> = dataset.vocabulary.labels().collect();
        let decisions: Vec<Decision> = picks
            .iter()
            .map(|&(img, lab, accept)| Decision {
                image_id: format!("img_{img:04}"),
                action: if accept { DecisionAction::Accept } else { DecisionAction::Override },
                label: (!accept).then(|| labels[lab % labels.len()].to_owned()),
                timestamp: "2024-01-01T00:00:00Z".into(),
                note: None,
            })
            .collect();
        let (once, w1) = apply_curator_decisions(run.clone(), &decisions, &dataset.vocabulary, &store).unwrap();
        let (twice, w2) = apply_curator_decisions(once.clone(), &decisions, &dataset.vocabulary, &store).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(w1, w2);
        prop_assert_eq!(once.records.len(), run.records.len());
        let (none, _) = apply_curator_decisions(run.clone(), &[], &dataset.vocabulary, &store).unwrap();
        prop_assert_eq!(none, run);
    }
}
