//! Synthetic workloads for the criterion benches in `benches/`.

use std::collections::BTreeMap;

use labelsweep_core::{Dataset, EmbeddingStore, ImageRecord, LabelAssignment};
use labelsweep_testkit::synth::store_from;
use labelsweep_testkit::{gaussian, normalize64, random_unit, rng, to_f32};
use rand::Rng;

pub const DIM: usize = 768;

/// `n_labels` labels in groups of about five near-duplicates, plus `n_images`
/// images carrying three labels each.
pub struct Workload {
    pub dataset: Dataset,
    pub store: EmbeddingStore,
}

pub fn workload(seed: u64, n_labels: usize, n_images: usize) -> Workload {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..n_labels.div_ceil(5)).map(|_| random_unit(&mut r, DIM)).collect();
    let mut labels = BTreeMap::new();
    for i in 0..n_labels {
        let noise = gaussian(&mut r, DIM);
        let v: Vec<f64> = centers[i / 5].iter().zip(&noise).map(|(c, e)| c + 0.012 * e).collect();
        labels.insert(format!("label {i:05}"), to_f32(&normalize64(&v)));
    }
    let keys: Vec<String> = labels.keys().cloned().collect();
    let mut images = BTreeMap::new();
    let mut records = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let id = format!("img_{i:05}");
        let picks: Vec<&String> = (0..3).map(|_| &keys[r.gen_range(0..keys.len())]).collect();
        let noise = gaussian(&mut r, DIM);
        let v: Vec<f64> = labels[picks[0]].iter().zip(&noise).map(|(c, e)| f64::from(*c) + 0.03 * e).collect();
        images.insert(id.clone(), to_f32(&normalize64(&v)));
        records.push(ImageRecord {
            image_id: id.clone(),
            image_path: format!("{id}.jpg").into(),
            assignments: picks.into_iter().map(|l| LabelAssignment::new(l.clone(), "web")).collect(),
        });
    }
    // every label appears at least once
    for (i, k) in keys.iter().enumerate() {
        records[i % n_images].assignments.push(LabelAssignment::new(k.clone(), "web"));
    }
    Workload {
        dataset: Dataset::from_records(records).expect("unique ids"),
        store: store_from(&images, &labels),
    }
}
