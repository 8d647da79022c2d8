//! Synthetic corpora with known geometry.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use labelsweep_core::dataset::{write_sidecars, BoundingBox};
use labelsweep_core::embedding::write_store;
use labelsweep_core::{Dataset, EmbeddingStore, EmbeddingTable, ImageRecord, LabelAssignment};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::{gaussian, normalize64, random_unit, rng, to_f32};

const WORDS: &[&str] = &[
    "hammer", "wrench", "helmet", "saw", "drill", "padlock", "hinge", "pliers", "chisel", "ladder", "bucket",
    "glove", "tape", "clamp", "file", "level", "mallet", "rake", "shovel", "trowel",
];

/// Surface variants of one concept word: case, plural, compounds, a typo.
pub fn variant_forms(word: &str) -> Vec<String> {
    let mut cap = word.to_owned();
    cap[..1].make_ascii_uppercase();
    let typo = if word.len() > 3 {
        let mut t = word.to_owned();
        t.remove(word.len() / 2);
        t
    } else {
        format!("{word}{}", &word[word.len() - 1..])
    };
    let mut out = Vec::new();
    for f in [word.to_owned(), cap, format!("{word}s"), format!("safety {word}"), format!("{word} set"), typo] {
        if !out.contains(&f) {
            out.push(f);
        }
    }
    out
}

/// Labels grouped into concepts, each concept a tight cone around its own direction.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dim: usize,
    pub records: Vec<ImageRecord>,
    /// In byte order.
    pub label_vectors: BTreeMap<String, Vec<f32>>,
    pub image_vectors: BTreeMap<String, Vec<f32>>,
    pub concept_of: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub dataset: PathBuf,
    pub image_emb: PathBuf,
    pub label_emb: PathBuf,
}

impl Corpus {
    /// `n_images` images over 8 concepts in 16 dimensions, plus two loner labels
    /// far from everything (they end up as singletons and get merged).
    pub fn generate(seed: u64, n_images: usize) -> Corpus {
        let dim = 16;
        let mut r = rng(seed);
        let n_concepts = 8;
        let centers: Vec<Vec<f64>> = (0..n_concepts).map(|_| random_unit(&mut r, dim)).collect();

        let mut label_vectors = BTreeMap::new();
        let mut concept_of = BTreeMap::new();
        let mut concept_labels: Vec<Vec<String>> = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            let forms = variant_forms(WORDS[c]);
            let k = r.gen_range(3..=forms.len());
            let mut labels = Vec::new();
            for form in forms.into_iter().take(k) {
                let noise = gaussian(&mut r, dim);
                let v: Vec<f64> = center.iter().zip(&noise).map(|(a, n)| a + 0.04 * n).collect();
                label_vectors.insert(form.clone(), to_f32(&normalize64(&v)));
                concept_of.insert(form.clone(), c);
                labels.push(form);
            }
            concept_labels.push(labels);
        }
        for (i, loner) in ["2\" screw, hex", "odd \u{e9}tag\u{e8}re"].into_iter().enumerate() {
            label_vectors.insert(loner.to_owned(), to_f32(&random_unit(&mut r, dim)));
            concept_of.insert(loner.to_owned(), n_concepts + i);
            concept_labels.push(vec![loner.to_owned()]);
        }

        let mut records = Vec::with_capacity(n_images);
        let mut image_vectors = BTreeMap::new();
        for i in 0..n_images {
            let image_id = format!("img_{i:04}");
            let c = i % concept_labels.len();
            let own = &concept_labels[c];
            let n = r.gen_range(1..=own.len().min(3));
            let mut chosen: Vec<&String> = own.choose_multiple(&mut r, n).collect();
            if r.gen_bool(0.2) {
                let other = &concept_labels[(c + 1 + r.gen_range(0..concept_labels.len() - 1)) % concept_labels.len()];
                chosen.push(other.choose(&mut r).unwrap());
            }
            let mut assignments = Vec::new();
            for label in chosen {
                let source = if r.gen_bool(0.5) { "human" } else { "model" };
                let mut a = LabelAssignment::new(label.clone(), source);
                if r.gen_bool(0.3) {
                    let x1 = f64::from(r.gen_range(0..100u32));
                    let y1 = f64::from(r.gen_range(0..100u32));
                    a.bbox = BoundingBox::new(x1, y1, x1 + 12.5, y1 + 40.0);
                }
                if r.gen_bool(0.1) {
                    assignments.push(a.clone());
                }
                assignments.push(a);
            }
            let center = label_vectors[&own[0]].iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
            let noise = gaussian(&mut r, dim);
            let v: Vec<f64> = center.iter().zip(&noise).map(|(a, n)| a + 0.35 * n).collect();
            image_vectors.insert(image_id.clone(), to_f32(&normalize64(&v)));
            records.push(ImageRecord {
                image_path: PathBuf::from(format!("{image_id}.jpg")),
                image_id,
                assignments,
            });
        }
        // only labels somebody used belong to the vocabulary
        let used: BTreeSet<&str> = records
            .iter()
            .flat_map(|r| r.assignments.iter().map(|a| a.label.as_str()))
            .collect();
        label_vectors.retain(|k, _| used.contains(k.as_str()));
        concept_of.retain(|k, _| used.contains(k.as_str()));
        Corpus {
            dim,
            records,
            label_vectors,
            image_vectors,
            concept_of,
        }
    }

    /// Writes `dataset/` (empty image files plus sidecars) and the two stores
    /// under `root`. Raw vectors are multiplied by `scale` first.
    pub fn write_scaled(&self, root: &Path, scale: f32) -> CorpusPaths {
        let dataset = root.join("dataset");
        fs::create_dir_all(&dataset).unwrap();
        for r in &self.records {
            fs::write(dataset.join(&r.image_path), b"").unwrap();
        }
        write_sidecars(&self.records, &dataset).unwrap();
        let scale_all = |m: &BTreeMap<String, Vec<f32>>| -> Vec<(String, Vec<f32>)> {
            m.iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * scale).collect()))
                .collect()
        };
        let image_emb = root.join("image_emb");
        let label_emb = root.join("label_emb");
        write_store(scale_all(&self.image_vectors), self.dim, &image_emb, scale == 1.0).unwrap();
        write_store(scale_all(&self.label_vectors), self.dim, &label_emb, scale == 1.0).unwrap();
        CorpusPaths {
            dataset,
            image_emb,
            label_emb,
        }
    }

    pub fn write(&self, root: &Path) -> CorpusPaths {
        self.write_scaled(root, 1.0)
    }

    pub fn store(&self) -> EmbeddingStore {
        store_from(&self.image_vectors, &self.label_vectors)
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::from_records(self.records.clone()).unwrap()
    }

    pub fn frequencies(&self) -> BTreeMap<String, u64> {
        let mut f = BTreeMap::new();
        for a in self.records.iter().flat_map(|r| &r.assignments) {
            *f.entry(a.label.clone()).or_insert(0) += 1;
        }
        f
    }
}

/// In-memory store from keyed vectors; dimension taken from the first label.
pub fn store_from(images: &BTreeMap<String, Vec<f32>>, labels: &BTreeMap<String, Vec<f32>>) -> EmbeddingStore {
    let dim = labels.values().next().map_or(0, Vec::len);
    let images = EmbeddingTable::from_entries(dim, images.iter().map(|(k, v)| (k.clone(), v.clone()))).unwrap();
    let labels = EmbeddingTable::from_entries(dim, labels.iter().map(|(k, v)| (k.clone(), v.clone()))).unwrap();
    EmbeddingStore::from_tables(images, labels).unwrap()
}

/// 20 concepts x 5 variants in 4 dimensions.
#[derive(Debug, Clone)]
pub struct SynonymBenchmark {
    pub labels: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
    pub frequencies: Vec<u64>,
    /// Concept index per label.
    pub truth: Vec<usize>,
}

/// Concept directions are 20 vertices of a randomly rotated 24-cell, so any two
/// are at cosine distance 0.5 or more. Each concept gets 5 variants spread
/// along one tangent direction at 0, 4.5, 9, 13.5 and 18 degrees: every
/// intra-concept pair is within 1 - cos 18° ≈ 0.049 and every cross-concept pair
/// is beyond 1 - cos 24° ≈ 0.087.
pub fn synonym_benchmark(seed: u64) -> SynonymBenchmark {
    let mut r = rng(seed);
    let mut vertices = Vec::new();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..4 {
        for j in i + 1..4 {
            for (a, b) in [(s, s), (s, -s), (-s, s), (-s, -s)] {
                let mut v = [0.0; 4];
                v[i] = a;
                v[j] = b;
                vertices.push(v.to_vec());
            }
        }
    }
    vertices.shuffle(&mut r);
    let rot = random_rotation(&mut r, 4);
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    let mut frequencies = Vec::new();
    let mut truth = Vec::new();
    for (c, v) in vertices.iter().take(20).enumerate() {
        let center = mat_vec(&rot, v);
        let t = random_unit(&mut r, 4);
        let d = center.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>();
        let tangent = normalize64(&t.iter().zip(&center).map(|(ti, ci)| ti - d * ci).collect::<Vec<_>>());
        let mut forms = variant_forms(WORDS[c]);
        forms.truncate(5);
        for (k, form) in forms.into_iter().enumerate() {
            let angle = (4.5 * k as f64).to_radians();
            let v: Vec<f64> = center
                .iter()
                .zip(&tangent)
                .map(|(c, t)| angle.cos() * c + angle.sin() * t)
                .collect();
            labels.push(form);
            vectors.push(to_f32(&v));
            frequencies.push(r.gen_range(1..=60));
            truth.push(c);
        }
    }
    SynonymBenchmark {
        labels,
        vectors,
        frequencies,
        truth,
    }
}

/// Orthogonal matrix from Gram-Schmidt on a Gaussian matrix (rows).
pub fn random_rotation(r: &mut impl Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < dim {
        let mut v = gaussian(r, dim);
        for q in &rows {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(q) {
                *x -= d * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.iter().map(|x| x / n).collect());
        }
    }
    rows
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::precise_cosine;

    #[test]
    fn forms_are_distinct() {
        for w in WORDS {
            let f = variant_forms(w);
            assert!(f.len() >= 5, "{w}");
            assert_eq!(f.iter().collect::<BTreeSet<_>>().len(), f.len());
        }
    }

    #[test]
    fn benchmark_geometry() {
        for seed in 0..5 {
            let b = synonym_benchmark(seed);
            assert_eq!(b.labels.len(), 100);
            for i in 0..100 {
                for j in i + 1..100 {
                    let d = 1.0 - precise_cosine(&b.vectors[i], &b.vectors[j]);
                    if b.truth[i] == b.truth[j] {
                        assert!(d <= 0.05, "{d}");
                    } else {
                        assert!(d >= 0.08, "{d}");
                    }
                }
            }
        }
    }

    #[test]
    fn corpus_is_consistent() {
        let c = Corpus::generate(3, 60);
        for r in &c.records {
            assert!(!r.assignments.is_empty());
            for a in &r.assignments {
                assert!(c.label_vectors.contains_key(&a.label));
            }
        }
        assert_eq!(c.frequencies().len(), c.label_vectors.len());
    }
}
