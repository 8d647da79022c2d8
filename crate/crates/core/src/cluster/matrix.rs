use rayon::prelude::*;

use crate::dataset::LabelVocabulary;
use crate::embedding::EmbeddingStore;
use crate::error::Result;
use crate::similarity::unit_similarity;

/// Pairwise distances over `0..len()`.
pub trait Distances: Sync {
    fn len(&self) -> usize;

    fn distance(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Packed strict upper triangle of a symmetric cosine-distance matrix.
///
/// Row/column `i` is the `i`-th vocabulary label in ascending byte order.
/// The diagonal is implicit and always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    n: usize,
    data: Vec<f32>,
}

#[inline]
fn row_offset(n: usize, i: usize) -> usize {
    // entries before row i: sum_{r<i} (n - 1 - r)
    i * n - i * (i + 1) / 2
}

impl DistanceMatrix {
    /// Builds an unlabeled matrix from a distance function; `f` is only
    /// called with `i < j`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                data.push(f(i, j).clamp(0.0, 2.0) as f32);
            }
        }
        DistanceMatrix {
            labels: (0..n).map(|i| i.to_string()).collect(),
            n,
            data,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.data[row_offset(self.n, i) + (j - i - 1)],
            std::cmp::Ordering::Greater => self.data[row_offset(self.n, j) + (i - j - 1)],
        }
    }

    /// Packed upper-triangular storage, row-major.
    pub fn packed(&self) -> &[f32] {
        &self.data
    }
}

impl Distances for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn distance(&self, i: usize, j: usize) -> f64 {
        f64::from(self.get(i, j))
    }
}

/// `1 - e_i·e_j` over every vocabulary pair, rows computed in parallel.
pub fn build_distance_matrix(vocab: &LabelVocabulary, store: &EmbeddingStore) -> Result<DistanceMatrix> {
    let labels: Vec<String> = vocab.labels().map(str::to_owned).collect();
    let vectors = labels
        .iter()
        .map(|l| store.label(l))
        .collect::<Result<Vec<&[f32]>>>()?;
    let n = labels.len();
    let mut data = vec![0f32; n * n.saturating_sub(1) / 2];

    let mut rows: Vec<(usize, &mut [f32])> = Vec::with_capacity(n);
    let mut rest = data.as_mut_slice();
    for i in 0..n {
        let (row, tail) = rest.split_at_mut(n - 1 - i);
        rows.push((i, row));
        rest = tail;
    }
    rows.into_par_iter().for_each(|(i, row)| {
        for (k, slot) in row.iter_mut().enumerate() {
            let j = i + 1 + k;
            *slot = (1.0 - unit_similarity(vectors[i], vectors[j])).clamp(0.0, 2.0) as f32;
        }
    });

    Ok(DistanceMatrix { labels, n, data })
}
