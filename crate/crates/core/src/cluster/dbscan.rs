//! DBSCAN over a precomputed distance matrix.
//!
//! Conventions:
//! * a point's ε-neighborhood includes the point itself, and membership is
//!   `distance <= eps`;
//! * a point is core iff its neighborhood holds at least `min_samples` points;
//! * seeds are visited in ascending index order and clusters are expanded
//!   breadth-first with neighbors in ascending order, so a border point
//!   belongs to the first cluster that reaches it.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::Serialize;

use super::matrix::Distances;

/// DBSCAN output before noise resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RawPartition {
    /// Cluster id per point, `None` for noise. Ids are dense and follow
    /// creation order.
    pub assignment: Vec<Option<usize>>,
    pub core: Vec<bool>,
    pub n_clusters: usize,
}

impl RawPartition {
    pub fn noise_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }
}

/// Noise-free partition: every point has exactly one cluster id in `0..n_clusters`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub n_clusters: usize,
}

impl Partition {
    /// Member indices per cluster id, ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_clusters];
        for (point, &c) in self.assignment.iter().enumerate() {
            groups[c].push(point);
        }
        groups
    }
}

fn neighbors<D: Distances + ?Sized>(d: &D, p: usize, eps: f64) -> impl Iterator<Item = usize> + '_ {
    (0..d.len()).filter(move |&q| d.distance(p, q) <= eps)
}

pub fn dbscan<D: Distances + ?Sized>(d: &D, eps: f64, min_samples: usize) -> RawPartition {
    let n = d.len();
    let core: Vec<bool> = if min_samples <= 1 {
        vec![true; n]
    } else {
        (0..n)
            .into_par_iter()
            .map(|p| neighbors(d, p, eps).take(min_samples).count() >= min_samples)
            .collect()
    };

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || assignment[seed].is_some() {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        assignment[seed] = Some(id);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for q in neighbors(d, p, eps) {
                if assignment[q].is_none() {
                    assignment[q] = Some(id);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }

    RawPartition {
        assignment,
        core,
        n_clusters,
    }
}

/// Gives every noise point its own fresh cluster id, in ascending point order.
pub fn resolve_noise(raw: &RawPartition) -> Partition {
    let mut next = raw.n_clusters;
    let assignment = raw
        .assignment
        .iter()
        .map(|a| {
            a.unwrap_or_else(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    Partition {
        assignment,
        n_clusters: next,
    }
}
