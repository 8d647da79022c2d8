//! Brute-force references. Nothing here calls into the engine's algorithms.

use std::collections::{BTreeMap, BTreeSet};

/// Cosine similarity with compensated summation. Products of two f32 values
/// are exact in f64, so the only rounding left is in the final division.
pub fn precise_cosine(a: &[f32], b: &[f32]) -> f64 {
    fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for v in values {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                c += (sum - t) + v;
            } else {
                c += (v - t) + sum;
            }
            sum = t;
        }
        sum + c
    }
    let ab = neumaier(a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)));
    let aa = neumaier(a.iter().map(|&x| f64::from(x) * f64::from(x)));
    let bb = neumaier(b.iter().map(|&x| f64::from(x) * f64::from(x)));
    ab / (aa.sqrt() * bb.sqrt())
}

/// Plain double loop dot product.
pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut x = x;
        while self.parent[x] != r {
            let next = self.parent[x];
            self.parent[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Components of the graph on `0..n` with an edge wherever `edge(i, j)` (i < j).
/// Component ids follow the order of each component's smallest member.
pub fn connected_components(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if edge(i, j) {
                uf.union(i, j);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    canonical(&roots)
}

/// Relabels ids by order of first appearance.
pub fn canonical<T: Ord + Clone>(assignment: &[T]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    assignment
        .iter()
        .map(|a| {
            let next = map.len();
            *map.entry(a.clone()).or_insert(next)
        })
        .collect()
}

/// Set-of-sets view of a partition.
pub fn as_sets<T: Ord + Clone>(assignment: &[T]) -> BTreeSet<BTreeSet<usize>> {
    let mut groups: BTreeMap<T, BTreeSet<usize>> = BTreeMap::new();
    for (i, a) in assignment.iter().enumerate() {
        groups.entry(a.clone()).or_default().insert(i);
    }
    groups.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceDbscan {
    pub core: Vec<bool>,
    /// Cluster per point, `None` for noise; ids in order of each cluster's
    /// smallest core point.
    pub assignment: Vec<Option<usize>>,
}

/// DBSCAN by definition rather than by expansion:
/// core points from a full neighbor count, clusters as connected components
/// of the core-core ε-graph, and each border point attached to the adjacent
/// cluster whose smallest core index is lowest.
pub fn reference_dbscan(n: usize, dist: impl Fn(usize, usize) -> f64, eps: f64, min_samples: usize) -> ReferenceDbscan {
    let near = |i: usize, j: usize| i == j || dist(i, j) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_samples)
        .collect();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if core[i] && core[j] && near(i, j) {
                uf.union(i, j);
            }
        }
    }
    // root -> cluster id, in order of smallest core point
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, _) in core.iter().enumerate().filter(|(_, c)| **c) {
        let r = uf.find(i);
        let next = ids.len();
        ids.entry(r).or_insert(next);
    }
    let assignment = (0..n)
        .map(|i| {
            if core[i] {
                Some(ids[&uf.find(i)])
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| ids[&uf.find(j)])
                    .min()
            }
        })
        .collect();
    ReferenceDbscan { core, assignment }
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = (sum_rows + sum_cols) / 2.0;
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Anchor choice for [`simulate_merges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Centroid,
    Representative,
}

/// Member sets keyed by cluster id.
pub type Groups = BTreeMap<usize, BTreeSet<String>>;

/// Step-by-step merge loop, recomputing every representative and centroid
/// from scratch each round. Returns the final groups keyed by surviving id
/// and the `(source, target)` sequence.
pub fn simulate_merges(
    groups: Vec<(usize, Vec<String>)>,
    freq: &BTreeMap<String, u64>,
    vectors: &BTreeMap<String, Vec<f32>>,
    threshold: usize,
    anchor: Anchor,
) -> (Groups, Vec<(usize, usize)>) {
    let mut live: BTreeMap<usize, BTreeSet<String>> =
        groups.into_iter().map(|(id, m)| (id, m.into_iter().collect())).collect();
    let mut steps = Vec::new();

    let rep = |members: &BTreeSet<String>| -> String {
        let max = members.iter().map(|m| freq[m]).max().unwrap();
        members.iter().find(|m| freq[*m] == max).unwrap().clone()
    };
    let unit = |v: &[f64]| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let anchor_of = |members: &BTreeSet<String>| -> Vec<f64> {
        match anchor {
            Anchor::Representative => unit(&vectors[&rep(members)].iter().map(|&x| f64::from(x)).collect::<Vec<_>>()),
            Anchor::Centroid => {
                let dim = vectors.values().next().unwrap().len();
                let mut s = vec![0.0; dim];
                for m in members {
                    let v = unit(&vectors[m].iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
                    for (a, b) in s.iter_mut().zip(v) {
                        *a += b;
                    }
                }
                unit(&s)
            }
        }
    };

    if threshold == 0 {
        return (live, steps);
    }
    while live.len() >= 2 {
        let Some((&src, _)) = live
            .iter()
            .filter(|(_, m)| m.len() < threshold)
            .min_by_key(|(id, m)| (m.len(), **id))
        else {
            break;
        };
        let a = anchor_of(&live[&src]);
        let mut best: Option<(f64, usize)> = None;
        for (&id, members) in &live {
            if id == src {
                continue;
            }
            let b = anchor_of(members);
            let d = 1.0 - a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        let (_, tgt) = best.unwrap();
        let moved = live.remove(&src).unwrap();
        live.get_mut(&tgt).unwrap().extend(moved);
        steps.push((src, tgt));
    }
    (live, steps)
}
