//! Density grouping over unit vectors under cosine distance.
//!
//! Points with at least `min_cluster_size` neighbours (self included) within
//! `distance_threshold` are cores. Cores within the threshold of each other
//! share a cluster (single linkage); a non-core point within reach of a core
//! joins its nearest core's cluster. Clusters lighter than `min_cluster_size`
//! are dissolved, and every remaining noise point is attached to the nearest
//! centroid afterwards.
//!
//! Identical vectors are collapsed before the quadratic neighbour pass, so
//! corpora with many repeated texts stay cheap.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{dot, EmbeddingVector};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 5;
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    pub distance_threshold: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: usize,
    pub centroid: Vec<f64>,
    pub member_count: usize,
}

/// Result of clustering one batch.
#[derive(Debug, Clone)]
pub struct Clustering {
    /// Contiguous ids `0..n`, ordered by first member in input order.
    pub categories: Vec<Category>,
    /// Final category per input; degenerate inputs get the largest category.
    pub labels: Vec<usize>,
    /// True for inputs attached only through the noise pass.
    pub noise: Vec<bool>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeps roots stable for ordering
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Index of the best centroid by cosine similarity; ties go to the smallest id.
pub fn nearest(centroids: &[Category], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let sim = dot(&c.centroid, v);
        if sim > best_sim {
            best = i;
            best_sim = sim;
        }
    }
    best
}

/// Largest category by member count, smallest id on ties.
pub fn largest(categories: &[Category]) -> usize {
    let mut best = 0;
    for (i, c) in categories.iter().enumerate() {
        if c.member_count > categories[best].member_count {
            best = i;
        }
    }
    best
}

fn mean_direction(points: &[&[f64]], weights: &[usize]) -> Vec<f64> {
    let dim = points[0].len();
    let mut acc = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(p.iter()) {
            *a += w as f64 * x;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        acc.iter_mut().for_each(|v| *v /= norm);
        acc
    } else {
        points[0].to_vec()
    }
}

pub fn cluster(vectors: &[EmbeddingVector], params: &ClusterParams) -> Result<Clustering> {
    if params.min_cluster_size == 0 {
        return Err(Error::Config("min_cluster_size must be at least 1".into()));
    }
    if !(params.distance_threshold >= 0.0 && params.distance_threshold.is_finite()) {
        return Err(Error::Config(format!(
            "distance_threshold must be a finite non-negative number, got {}",
            params.distance_threshold
        )));
    }
    let live = vectors.iter().filter(|v| !v.degenerate).count();
    if live < params.min_cluster_size {
        return Err(Error::Config(format!(
            "{live} usable vectors is fewer than min_cluster_size {}",
            params.min_cluster_size
        )));
    }

    // Collapse identical vectors; `unique` keeps first-occurrence order.
    let mut slot_of: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    let mut weight: Vec<usize> = Vec::new();
    let mut input_slot: Vec<Option<usize>> = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        if v.degenerate {
            input_slot.push(None);
            continue;
        }
        let key: Vec<u64> = v.values.iter().map(|x| x.to_bits()).collect();
        let slot = *slot_of.entry(key).or_insert_with(|| {
            unique.push(i);
            weight.push(0);
            unique.len() - 1
        });
        weight[slot] += 1;
        input_slot.push(Some(slot));
    }
    let points: Vec<&[f64]> = unique.iter().map(|&i| vectors[i].values.as_slice()).collect();
    let u = points.len();
    let min_sim = 1.0 - params.distance_threshold;
    let near = |a: usize, b: usize| a == b || dot(points[a], points[b]) >= min_sim;

    let reach: Vec<usize> = (0..u)
        .into_par_iter()
        .map(|a| (0..u).filter(|&b| near(a, b)).map(|b| weight[b]).sum())
        .collect();
    let core: Vec<bool> = reach.iter().map(|&r| r >= params.min_cluster_size).collect();
    let cores: Vec<usize> = (0..u).filter(|&a| core[a]).collect();

    let links: Vec<Vec<usize>> = cores
        .par_iter()
        .map(|&a| cores.iter().copied().filter(|&b| b > a && near(a, b)).collect())
        .collect();
    let mut sets = DisjointSet::new(u);
    for (&a, bs) in cores.iter().zip(&links) {
        for &b in bs {
            sets.union(a, b);
        }
    }

    // Border points follow their most similar core.
    let border: Vec<Option<usize>> = (0..u)
        .into_par_iter()
        .map(|a| {
            if core[a] {
                return Some(a);
            }
            let mut best: Option<(usize, f64)> = None;
            for &c in &cores {
                let sim = dot(points[a], points[c]);
                if sim >= min_sim && best.is_none_or(|(_, s)| sim > s) {
                    best = Some((c, sim));
                }
            }
            best.map(|(c, _)| c)
        })
        .collect();

    let mut root_of: Vec<Option<usize>> = border.iter().map(|b| b.map(|c| sets.find(c))).collect();
    let mut root_weight: HashMap<usize, usize> = HashMap::new();
    for (a, r) in root_of.iter().enumerate() {
        if let Some(r) = r {
            *root_weight.entry(*r).or_default() += weight[a];
        }
    }
    for r in root_of.iter_mut() {
        if let Some(root) = *r {
            if root_weight[&root] < params.min_cluster_size {
                *r = None;
            }
        }
    }

    // Number clusters by their first member.
    let mut id_of_root: HashMap<usize, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut slot_label: Vec<Option<usize>> = vec![None; u];
    for a in 0..u {
        if let Some(root) = root_of[a] {
            let id = *id_of_root.entry(root).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[id].push(a);
            slot_label[a] = Some(id);
        }
    }
    if members.is_empty() {
        members.push((0..u).collect());
        slot_label.iter_mut().for_each(|l| *l = Some(0));
    }

    let mut categories: Vec<Category> = members
        .iter()
        .enumerate()
        .map(|(id, m)| {
            let pts: Vec<&[f64]> = m.iter().map(|&a| points[a]).collect();
            let ws: Vec<usize> = m.iter().map(|&a| weight[a]).collect();
            Category {
                id,
                centroid: mean_direction(&pts, &ws),
                member_count: ws.iter().sum(),
            }
        })
        .collect();

    let mut slot_noise = vec![false; u];
    for a in 0..u {
        if slot_label[a].is_none() {
            let id = nearest(&categories, points[a]);
            slot_label[a] = Some(id);
            slot_noise[a] = true;
        }
    }
    for a in 0..u {
        if slot_noise[a] {
            categories[slot_label[a].unwrap()].member_count += weight[a];
        }
    }

    let fallback = largest(&categories);
    let labels = input_slot
        .iter()
        .map(|s| s.map_or(fallback, |s| slot_label[s].unwrap()))
        .collect();
    let noise = input_slot.iter().map(|s| s.is_some_and(|s| slot_noise[s])).collect();
    Ok(Clustering {
        categories,
        labels,
        noise,
    })
}
