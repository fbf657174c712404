//! Sparse conditional probability tables with additive smoothing and a
//! backoff chain for unseen parent contexts.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Var;
use crate::error::{Error, Result};

type Context = Vec<u32>;

#[derive(Debug, Clone, PartialEq)]
struct Row {
    /// (child index, count), ascending by child, zero counts omitted.
    counts: Vec<(u32, u64)>,
    total: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Level {
    parents: Vec<Var>,
    /// Position of each level parent inside the full parent list.
    positions: Vec<usize>,
    rows: HashMap<Context, Row>,
}

impl Level {
    fn project(&self, ctx: &[u32]) -> Context {
        self.positions.iter().map(|&p| ctx[p]).collect()
    }
}

/// `P(child | parents)` from raw co-occurrence counts.
///
/// A context with observations uses `(count + alpha) / (total + alpha * n)`.
/// An unseen context falls through the backoff levels to the first one whose
/// projected context was observed, and to the uniform row when none was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CptRepr", into = "CptRepr")]
pub struct SparseCpt {
    child: Var,
    parents: Vec<Var>,
    child_size: usize,
    parent_sizes: Vec<usize>,
    alpha: f64,
    backoff: Vec<Vec<Var>>,
    counts: BTreeMap<Context, BTreeMap<u32, u64>>,
    levels: Vec<Level>,
}

/// Serialized form: one `[parent indices.., child index, count]` per entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CptRepr {
    pub child: Var,
    pub parents: Vec<Var>,
    pub child_size: usize,
    pub parent_sizes: Vec<usize>,
    pub alpha: f64,
    pub backoff: Vec<Vec<Var>>,
    pub entries: Vec<Vec<u64>>,
}

impl From<SparseCpt> for CptRepr {
    fn from(cpt: SparseCpt) -> Self {
        let entries = cpt
            .counts
            .iter()
            .flat_map(|(ctx, row)| {
                row.iter().map(move |(&child, &n)| {
                    let mut e: Vec<u64> = ctx.iter().map(|&i| i as u64).collect();
                    e.push(child as u64);
                    e.push(n);
                    e
                })
            })
            .collect();
        CptRepr {
            child: cpt.child,
            parents: cpt.parents,
            child_size: cpt.child_size,
            parent_sizes: cpt.parent_sizes,
            alpha: cpt.alpha,
            backoff: cpt.backoff,
            entries,
        }
    }
}

impl TryFrom<CptRepr> for SparseCpt {
    type Error = Error;

    fn try_from(r: CptRepr) -> Result<Self> {
        let width = r.parents.len() + 2;
        let mut triples = Vec::with_capacity(r.entries.len());
        for e in &r.entries {
            if e.len() != width {
                return Err(Error::Consistency(format!(
                    "CPT entry for {:?} has {} fields, expected {width}",
                    r.child,
                    e.len()
                )));
            }
            let ctx: Context = e[..r.parents.len()].iter().map(|&i| i as u32).collect();
            triples.push((ctx, e[width - 2] as u32, e[width - 1]));
        }
        SparseCpt::from_counts(r.child, r.parents, r.child_size, r.parent_sizes, r.alpha, r.backoff, triples)
    }
}

impl SparseCpt {
    pub fn from_counts(
        child: Var,
        parents: Vec<Var>,
        child_size: usize,
        parent_sizes: Vec<usize>,
        alpha: f64,
        backoff: Vec<Vec<Var>>,
        counts: impl IntoIterator<Item = (Vec<u32>, u32, u64)>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("smoothing alpha must be positive, got {alpha}")));
        }
        if child_size == 0 || parent_sizes.len() != parents.len() || parent_sizes.contains(&0) {
            return Err(Error::Consistency(format!("CPT for {child:?} has empty or mismatched domains")));
        }
        let mut table: BTreeMap<Context, BTreeMap<u32, u64>> = BTreeMap::new();
        for (ctx, c, n) in counts {
            let in_range = ctx.len() == parents.len()
                && ctx.iter().zip(&parent_sizes).all(|(&i, &s)| (i as usize) < s)
                && (c as usize) < child_size;
            if !in_range {
                return Err(Error::Consistency(format!("CPT entry {ctx:?}->{c} out of range for {child:?}")));
            }
            if n > 0 {
                *table.entry(ctx).or_default().entry(c).or_default() += n;
            }
        }

        let mut level_parents = vec![parents.clone()];
        for subset in &backoff {
            if subset.iter().any(|v| !parents.contains(v)) {
                return Err(Error::Config(format!(
                    "backoff {subset:?} is not a subset of the parents {parents:?} of {child:?}"
                )));
            }
            level_parents.push(subset.clone());
        }
        let levels = level_parents
            .into_iter()
            .map(|lp| {
                let positions: Vec<usize> = lp
                    .iter()
                    .map(|v| parents.iter().position(|p| p == v).unwrap())
                    .collect();
                let mut rows: HashMap<Context, BTreeMap<u32, u64>> = HashMap::new();
                for (ctx, row) in &table {
                    let key: Context = positions.iter().map(|&p| ctx[p]).collect();
                    let dst = rows.entry(key).or_default();
                    for (&c, &n) in row {
                        *dst.entry(c).or_default() += n;
                    }
                }
                let rows = rows
                    .into_iter()
                    .map(|(k, r)| {
                        let total = r.values().sum();
                        (
                            k,
                            Row {
                                counts: r.into_iter().collect(),
                                total,
                            },
                        )
                    })
                    .collect();
                Level {
                    parents: lp,
                    positions,
                    rows,
                }
            })
            .collect();

        Ok(SparseCpt {
            child,
            parents,
            child_size,
            parent_sizes,
            alpha,
            backoff,
            counts: table,
            levels,
        })
    }

    pub fn child(&self) -> Var {
        self.child
    }

    pub fn parents(&self) -> &[Var] {
        &self.parents
    }

    pub fn child_size(&self) -> usize {
        self.child_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn backoff(&self) -> &[Vec<Var>] {
        &self.backoff
    }

    /// Raw count for one `(context, child)` cell.
    pub fn count(&self, ctx: &[u32], child: u32) -> u64 {
        self.counts
            .get(ctx)
            .and_then(|r| r.get(&child))
            .copied()
            .unwrap_or(0)
    }

    pub fn n_entries(&self) -> usize {
        self.counts.values().map(BTreeMap::len).sum()
    }

    fn resolve(&self, ctx: &[u32]) -> Option<&Row> {
        self.levels.iter().find_map(|level| level.rows.get(&level.project(ctx)))
    }

    /// Which level serves `ctx`: 0 is the full context, `backoff.len() + 1`
    /// means the uniform fallback.
    pub fn level_for(&self, ctx: &[u32]) -> usize {
        self.levels
            .iter()
            .position(|level| level.rows.contains_key(&level.project(ctx)))
            .unwrap_or(self.levels.len())
    }

    pub fn prob(&self, ctx: &[u32], child: u32) -> f64 {
        let n = self.child_size as f64;
        match self.resolve(ctx) {
            None => 1.0 / n,
            Some(row) => {
                let c = row
                    .counts
                    .binary_search_by_key(&child, |&(k, _)| k)
                    .map(|i| row.counts[i].1)
                    .unwrap_or(0);
                (c as f64 + self.alpha) / (row.total as f64 + self.alpha * n)
            }
        }
    }

    /// Dense distribution over the child for one parent context.
    pub fn row(&self, ctx: &[u32]) -> Vec<f64> {
        let n = self.child_size;
        match self.resolve(ctx) {
            None => vec![1.0 / n as f64; n],
            Some(row) => {
                let denom = row.total as f64 + self.alpha * n as f64;
                let mut out = vec![self.alpha / denom; n];
                for &(c, k) in &row.counts {
                    out[c as usize] = (k as f64 + self.alpha) / denom;
                }
                out
            }
        }
    }

    /// Same counts, different smoothing strength.
    pub fn with_alpha(&self, alpha: f64) -> Result<SparseCpt> {
        let triples = self
            .counts
            .iter()
            .flat_map(|(ctx, row)| row.iter().map(move |(&c, &n)| (ctx.clone(), c, n)));
        SparseCpt::from_counts(
            self.child,
            self.parents.clone(),
            self.child_size,
            self.parent_sizes.clone(),
            alpha,
            self.backoff.clone(),
            triples,
        )
    }

    pub fn contexts(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        let sizes = self.parent_sizes.clone();
        let total: usize = sizes.iter().product();
        (0..total).map(move |mut flat| {
            let mut ctx = vec![0u32; sizes.len()];
            for (slot, &s) in ctx.iter_mut().zip(&sizes).rev() {
                *slot = (flat % s) as u32;
                flat /= s;
            }
            ctx
        })
    }
}
