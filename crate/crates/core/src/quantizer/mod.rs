//! Text quantization: embed, project, cluster, then assign new texts to the
//! nearest learned category.

pub mod cluster;
pub mod embed;
pub mod reduce;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use cluster::{Category, ClusterParams, Clustering};
pub use embed::{EmbedderConfig, EmbeddingVector};
pub use reduce::{reduce, ReducerSpec, SparseProjection};

use crate::error::{Error, Result};
use crate::text::CleanText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Observation,
    Solution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub embedder: EmbedderConfig,
    pub reduced_dim: usize,
    pub seed: u64,
    pub cluster: ClusterParams,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            embedder: EmbedderConfig::default(),
            reduced_dim: reduce::DEFAULT_REDUCED_DIM,
            seed: 0,
            cluster: ClusterParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub categories: Vec<Category>,
    pub reducer: ReducerSpec,
    pub distance: Distance,
    pub params: ClusterParams,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Consistency("codebook has no categories".into()));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if c.id != i {
                return Err(Error::Consistency(format!("category ids not contiguous at {i}")));
            }
            if c.centroid.len() != self.reducer.target_dim || c.centroid.iter().any(|x| !x.is_finite()) {
                return Err(Error::Consistency(format!("category {i} has a malformed centroid")));
            }
        }
        Ok(())
    }
}

/// A fitted quantizer for one text field. Immutable once fitted.
#[derive(Debug, Serialize, Deserialize)]
pub struct Quantizer {
    pub field: Field,
    pub embedder: EmbedderConfig,
    pub codebook: Codebook,
    #[serde(skip)]
    projection: OnceLock<SparseProjection>,
}

impl Clone for Quantizer {
    fn clone(&self) -> Self {
        Quantizer::new(self.field, self.embedder.clone(), self.codebook.clone())
    }
}

impl PartialEq for Quantizer {
    fn eq(&self, other: &Self) -> bool {
        self.field == other.field && self.embedder == other.embedder && self.codebook == other.codebook
    }
}

/// Where a text lands: its category and cosine distance to that centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub category: usize,
    pub distance: f64,
}

impl Quantizer {
    pub fn new(field: Field, embedder: EmbedderConfig, codebook: Codebook) -> Self {
        Quantizer {
            field,
            embedder,
            codebook,
            projection: OnceLock::new(),
        }
    }

    /// Embed, reduce and cluster `texts`; returns the quantizer and the
    /// clustering of the training texts.
    pub fn fit(field: Field, texts: &[CleanText], config: &QuantizerConfig) -> Result<(Quantizer, Clustering)> {
        if texts.is_empty() {
            return Err(Error::Config(format!("no {field:?} texts to fit")));
        }
        let embedded = config.embedder.embed_batch(texts)?;
        let (reduced, spec) = reduce(&embedded, config.reduced_dim, config.seed)?;
        let clustering = cluster::cluster(&reduced, &config.cluster)?;
        let codebook = Codebook {
            categories: clustering.categories.clone(),
            reducer: spec,
            distance: Distance::Cosine,
            params: config.cluster,
        };
        let quantizer = Quantizer::new(field, config.embedder.clone(), codebook);
        let _ = quantizer.projection.set(spec.build());
        Ok((quantizer, clustering))
    }

    pub fn n_categories(&self) -> usize {
        self.codebook.len()
    }

    fn projection(&self) -> &SparseProjection {
        self.projection.get_or_init(|| self.codebook.reducer.build())
    }

    pub fn reduce_one(&self, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        self.projection().project(v)
    }

    /// Nearest centroid; zero vectors go to the largest category.
    pub fn place_reduced(&self, reduced: &EmbeddingVector) -> Placement {
        let cats = &self.codebook.categories;
        if reduced.degenerate {
            let category = cluster::largest(cats);
            return Placement {
                category,
                distance: 1.0,
            };
        }
        let category = cluster::nearest(cats, &reduced.values);
        Placement {
            category,
            distance: 1.0 - embed::dot(&cats[category].centroid, &reduced.values),
        }
    }

    pub fn place_batch(&self, texts: &[CleanText]) -> Result<Vec<Placement>> {
        let embedded = self.embedder.embed_batch(texts)?;
        embedded
            .iter()
            .map(|v| Ok(self.place_reduced(&self.reduce_one(v)?)))
            .collect()
    }

    pub fn assign(&self, text: &CleanText) -> Result<usize> {
        Ok(self.place_batch(std::slice::from_ref(text))?[0].category)
    }

    pub fn assign_batch(&self, texts: &[CleanText]) -> Result<Vec<usize>> {
        Ok(self.place_batch(texts)?.into_iter().map(|p| p.category).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{clean_text, CleanConfig};

    fn corpus_texts() -> Vec<CleanText> {
        let clean = CleanConfig::default();
        let mut out = Vec::new();
        let families = [
            "brake pad worn squeal trailer",
            "door motor stuck fuse relay",
            "pantograph carbon strip cracked arcing",
            "hvac compressor tripped overheating saloon",
        ];
        for (f, base) in families.iter().enumerate() {
            for i in 0..30 {
                // occasional extra token keeps members near but not identical
                let extra = if i % 3 == 0 { format!(" unit{}", i % 7) } else { String::new() };
                let mut t = clean.clean(&format!("{base}{extra}"));
                t.source_id = Some(format!("{f}-{i}"));
                out.push(t);
            }
        }
        out
    }

    #[test]
    fn fit_recovers_text_families() {
        let texts = corpus_texts();
        let (q, clustering) = Quantizer::fit(Field::Observation, &texts, &QuantizerConfig::default()).unwrap();
        assert_eq!(q.n_categories(), 4);
        q.codebook.validate().unwrap();
        let assigned = q.assign_batch(&texts).unwrap();
        let consistent = assigned
            .iter()
            .zip(&clustering.labels)
            .zip(&clustering.noise)
            .filter(|(_, &noise)| !noise)
            .filter(|((a, b), _)| a == b)
            .count();
        let members = clustering.noise.iter().filter(|n| !**n).count();
        assert!(consistent as f64 >= 0.99 * members as f64);
        for f in 0..4 {
            let ids: Vec<_> = assigned[f * 30..(f + 1) * 30].to_vec();
            assert!(ids.iter().all(|&i| i == ids[0]));
        }
    }

    #[test]
    fn assign_is_deterministic_and_total() {
        let texts = corpus_texts();
        let (q, _) = Quantizer::fit(Field::Solution, &texts, &QuantizerConfig::default()).unwrap();
        let probe = clean_text("brake pad squeal on trailer", &Default::default(), true);
        assert_eq!(q.assign(&probe).unwrap(), q.assign(&probe).unwrap());
        let empty = clean_text("", &Default::default(), true);
        let largest = cluster::largest(&q.codebook.categories);
        assert_eq!(q.assign(&empty).unwrap(), largest);
    }

    #[test]
    fn serde_round_trip_keeps_ids() {
        let texts = corpus_texts();
        let (q, _) = Quantizer::fit(Field::Observation, &texts, &QuantizerConfig::default()).unwrap();
        let json = serde_json::to_string(&q).unwrap();
        let back: Quantizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, q);
        assert_eq!(back.assign_batch(&texts).unwrap(), q.assign_batch(&texts).unwrap());
    }
}
