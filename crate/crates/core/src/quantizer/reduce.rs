//! Seeded sparse random projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::EmbeddingVector;
use crate::error::{Error, Result};

pub const DEFAULT_REDUCED_DIM: usize = 64;
/// One entry in `DENSITY_INV` is nonzero.
pub const DENSITY_INV: u32 = 16;

/// Everything needed to regenerate the projection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducerSpec {
    pub seed: u64,
    pub input_dim: usize,
    pub target_dim: usize,
    pub density_inv: u32,
}

impl ReducerSpec {
    pub fn new(seed: u64, input_dim: usize, target_dim: usize) -> Result<Self> {
        if target_dim == 0 || target_dim >= input_dim {
            return Err(Error::Argument(format!(
                "target_dim must be in 1..{input_dim}, got {target_dim}"
            )));
        }
        Ok(ReducerSpec {
            seed,
            input_dim,
            target_dim,
            density_inv: DENSITY_INV,
        })
    }

    pub fn build(&self) -> SparseProjection {
        SparseProjection::new(*self)
    }
}

/// Matrix with entries `±sqrt(s/k)` at rate `1/s`, stored by input row.
#[derive(Debug, Clone)]
pub struct SparseProjection {
    spec: ReducerSpec,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseProjection {
    pub fn new(spec: ReducerSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let s = spec.density_inv.max(1);
        let scale = (s as f64 / spec.target_dim as f64).sqrt();
        let rows = (0..spec.input_dim)
            .map(|_| {
                let mut row = Vec::new();
                for j in 0..spec.target_dim {
                    match rng.gen_range(0..2 * s) {
                        0 => row.push((j as u32, scale)),
                        1 => row.push((j as u32, -scale)),
                        _ => {}
                    }
                }
                row
            })
            .collect();
        SparseProjection { spec, rows }
    }

    pub fn spec(&self) -> &ReducerSpec {
        &self.spec
    }

    /// Linear image of `v`, not normalized.
    pub fn project_raw(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.target_dim];
        for (x, row) in v.iter().zip(&self.rows) {
            if *x == 0.0 {
                continue;
            }
            for &(j, w) in row {
                out[j as usize] += x * w;
            }
        }
        out
    }

    /// Projected and re-normalized for cosine use.
    pub fn project(&self, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        if v.dim() != self.spec.input_dim {
            return Err(Error::Argument(format!(
                "vector has dimension {}, projection expects {}",
                v.dim(),
                self.spec.input_dim
            )));
        }
        if v.degenerate {
            return Ok(EmbeddingVector::zeros(self.spec.target_dim));
        }
        Ok(EmbeddingVector::normalized(self.project_raw(&v.values)))
    }
}

/// Project a batch with a projection fixed by `seed`.
pub fn reduce(vectors: &[EmbeddingVector], target_dim: usize, seed: u64) -> Result<(Vec<EmbeddingVector>, ReducerSpec)> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Argument("cannot reduce an empty batch".into()))?;
    let input_dim = first.dim();
    if let Some(bad) = vectors.iter().position(|v| v.dim() != input_dim) {
        return Err(Error::Argument(format!(
            "dimension mismatch: vector {bad} has {} entries, expected {input_dim}",
            vectors[bad].dim()
        )));
    }
    let spec = ReducerSpec::new(seed, input_dim, target_dim)?;
    let projection = spec.build();
    let reduced = vectors.iter().map(|v| projection.project(v)).collect::<Result<Vec<_>>>()?;
    Ok((reduced, spec))
}
