//! Counterfactual recourse `P(S* | do(O=α), z, c, o, s)`.
//!
//! The solution mechanism is read as `s = argmax_j (ln p_j + g_j)` with
//! i.i.d. standard Gumbel noise `g`. Abduction samples `g` from its posterior
//! given the factual `s`, the action swaps the observation category, and the
//! prediction re-runs the argmax under the new row with the same noise.
//! Z, C and O are observed, so only the solution noise needs abduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use super::{observation_category, Evidence, RankedDistribution};
use crate::error::{Error, Result};
use crate::model::{Assignment, CbnModel, Var};

pub const MIN_GUMBEL_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `P(S | c_f, z_f, α)`: no abduction, a population-level shortcut.
    Interventional,
    /// Twin-network counterfactual under a Gumbel-max mechanism.
    GumbelMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    pub samples: usize,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            mode: NoiseMode::GumbelMax,
            samples: 10_000,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.mode == NoiseMode::GumbelMax && self.samples < MIN_GUMBEL_SAMPLES {
            return Err(Error::Argument(format!(
                "gumbel_max needs at least {MIN_GUMBEL_SAMPLES} samples, got {}",
                self.samples
            )));
        }
        Ok(())
    }
}

fn standard_gumbel() -> Gumbel<f64> {
    Gumbel::new(0.0, 1.0).expect("unit scale")
}

/// Draw `G ~ Gumbel(location)` conditioned on `G < bound`.
fn truncated_gumbel<R: Rng>(rng: &mut R, location: f64, bound: f64) -> f64 {
    let g = location + standard_gumbel().sample(rng);
    -((-bound).exp() + (-g).exp()).ln()
}

/// Monte Carlo counterfactual distribution over the solution domain.
///
/// `factual_row` is `P(S | c_f, z_f, o_f)`, `observed` the factual solution
/// and `alternative_row` is `P(S | c_f, z_f, α)`.
pub fn gumbel_counterfactual(factual_row: &[f64], observed: usize, alternative_row: &[f64], samples: usize, seed: u64) -> Vec<f64> {
    let n = factual_row.len();
    let logits: Vec<f64> = factual_row.iter().map(|p| p.ln()).collect();
    let alt_logits: Vec<f64> = alternative_row.iter().map(|p| p.ln()).collect();
    let log_total = {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gumbel = standard_gumbel();
    let mut counts = vec![0usize; n];
    let mut noise = vec![0.0; n];
    for _ in 0..samples {
        // Abduction: the maximum sits at the observed index.
        let top = log_total + gumbel.sample(&mut rng);
        for j in 0..n {
            let perturbed = if j == observed {
                top
            } else {
                truncated_gumbel(&mut rng, logits[j], top)
            };
            noise[j] = perturbed - logits[j];
        }
        // Action + prediction under the shared noise.
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..n {
            let v = alt_logits[j] + noise[j];
            if v > best_val {
                best = j;
                best_val = v;
            }
        }
        counts[best] += 1;
    }
    counts.into_iter().map(|k| k as f64 / samples as f64).collect()
}

/// Counterfactual solution distribution by index.
pub fn recourse_index(model: &CbnModel, factual: Assignment, alternative_o: usize, noise: &NoiseModel) -> Result<Vec<f64>> {
    noise.validate()?;
    if alternative_o >= model.domains.o.size() {
        return Err(Error::domain(Var::O.describe(), alternative_o.to_string()));
    }
    let alt_row = model.p_s_given(factual.c, factual.z, alternative_o);
    Ok(match noise.mode {
        NoiseMode::Interventional => alt_row,
        NoiseMode::GumbelMax => {
            let factual_row = model.p_s_given(factual.c, factual.z, factual.o);
            gumbel_counterfactual(&factual_row, factual.s, &alt_row, noise.samples, noise.seed)
        }
    })
}

/// What would the solution have been had the observation read `alt_text`,
/// given a fully observed factual case?
pub fn recourse(model: &CbnModel, factual: &Evidence, alt_text: &str, noise: &NoiseModel) -> Result<RankedDistribution> {
    let resolved = factual.resolve(model)?;
    let missing: Vec<&str> = Var::ALL
        .iter()
        .filter(|v| resolved[v.index()].is_none())
        .map(|v| v.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Argument(format!(
            "factual evidence must assign Z, C, O and S; missing {}",
            missing.join(", ")
        )));
    }
    let factual = Assignment {
        z: resolved[0].unwrap(),
        c: resolved[1].unwrap(),
        o: resolved[2].unwrap(),
        s: resolved[3].unwrap(),
    };
    let alt_o = observation_category(model, alt_text)?;
    let probs = recourse_index(model, factual, alt_o, noise)?;
    Ok(RankedDistribution::from_dense(&model.domains.s, &probs))
}
