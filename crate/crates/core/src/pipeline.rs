//! End-to-end fit: clean, quantize both text fields, count.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::Result;
use crate::model::{CbnModel, FitOptions, Quantizers};
use crate::quantizer::{Field, Quantizer, QuantizerConfig};
use crate::text::CleanConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainConfig {
    pub cleaning: CleanConfig,
    pub observation: QuantizerConfig,
    pub solution: QuantizerConfig,
    pub fit: FitOptions,
}

impl TrainConfig {
    /// Same seed for both quantizers and the model metadata.
    pub fn seeded(seed: u64) -> Self {
        let mut cfg = TrainConfig::default();
        cfg.observation.seed = seed;
        cfg.solution.seed = seed;
        cfg.fit.seed = seed;
        cfg
    }
}

pub fn fit_quantizers(train: &Corpus, config: &TrainConfig) -> Result<Quantizers> {
    let clean = &config.cleaning;
    let obs: Vec<_> = train.records.iter().map(|r| clean.clean(&r.observation)).collect();
    let sol: Vec<_> = train.records.iter().map(|r| clean.clean(&r.solution)).collect();
    let (observation, _) = Quantizer::fit(Field::Observation, &obs, &config.observation)?;
    let (solution, _) = Quantizer::fit(Field::Solution, &sol, &config.solution)?;
    Ok(Quantizers {
        cleaning: clean.clone(),
        observation,
        solution,
    })
}

pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<CbnModel> {
    let quantizers = fit_quantizers(corpus, config)?;
    CbnModel::fit(corpus, quantizers, &config.fit)
}
